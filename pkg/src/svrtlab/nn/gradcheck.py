"""Finite-difference gradient checking."""

import numpy as np

from ..errors import GradMismatch


def grad_check(loss_fn, tensors, eps=1e-5, tol=1e-6, max_entries=None, seed=0):
    """Compare analytic gradients with central differences.

    ``loss_fn(tensors) -> (loss, grads)`` must be a pure function of the
    arrays in ``tensors`` (dict name -> float64 array) with ``grads`` keyed
    like ``tensors``. Each tensor's error is the max absolute deviation
    normalized by the largest gradient magnitude in that tensor. The floor
    on that scale keeps tensors with (near) zero true gradient, such as a
    conv bias feeding a batch norm, from amplifying rounding noise.

    ``max_entries`` limits how many coordinates per tensor are probed (a
    seeded subsample), keeping end-to-end checks affordable. Returns the
    per-tensor error report; raises GradMismatch above ``tol``.
    """
    _, grads = loss_fn(tensors)
    # Snapshot every analytic gradient before the first probe: loss_fn calls
    # during probing rerun backward and overwrite shared gradient buffers at
    # perturbed points.
    analytic_all = {
        name: np.array(grads[name], dtype=np.float64).reshape(-1) for name in tensors
    }
    rng = np.random.default_rng(seed)
    report = {}
    for name in sorted(tensors):
        arr = tensors[name]
        flat = arr.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        analytic = analytic_all[name]
        worst = 0.0
        scale = max(float(np.abs(analytic).max()), 1e-6)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn(tensors)[0]
            flat[i] = old - eps
            lm = loss_fn(tensors)[0]
            flat[i] = old
            numeric = (lp - lm) / (2.0 * eps)
            worst = max(worst, abs(float(analytic[i]) - numeric))
        report[name] = worst / scale
    bad = {k: v for k, v in report.items() if v > tol}
    if bad:
        raise GradMismatch(f"gradient mismatch beyond tol={tol}: {bad}", report=report)
    return report
