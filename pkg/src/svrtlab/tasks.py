"""The 23 binary classification rules over placed contour shapes.

Each task pairs a constructive sampler (build a scene that satisfies or
violates the rule) with a pure verifier (decide the label from the shapes
alone). Samplers draw every quantity from an explicit RNG and re-verify their
output, so ``verify(sample_scene(t, y, rng).shapes) == y`` holds by
construction. Negative classes violate exactly one clause of the rule while
keeping the other scene statistics (sizes, counts, placement ranges) matched,
so that no shortcut feature separates the classes.

Decision thresholds live in :data:`MARGINS`; construction bands keep every
generated scene at least three thresholds away from the decision boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import RuleUndefined, SamplingExhausted
from .geometry import Contour, PlacedShape, Transform

FRAME = 128.0
_EDGE = 2.5  # min clearance between any contour point and the frame border

MARGINS = {
    "same_tol": 0.02,        # same_shape tolerance, fraction of shape radius
    "distinct_min": 0.06,    # fresh contours must differ by 3x the tolerance
    "contact": 1.5,          # px, tasks 3/11 contact decision threshold
    "near_border": 6.0,      # px, task 2 near-vs-far decision threshold
    "equidist": 1.5,         # px, tasks 6/12/17 distance-equality threshold
    "collinear": 1.5,        # px, task 14 deviation threshold
    "square": 3.0,           # px, task 10 squareness defect threshold
    "symmetry": 1.5,         # px, tasks 8/16/18/20 mirror tolerance
    "pair_shift": 1.5,       # px, task 13 displacement-vector threshold
}


@dataclass(frozen=True)
class TaskSpec:
    id: int
    cluster: str
    rule_description: str
    shape_count_range: tuple[int, int]
    margin: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scene:
    task_id: int
    label: int
    shapes: tuple
    frame: int = 128

    def tobytes(self) -> bytes:
        """Canonical little-endian serialization, used for determinism checks."""
        head = np.array([self.task_id, self.label, len(self.shapes)], dtype="<u2").tobytes()
        parts = [head]
        for s in self.shapes:
            t = s.transform
            parts.append(s.contour.points.astype("<f8").tobytes())
            parts.append(
                np.array(
                    [t.translation[0], t.translation[1], t.rotation, t.scale, float(t.mirror)],
                    dtype="<f8",
                ).tobytes()
            )
        return b"".join(parts)


class _Budget:
    """Shared placement-attempt counter for one sample_scene call."""

    __slots__ = ("left",)

    def __init__(self, n=10_000):
        self.left = n

    def spend(self, task_id, label):
        self.left -= 1
        if self.left <= 0:
            raise SamplingExhausted(f"task {task_id} label {label}: placement attempts exhausted")


class _Retry(Exception):
    """Internal: abandon the current scene attempt and rebuild."""


# ---------------------------------------------------------------------------
# Placement helpers
# ---------------------------------------------------------------------------

def _rand_center(rng, radius):
    lo = radius + _EDGE
    hi = FRAME - radius - _EDGE
    if hi <= lo:
        raise _Retry
    return float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))


def _in_frame(shape):
    p = shape.points
    return p.min() >= _EDGE - 0.5 and p.max() <= FRAME - _EDGE + 0.5


def _clear_of(shape, others, min_gap):
    return all(geo.border_distance(shape, o) >= min_gap for o in others)


def _place_random(rng, budget, task_id, label, contour, scale, others=(), min_gap=3.0, rotation=0.0, mirror=False, tries=80):
    for _ in range(tries):
        budget.spend(task_id, label)
        cx, cy = _rand_center(rng, scale)
        cand = PlacedShape(contour, Transform((cx, cy), rotation, scale, mirror))
        if _clear_of(cand, others, min_gap):
            return cand
    raise _Retry


def _place_outside_at_gap(rng, budget, task_id, label, ref, contour, scale, band, others=(), min_gap=3.0, rotation=0.0, tries=30):
    """Place ``contour`` outside ``ref`` with border distance inside ``band``.

    Walks outward from the reference centroid along a random direction and
    bisects the (continuous) gap function to the band midpoint. Bisection
    comparisons use a centroid-distance lower bound where it already decides
    the side; only evaluations near the target pay for exact border distances.
    """
    lo, hi = band
    target = 0.5 * (lo + hi)
    rc = ref.centroid
    ref_r = ref.radius

    def gap(t, ux, uy, exact=False):
        cand = PlacedShape(contour, Transform((rc[0] + t * ux, rc[1] + t * uy), rotation, scale, False))
        d = float(np.hypot(t * ux, t * uy))
        if not exact and d - ref_r - scale > target + 1.0:
            return d - ref_r - scale, cand
        if d < ref_r and geo.contains(ref, cand):
            return -1.0, cand
        return geo.border_distance(ref, cand), cand

    t_max = ref_r + scale + hi + 4.0
    for _ in range(tries):
        budget.spend(task_id, label)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        ux, uy = np.cos(ang), np.sin(ang)
        t_est = ref_r + scale + target
        ex, ey = rc[0] + t_est * ux, rc[1] + t_est * uy
        pad = 2.0 * scale + 2.0
        if not (pad <= ex <= FRAME - pad and pad <= ey <= FRAME - pad):
            continue
        t_lo, t_hi = 0.0, t_max
        for _ in range(15):
            mid = 0.5 * (t_lo + t_hi)
            g, cand = gap(mid, ux, uy)
            if g < target:
                t_lo = mid
            else:
                t_hi = mid
        g, cand = gap(t_hi, ux, uy, exact=True)
        if lo <= g <= hi and _in_frame(cand) and _clear_of(cand, others, min_gap):
            return cand
    raise _Retry


def _place_inside_at_depth(rng, budget, task_id, label, ref, contour, scale, band, others=(), min_gap=3.0, tries=30):
    """Place ``contour`` inside ``ref`` with border distance inside ``band``."""
    lo, hi = band
    target = 0.5 * (lo + hi)
    rc = ref.centroid
    ref_r = ref.radius

    def depth(t, ux, uy):
        cand = PlacedShape(contour, Transform((rc[0] + t * ux, rc[1] + t * uy), 0.0, scale, False))
        if t + scale > ref_r:
            return -1.0, cand
        return geo.interior_depth(ref, cand), cand

    budget.spend(task_id, label)
    g0, cand0 = depth(0.0, 1.0, 0.0)
    if g0 < lo:
        raise _Retry
    if g0 <= hi:
        if _clear_of(cand0, others, min_gap):
            return cand0
        if not others:
            raise _Retry
    for _ in range(tries):
        budget.spend(task_id, label)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        ux, uy = np.cos(ang), np.sin(ang)
        t_lo, t_hi = 0.0, ref_r
        for _ in range(15):
            mid = 0.5 * (t_lo + t_hi)
            g, cand = depth(mid, ux, uy)
            if g < target:
                t_hi = mid
            else:
                t_lo = mid
        g, cand = depth(t_lo, ux, uy)
        if lo <= g <= hi and _clear_of(cand, others, min_gap):
            return cand
    raise _Retry


def _unit(contour):
    return PlacedShape(contour, Transform((0.0, 0.0)))


def _fresh_distinct(rng, budget, task_id, label, existing, group, n_anchor, irregularity, tries=40):
    """A new contour measurably different from every contour in ``existing``."""
    for _ in range(tries):
        budget.spend(task_id, label)
        c = geo.sample_contour(rng, n_anchor, irregularity)
        if all(
            geo.shape_distance(_unit(e), _unit(c), group) >= MARGINS["distinct_min"]
            for e in existing
        ):
            return c
    raise _Retry


def identity_partition(shapes, tol=MARGINS["same_tol"]):
    """Group indices of shapes that are copies of each other up to translation."""
    n = len(shapes)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if geo.same_shape(shapes[i], shapes[j], ("translation",), tol):
                parent[find(j)] = find(i)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _partition_sizes(shapes):
    return sorted((len(g) for g in identity_partition(shapes)), reverse=True)


def _scene_irr(rng):
    return float(rng.uniform(0.35, 0.65))


def _scene_anchors(rng):
    return int(rng.integers(5, 10))


def _big_contour(rng, budget, task_id, label):
    budget.spend(task_id, label)
    return geo.sample_contour(rng, int(rng.integers(8, 11)), float(rng.uniform(0.12, 0.28)))


# ---------------------------------------------------------------------------
# Identity-class tasks (copies vs fresh contours)
# ---------------------------------------------------------------------------

def _sample_copies_scene(rng, budget, task_id, label, group_sizes_pos, group_sizes_neg, scale_range):
    """Scenes whose label is decided purely by the identity partition."""
    sizes = group_sizes_pos if label == 1 else group_sizes_neg
    n_anchor = _scene_anchors(rng)
    irr = _scene_irr(rng)
    scale = float(rng.uniform(*scale_range))
    contours = []
    for _ in sizes:
        contours.append(
            _fresh_distinct(rng, budget, task_id, label, contours, ("translation",), n_anchor, irr)
        )
    shapes = []
    for c, k in zip(contours, sizes):
        for _ in range(k):
            shapes.append(_place_random(rng, budget, task_id, label, c, scale, shapes))
    order = rng.permutation(len(shapes))
    return [shapes[i] for i in order]


def _sample_t1(rng, budget, label):
    return _sample_copies_scene(rng, budget, 1, label, [2], [1, 1], (10.0, 15.0))


def _verify_t1(shapes):
    return int(geo.same_shape(shapes[0], shapes[1], ("translation",), MARGINS["same_tol"]))


def _sample_t5(rng, budget, label):
    return _sample_copies_scene(rng, budget, 5, label, [2, 2], [2, 1, 1], (9.0, 12.0))


def _verify_t5(shapes):
    return int(_partition_sizes(shapes) == [2, 2])


def _sample_t7(rng, budget, label):
    return _sample_copies_scene(rng, budget, 7, label, [2, 2, 2], [3, 3], (7.5, 10.0))


def _verify_t7(shapes):
    return int(_partition_sizes(shapes) == [2, 2, 2])


def _sample_t15(rng, budget, label):
    return _sample_copies_scene(rng, budget, 15, label, [4], [3, 1], (8.0, 11.0))


def _verify_t15(shapes):
    return int(_partition_sizes(shapes) == [4])


def _sample_t22(rng, budget, label):
    return _sample_copies_scene(rng, budget, 22, label, [3], [2, 1], (9.0, 13.0))


def _verify_t22(shapes):
    return int(_partition_sizes(shapes) == [3])


# ---------------------------------------------------------------------------
# Pairwise-copy tasks with a transform group (1 handled above; 19, 20, 21, 16)
# ---------------------------------------------------------------------------

def _sample_transformed_copy(rng, budget, task_id, label, base_scale, make_transform, group):
    """Two shapes; label 1 when the second is a copy under ``group``."""
    n_anchor = _scene_anchors(rng)
    irr = _scene_irr(rng)
    c1 = geo.sample_contour(rng, n_anchor, irr)
    s1 = float(rng.uniform(*base_scale))
    rot2, s2, mirror2 = make_transform(rng, s1)
    a = _place_random(rng, budget, task_id, label, c1, s1, ())
    if label == 1:
        c2 = c1
    else:
        c2 = _fresh_distinct(rng, budget, task_id, label, [c1], group, n_anchor, irr)
    for _ in range(60):
        budget.spend(task_id, label)
        cx, cy = _rand_center(rng, s2)
        b = PlacedShape(c2, Transform((cx, cy), rot2, s2, mirror2))
        if _clear_of(b, [a], 3.0):
            return [a, b]
    raise _Retry


def _sample_t19(rng, budget, label):
    def mk(rng, s1):
        return 0.0, s1 * float(rng.uniform(1.6, 2.4)), False

    return _sample_transformed_copy(rng, budget, 19, label, (8.0, 11.0), mk, ("translation", "scale"))


def _verify_t19(shapes):
    return int(geo.same_shape(shapes[0], shapes[1], ("translation", "scale"), MARGINS["same_tol"]))


def _sample_t21(rng, budget, label):
    def mk(rng, s1):
        k = float(np.exp(rng.uniform(np.log(0.65), np.log(1.55))))
        return float(rng.uniform(0.0, 2.0 * np.pi)), s1 * k, False

    return _sample_transformed_copy(
        rng, budget, 21, label, (9.0, 13.0), mk, ("translation", "rotation", "scale")
    )


def _verify_t21(shapes):
    return int(
        geo.same_shape(shapes[0], shapes[1], ("translation", "rotation", "scale"), MARGINS["same_tol"])
    )


def _perp_bisector_mirror_error(a, b):
    """Pointwise mismatch (fraction of radius) between ``b`` and the reflection
    of ``a`` across the perpendicular bisector of the two centroids."""
    ca, cb = a.centroid, b.centroid
    d = cb - ca
    nrm = float(np.hypot(d[0], d[1]))
    if nrm < 1e-9:
        return np.inf
    origin = 0.5 * (ca + cb)
    direction = np.array([-d[1] / nrm, d[0] / nrm])
    err = geo._mirror_pair_error(a.points, b.points, origin, direction)
    return err / max(a.radius, 1e-9)


def _sample_t20(rng, budget, label):
    n_anchor = _scene_anchors(rng)
    irr = _scene_irr(rng)
    c1 = geo.sample_contour(rng, n_anchor, irr)
    scale = float(rng.uniform(9.0, 14.0))
    theta = float(rng.uniform(0.0, 2.0 * np.pi))
    a = _place_random(rng, budget, 20, label, c1, scale, (), rotation=theta)
    for _ in range(60):
        budget.spend(20, label)
        cx, cy = _rand_center(rng, scale)
        d = np.array([cx, cy]) - a.centroid
        nrm = float(np.hypot(d[0], d[1]))
        if nrm < 2.0 * scale + 3.0:
            continue
        phi = float(np.arctan2(d[1], d[0])) + 0.5 * np.pi  # axis direction angle
        rot_b = np.pi + 2.0 * phi - theta
        if label == 1:
            c2 = c1
        else:
            c2 = _fresh_distinct(
                rng, budget, 20, label, [c1], ("translation", "rotation", "mirror"), n_anchor, irr
            )
        b = PlacedShape(c2, Transform((cx, cy), rot_b, scale, True))
        if not _clear_of(b, [a], 3.0):
            continue
        err = _perp_bisector_mirror_error(a, b)
        if label == 1 and err <= 0.5 * MARGINS["same_tol"]:
            return [a, b]
        if label == 0 and err >= MARGINS["distinct_min"]:
            return [a, b]
    raise _Retry


def _verify_t20(shapes):
    return int(_perp_bisector_mirror_error(shapes[0], shapes[1]) <= MARGINS["same_tol"])


def _vertical_mirror_error(a, b):
    """Mismatch (fraction of radius) between ``b`` and the reflection of ``a``
    about the vertical line through the midpoint of the two centroids."""
    mid_x = 0.5 * (a.centroid[0] + b.centroid[0])
    origin = np.array([mid_x, 0.0])
    direction = np.array([0.0, 1.0])
    err = geo._mirror_pair_error(a.points, b.points, origin, direction)
    return err / max(a.radius, 1e-9)


def _sample_t16(rng, budget, label):
    n_anchor = _scene_anchors(rng)
    irr = _scene_irr(rng)
    c1 = geo.sample_contour(rng, n_anchor, irr)
    for _ in range(60):
        budget.spend(16, label)
        scale = float(rng.uniform(9.0, 14.0))
        x0 = 64.0 + float(rng.uniform(-8.0, 8.0))
        off_max = min(x0, FRAME - x0) - scale - _EDGE
        if off_max < scale + 2.0:
            continue
        off = float(rng.uniform(scale + 2.0, off_max))
        y = float(rng.uniform(scale + _EDGE, FRAME - scale - _EDGE))
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        a = PlacedShape(c1, Transform((x0 - off, y), theta, scale, False))
        if label == 1:
            c2 = c1
        else:
            c2 = _fresh_distinct(rng, budget, 16, label, [c1], ("translation", "mirror"), n_anchor, irr)
        b = PlacedShape(c2, Transform((x0 + off, y), -theta, scale, True))
        if not (_in_frame(a) and _in_frame(b)) or geo.border_distance(a, b) < 3.0:
            continue
        err = _vertical_mirror_error(a, b)
        if label == 1 and err <= 0.5 * MARGINS["same_tol"]:
            return [a, b]
        if label == 0 and err >= MARGINS["distinct_min"]:
            return [a, b]
    raise _Retry


def _verify_t16(shapes):
    a, b = shapes
    same_y = abs(a.centroid[1] - b.centroid[1]) <= MARGINS["symmetry"]
    return int(same_y and _vertical_mirror_error(a, b) <= MARGINS["same_tol"])


# ---------------------------------------------------------------------------
# Contact and containment tasks (2, 3, 4, 11, 23)
# ---------------------------------------------------------------------------

_CONTACT_POS = (0.2, 1.2)
_CONTACT_NEG = (6.0, 20.0)


def _sample_contact(rng, budget, task_id, label, scale_a, scale_b):
    c1 = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    c2 = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    a = _place_random(rng, budget, task_id, label, c1, scale_a, ())
    band = _CONTACT_POS if label == 1 else _CONTACT_NEG
    b = _place_outside_at_gap(rng, budget, task_id, label, a, c2, scale_b, band, min_gap=0.0)
    return [a, b]


def _sample_t3(rng, budget, label):
    s1 = float(rng.uniform(12.0, 17.0))
    s2 = float(np.clip(s1 * rng.uniform(0.85, 1.18), 10.0, 19.0))
    return _sample_contact(rng, budget, 3, label, s1, s2)


def _sample_t11(rng, budget, label):
    big = float(rng.uniform(24.0, 32.0))
    small = float(rng.uniform(8.0, min(12.0, big / 2.2)))
    return _sample_contact(rng, budget, 11, label, big, small)


def _verify_contact(shapes):
    return int(geo.border_distance(shapes[0], shapes[1]) <= MARGINS["contact"])


def _sample_t4(rng, budget, label):
    big = _big_contour(rng, budget, 4, label)
    small_c = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    s_big = float(rng.uniform(40.0, 50.0))
    s_small = float(rng.uniform(8.0, 12.0))
    a = _place_random(rng, budget, 4, label, big, s_big, ())
    if label == 1:
        b = _place_inside_at_depth(rng, budget, 4, label, a, small_c, s_small, (3.0, 14.0))
    else:
        b = _place_outside_at_gap(rng, budget, 4, label, a, small_c, s_small, (4.0, 28.0), min_gap=0.0)
    return [a, b]


def _verify_t4(shapes):
    a, b = shapes
    if a.radius < b.radius:
        a, b = b, a
    return int(geo.contains(a, b))


_NEAR_POS = (2.5, 5.5)
_FAR_POS = (19.0, 23.0)


def _sample_t2(rng, budget, label):
    for _ in range(20):
        big = _big_contour(rng, budget, 2, label)
        small_c = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
        s_big = float(rng.uniform(52.0, 58.0))
        s_small = float(rng.uniform(7.0, 9.0))
        a = _place_random(rng, budget, 2, label, big, s_big, ())
        band = _NEAR_POS if label == 1 else _FAR_POS
        try:
            b = _place_inside_at_depth(rng, budget, 2, label, a, small_c, s_small, band, tries=12)
        except _Retry:
            continue
        return [a, b]
    raise _Retry


def _verify_t2(shapes):
    a, b = shapes
    if a.radius < b.radius:
        a, b = b, a
    if not geo.contains(a, b):
        return 0
    return int(geo.border_distance(a, b) <= MARGINS["near_border"])


def _sample_t23(rng, budget, label):
    big = _big_contour(rng, budget, 23, label)
    s_big = float(rng.uniform(38.0, 46.0))
    a = _place_random(rng, budget, 23, label, big, s_big, ())
    smalls = []
    if label == 1:
        inside_flags = [True, False]
    else:
        both_in = bool(rng.integers(0, 2))
        inside_flags = [both_in, both_in]
    for flag in inside_flags:
        c = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
        s = float(rng.uniform(7.0, 10.0))
        if flag:
            b = _place_inside_at_depth(rng, budget, 23, label, a, c, s, (3.0, 13.0), others=smalls)
        else:
            b = _place_outside_at_gap(rng, budget, 23, label, a, c, s, (4.0, 24.0), others=smalls)
        smalls.append(b)
    shapes = [a] + smalls
    order = rng.permutation(3)
    return [shapes[i] for i in order]


def _verify_t23(shapes):
    big = max(shapes, key=lambda s: s.radius)
    inside = sum(geo.contains(big, s) for s in shapes if s is not big)
    return int(inside == 1)


# ---------------------------------------------------------------------------
# Distance and arrangement tasks (6, 9, 10, 12, 13, 14, 17)
# ---------------------------------------------------------------------------

def _sample_t6(rng, budget, label):
    n_anchor = _scene_anchors(rng)
    irr = _scene_irr(rng)
    scale = float(rng.uniform(8.0, 11.0))
    c1 = geo.sample_contour(rng, n_anchor, irr)
    c2 = _fresh_distinct(rng, budget, 6, label, [c1], ("translation",), n_anchor, irr)
    if label == 1:
        length = float(rng.uniform(2.0 * scale + 6.0, 46.0))
        lengths = [length, length]
    else:
        l1 = float(rng.uniform(2.0 * scale + 6.0, 34.0))
        l2 = l1 + float(rng.uniform(9.0, 18.0))
        lengths = [l1, l2]
        rng.shuffle(lengths)
    for _ in range(60):
        budget.spend(6, label)
        shapes = []
        ok = True
        for c, length in zip((c1, c2), lengths):
            ang = rng.uniform(0.0, 2.0 * np.pi)
            dx, dy = length * np.cos(ang), length * np.sin(ang)
            lo = scale + _EDGE
            hi = FRAME - scale - _EDGE
            x1 = rng.uniform(max(lo, lo - dx), min(hi, hi - dx))
            y1 = rng.uniform(max(lo, lo - dy), min(hi, hi - dy))
            p1 = PlacedShape(c, Transform((float(x1), float(y1)), 0.0, scale, False))
            p2 = PlacedShape(c, Transform((float(x1 + dx), float(y1 + dy)), 0.0, scale, False))
            if not (_in_frame(p1) and _in_frame(p2)) or not _clear_of(p1, shapes + [p2], 3.0) or not _clear_of(p2, shapes, 3.0):
                ok = False
                break
            shapes.extend([p1, p2])
        if ok:
            order = rng.permutation(4)
            return [shapes[i] for i in order]
    raise _Retry


def _pair_lengths(shapes):
    groups = identity_partition(shapes)
    if sorted(len(g) for g in groups) != [2, 2]:
        return None
    out = []
    for g in groups:
        ca = shapes[g[0]].centroid
        cb = shapes[g[1]].centroid
        out.append(float(np.hypot(*(ca - cb))))
    return out


def _verify_t6(shapes):
    lengths = _pair_lengths(shapes)
    if lengths is None:
        return 0
    return int(abs(lengths[0] - lengths[1]) <= MARGINS["equidist"])


def _sample_t13(rng, budget, label):
    n_anchor = _scene_anchors(rng)
    irr = _scene_irr(rng)
    scale = float(rng.uniform(8.0, 11.0))
    c1 = geo.sample_contour(rng, n_anchor, irr)
    c2 = _fresh_distinct(rng, budget, 13, label, [c1], ("translation",), n_anchor, irr)
    for _ in range(80):
        budget.spend(13, label)
        length = float(rng.uniform(2.0 * scale + 6.0, 44.0))
        ang = rng.uniform(0.0, 2.0 * np.pi)
        delta = np.array([length * np.cos(ang), length * np.sin(ang)])
        if label == 1:
            delta2 = delta.copy()
        else:
            for _ in range(40):
                ang2 = rng.uniform(0.0, 2.0 * np.pi)
                len2 = float(rng.uniform(2.0 * scale + 6.0, 44.0))
                delta2 = np.array([len2 * np.cos(ang2), len2 * np.sin(ang2)])
                m = min(np.hypot(*(delta2 - delta)), np.hypot(*(delta2 + delta)))
                if m >= 8.0:
                    break
            else:
                continue
        shapes = []
        ok = True
        for c, d in ((c1, delta), (c2, delta2)):
            lo = scale + _EDGE
            hi = FRAME - scale - _EDGE
            x1 = rng.uniform(max(lo, lo - d[0]), min(hi, hi - d[0]))
            y1 = rng.uniform(max(lo, lo - d[1]), min(hi, hi - d[1]))
            p1 = PlacedShape(c, Transform((float(x1), float(y1)), 0.0, scale, False))
            p2 = PlacedShape(c, Transform((float(x1 + d[0]), float(y1 + d[1])), 0.0, scale, False))
            if not (_in_frame(p1) and _in_frame(p2)) or not _clear_of(p1, shapes + [p2], 3.0) or not _clear_of(p2, shapes, 3.0):
                ok = False
                break
            shapes.extend([p1, p2])
        if ok:
            order = rng.permutation(4)
            return [shapes[i] for i in order]
    raise _Retry


def _verify_t13(shapes):
    groups = identity_partition(shapes)
    if sorted(len(g) for g in groups) != [2, 2]:
        return 0
    deltas = []
    for g in groups:
        deltas.append(shapes[g[1]].centroid - shapes[g[0]].centroid)
    d1, d2 = deltas
    m = min(float(np.hypot(*(d1 - d2))), float(np.hypot(*(d1 + d2))))
    return int(m <= MARGINS["pair_shift"])


def _sample_t17(rng, budget, label):
    n_anchor = _scene_anchors(rng)
    irr = _scene_irr(rng)
    scale = float(rng.uniform(7.0, 9.5))
    c_trip = geo.sample_contour(rng, n_anchor, irr)
    c_odd = _fresh_distinct(rng, budget, 17, label, [c_trip], ("translation",), n_anchor, irr)
    for _ in range(60):
        budget.spend(17, label)
        if label == 1:
            radius = float(rng.uniform(2.0 * scale + 5.0, 38.0))
            radii = [radius] * 3
        else:
            r1 = float(rng.uniform(2.0 * scale + 5.0, 27.0))
            r3 = r1 + float(rng.uniform(9.0, 14.0))
            r2 = float(rng.uniform(r1, r3))
            radii = [r1, r2, r3]
            rng.shuffle(radii)
        angles = rng.uniform(0.0, 2.0 * np.pi, size=3)
        rel = [np.zeros(2)] + [
            r * np.array([np.cos(a), np.sin(a)]) for r, a in zip(radii, angles)
        ]
        centers = _fit_to_frame(rng, rel, scale)
        if centers is None:
            continue
        contours = [c_odd] + [c_trip] * 3
        shapes = []
        ok = True
        for c, ctr in zip(contours, centers):
            cand = PlacedShape(c, Transform((float(ctr[0]), float(ctr[1])), 0.0, scale, False))
            if not _clear_of(cand, shapes, 3.0):
                ok = False
                break
            shapes.append(cand)
        if ok:
            order = rng.permutation(4)
            return [shapes[i] for i in order]
    raise _Retry


def _fit_to_frame(rng, rel_centers, max_radius):
    """Translate a relative configuration to a uniform spot inside the frame."""
    pts = np.asarray(rel_centers, dtype=np.float64)
    lo = pts.min(axis=0) - max_radius - _EDGE
    hi = pts.max(axis=0) + max_radius + _EDGE
    room = FRAME - (hi - lo)
    if room[0] <= 0.0 or room[1] <= 0.0:
        return None
    shift = np.array([rng.uniform(0.0, room[0]), rng.uniform(0.0, room[1])]) - lo
    return [p + shift for p in pts]


def _verify_t17(shapes):
    groups = identity_partition(shapes)
    if sorted((len(g) for g in groups), reverse=True) != [3, 1]:
        return 0
    trip, odd = (groups[0], groups[1]) if len(groups[0]) == 3 else (groups[1], groups[0])
    oc = shapes[odd[0]].centroid
    dists = [float(np.hypot(*(shapes[i].centroid - oc))) for i in trip]
    return int(max(dists) - min(dists) <= MARGINS["equidist"])


def _sample_t9(rng, budget, label):
    big_c = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    s_big = float(rng.uniform(24.0, 32.0))
    s1 = float(rng.uniform(9.0, min(12.0, s_big / 2.0)))
    s2 = float(rng.uniform(9.0, min(12.0, s_big / 2.0)))
    c1 = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    c2 = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    for _ in range(60):
        budget.spend(9, label)
        p = np.array(_rand_center(rng, s1))
        q = np.array(_rand_center(rng, s2))
        sep = float(np.hypot(*(q - p)))
        if not 55.0 <= sep <= 85.0:
            continue
        u = (q - p) / sep
        n = np.array([-u[1], u[0]])
        if label == 1:
            t = float(rng.uniform(0.25, 0.75))
            perp = float(rng.uniform(-0.3, 0.3)) * sep
        elif rng.integers(0, 2):
            ext = float(rng.uniform(0.1, 0.3))
            t = -ext if rng.integers(0, 2) else 1.0 + ext
            perp = float(rng.uniform(-0.3, 0.3)) * sep
        else:
            t = float(rng.uniform(0.25, 0.75))
            perp = float(rng.choice([-1.0, 1.0])) * float(rng.uniform(0.65, 0.85)) * sep
        center = p + t * sep * u + perp * n
        big = PlacedShape(big_c, Transform((float(center[0]), float(center[1])), 0.0, s_big, False))
        sa = PlacedShape(c1, Transform((float(p[0]), float(p[1])), 0.0, s1, False))
        sb = PlacedShape(c2, Transform((float(q[0]), float(q[1])), 0.0, s2, False))
        if not _in_frame(big) or not _clear_of(big, [sa, sb], 3.0) or geo.border_distance(sa, sb) < 3.0:
            continue
        shapes = [big, sa, sb]
        order = rng.permutation(3)
        return [shapes[i] for i in order]
    raise _Retry


def _verify_t9(shapes):
    by_r = sorted(shapes, key=lambda s: s.radius)
    small1, small2, big = by_r
    p, q, b = small1.centroid, small2.centroid, big.centroid
    pq = q - p
    sep2 = float(pq[0] ** 2 + pq[1] ** 2)
    if sep2 < 1e-12:
        return 0
    t = float(((b - p) @ pq) / sep2)
    sep = float(np.sqrt(sep2))
    perp = abs(float((b - p)[0] * pq[1] - (b - p)[1] * pq[0])) / sep
    return int(0.1 <= t <= 0.9 and perp <= 0.5 * sep)


def _sample_t12(rng, budget, label):
    big = _big_contour(rng, budget, 12, label)
    s_big = float(rng.uniform(26.0, 34.0))
    a = _place_random(rng, budget, 12, label, big, s_big, ())
    if label == 1:
        d0 = float(rng.uniform(3.0, 10.0))
        bands = [(d0 - 0.25, d0 + 0.25), (d0 - 0.25, d0 + 0.25)]
    else:
        d1 = float(rng.uniform(2.5, 6.0))
        d2 = d1 + float(rng.uniform(9.0, 13.0))
        bands = [(d1 - 0.25, d1 + 0.25), (d2 - 0.25, d2 + 0.25)]
        rng.shuffle(bands)
    smalls = []
    for band in bands:
        s = float(rng.uniform(9.0, min(13.0, s_big / 2.0)))
        c = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
        b = _place_outside_at_gap(rng, budget, 12, label, a, c, s, band, others=smalls)
        smalls.append(b)
    shapes = [a] + smalls
    order = rng.permutation(3)
    return [shapes[i] for i in order]


def _verify_t12(shapes):
    big = max(shapes, key=lambda s: s.radius)
    ds = [geo.border_distance(big, s) for s in shapes if s is not big]
    return int(abs(ds[0] - ds[1]) <= MARGINS["equidist"])


def _collinearity_deviation(c1, c2, c3):
    """Distance from the vertex opposite the longest side to that side."""
    pts = [np.asarray(c1), np.asarray(c2), np.asarray(c3)]
    sides = []
    for i in range(3):
        a = pts[(i + 1) % 3]
        b = pts[(i + 2) % 3]
        sides.append((float(np.hypot(*(a - b))), i))
    longest, vi = max(sides)
    if longest < 1e-9:
        return 0.0
    a = pts[(vi + 1) % 3]
    b = pts[(vi + 2) % 3]
    v = pts[vi]
    area2 = abs(float((b - a)[0] * (v - a)[1] - (b - a)[1] * (v - a)[0]))
    return area2 / longest


def _sample_t14(rng, budget, label):
    contours = []
    scales = []
    for _ in range(3):
        contours.append(geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng)))
        scales.append(float(rng.uniform(9.0, 13.0)))
    for _ in range(60):
        budget.spend(14, label)
        ang = rng.uniform(0.0, np.pi)
        u = np.array([np.cos(ang), np.sin(ang)])
        n = np.array([-u[1], u[0]])
        gaps = [
            scales[0] + scales[1] + float(rng.uniform(4.0, 14.0)),
            scales[1] + scales[2] + float(rng.uniform(4.0, 14.0)),
        ]
        t_vals = [0.0, gaps[0], gaps[0] + gaps[1]]
        base = np.array(_rand_center(rng, max(scales)))
        offset = 0.0 if label == 1 else float(rng.choice([-1.0, 1.0])) * float(rng.uniform(10.0, 22.0))
        centers = [base + t * u + (offset * n if k == 1 else 0.0) for k, t in enumerate(t_vals)]
        shapes = []
        ok = True
        for c, s, ctr in zip(contours, scales, centers):
            cand = PlacedShape(c, Transform((float(ctr[0]), float(ctr[1])), 0.0, s, False))
            if not _in_frame(cand) or not _clear_of(cand, shapes, 3.0):
                ok = False
                break
            shapes.append(cand)
        if not ok:
            continue
        dev = _collinearity_deviation(*(s.centroid for s in shapes))
        if label == 1 and dev > 0.5:
            continue
        if label == 0 and dev < 8.0:
            continue
        order = rng.permutation(3)
        return [shapes[i] for i in order]
    raise _Retry


def _verify_t14(shapes):
    dev = _collinearity_deviation(*(s.centroid for s in shapes))
    return int(dev <= MARGINS["collinear"])


def _squareness_defect(centroids):
    """Max deviation of the six pairwise distances from the best-fit square
    pattern (four sides s, two diagonals s*sqrt(2))."""
    c = np.asarray(centroids, dtype=np.float64)
    d = []
    for i in range(4):
        for j in range(i + 1, 4):
            d.append(float(np.hypot(*(c[i] - c[j]))))
    d.sort()
    side = float(np.mean(d[:4]))
    devs = [abs(x - side) for x in d[:4]] + [abs(x / np.sqrt(2.0) - side) for x in d[4:]]
    return max(devs)


def _sample_t10(rng, budget, label):
    c = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    scale = float(rng.uniform(7.0, 9.5))
    for _ in range(60):
        budget.spend(10, label)
        h = float(rng.uniform(16.0, 26.0))
        lo = h + scale + _EDGE + 1.0
        hi = FRAME - lo
        if hi <= lo:
            continue
        cx, cy = float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))
        phi = float(rng.uniform(0.0, 2.0 * np.pi))
        corners = [
            np.array([cx + h * np.cos(phi + k * np.pi / 2.0), cy + h * np.sin(phi + k * np.pi / 2.0)])
            for k in range(4)
        ]
        if label == 0:
            for _ in range(40):
                budget.spend(10, label)
                cand = [
                    corner + rng.uniform(6.0, 15.0) * _unit_vec(rng)
                    for corner in corners
                ]
                if 12.0 <= _squareness_defect(cand) <= 34.0:
                    corners = cand
                    break
            else:
                continue
        shapes = []
        ok = True
        for corner in corners:
            cand = PlacedShape(c, Transform((float(corner[0]), float(corner[1])), 0.0, scale, False))
            if not _in_frame(cand) or not _clear_of(cand, shapes, 3.0):
                ok = False
                break
            shapes.append(cand)
        if not ok:
            continue
        order = rng.permutation(4)
        return [shapes[i] for i in order]
    raise _Retry


def _unit_vec(rng):
    ang = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(ang), np.sin(ang)])


def _verify_t10(shapes):
    defect = _squareness_defect([s.centroid for s in shapes])
    return int(defect <= MARGINS["square"])


# ---------------------------------------------------------------------------
# Mirror-arrangement tasks (8, 18)
# ---------------------------------------------------------------------------

def _mirror_pair(contour, axis_x, y, offset, scale, theta):
    left = PlacedShape(contour, Transform((axis_x - offset, y), theta, scale, False))
    right = PlacedShape(contour, Transform((axis_x + offset, y), -theta, scale, True))
    return left, right


def _sample_t8(rng, budget, label):
    c1 = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    c2 = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    for _ in range(60):
        budget.spend(8, label)
        s1 = float(rng.uniform(8.0, 12.0))
        s2 = float(rng.uniform(8.0, 12.0))
        x0 = float(rng.uniform(56.0, 72.0))
        off_cap = min(x0, FRAME - x0) - max(s1, s2) - _EDGE
        if off_cap < max(s1, s2) + 5.0:
            continue
        o1 = float(rng.uniform(max(s1 + 4.0, 12.0), off_cap))
        o2 = float(rng.uniform(max(s2 + 4.0, 12.0), off_cap))
        y1 = float(rng.uniform(s1 + _EDGE, FRAME - s1 - _EDGE))
        y2 = float(rng.uniform(s2 + _EDGE, FRAME - s2 - _EDGE))
        th1 = float(rng.uniform(0.0, 2.0 * np.pi))
        th2 = float(rng.uniform(0.0, 2.0 * np.pi))
        l1, r1 = _mirror_pair(c1, x0, y1, o1, s1, th1)
        l2, r2 = _mirror_pair(c2, x0, y2, o2, s2, th2)
        shapes = [l1, r1, l2, r2]
        if label == 0:
            placed = []
            try:
                for s in shapes:
                    placed.append(
                        _place_random(
                            rng, budget, 8, label, s.contour, s.transform.scale, placed,
                            rotation=s.transform.rotation, mirror=s.transform.mirror,
                        )
                    )
            except _Retry:
                continue
            shapes = placed
            if geo.symmetric_arrangement(shapes, 3.0 * MARGINS["symmetry"]):
                continue
        else:
            if not all(_in_frame(s) for s in shapes):
                continue
            ok = all(
                geo.border_distance(shapes[i], shapes[j]) >= 3.0
                for i in range(4)
                for j in range(i + 1, 4)
            )
            if not ok:
                continue
        order = rng.permutation(4)
        return [shapes[i] for i in order]
    raise _Retry


def _verify_symmetric(shapes):
    return int(geo.symmetric_arrangement(shapes, MARGINS["symmetry"]))


def _sample_t18(rng, budget, label):
    c_pair = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    c_third = geo.sample_contour(rng, _scene_anchors(rng), _scene_irr(rng))
    for _ in range(60):
        budget.spend(18, label)
        s_pair = float(rng.uniform(8.0, 12.0))
        s_third = float(rng.uniform(8.0, 12.0))
        phi = float(rng.uniform(0.0, np.pi))
        u = np.array([np.cos(phi), np.sin(phi)])
        n = np.array([-u[1], u[0]])
        base = np.array([float(rng.uniform(40.0, 88.0)), float(rng.uniform(40.0, 88.0))])
        along = float(rng.uniform(18.0, 40.0))
        off = float(rng.uniform(s_pair + 4.0, 30.0))
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        pa = base + off * n
        pb = base - off * n
        left = PlacedShape(c_pair, Transform((float(pa[0]), float(pa[1])), theta, s_pair, False))
        right = PlacedShape(
            c_pair,
            Transform((float(pb[0]), float(pb[1])), np.pi + 2.0 * phi - theta, s_pair, True),
        )
        third_base = base + float(rng.choice([-1.0, 1.0])) * along * u
        third_off = 0.0 if label == 1 else float(rng.choice([-1.0, 1.0])) * float(rng.uniform(9.0, 20.0))
        tp = third_base + third_off * n
        third = PlacedShape(c_third, Transform((float(tp[0]), float(tp[1])), 0.0, s_third, False))
        shapes = [left, right, third]
        if not all(_in_frame(s) for s in shapes):
            continue
        if not all(
            geo.border_distance(shapes[i], shapes[j]) >= 3.0 for i in range(3) for j in range(i + 1, 3)
        ):
            continue
        if label == 0 and geo.symmetric_arrangement(shapes, 3.0 * MARGINS["symmetry"]):
            continue
        order = rng.permutation(3)
        return [shapes[i] for i in order]
    raise _Retry


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

def _spec(tid, cluster, desc, count, **margin):
    return TaskSpec(tid, cluster, desc, count, dict(margin))


TASKS = {
    s.id: s
    for s in [
        _spec(1, "SD2", "two shapes identical up to translation, or not", (2, 2),
              group=("translation",), same_tol=MARGINS["same_tol"]),
        _spec(2, "SR2", "small shape inside a large one, near its border or deep inside", (2, 2),
              near_border=MARGINS["near_border"], near_band=_NEAR_POS, far_band=_FAR_POS),
        _spec(3, "SR2", "two similar-size shapes in close contact, or clearly apart", (2, 2),
              contact=MARGINS["contact"], contact_band=_CONTACT_POS, apart_band=_CONTACT_NEG),
        _spec(4, "SR2", "one shape inside the other, or outside it", (2, 2)),
        _spec(5, "SD2", "four shapes forming two identical pairs, or one pair plus two odd shapes", (4, 4),
              group=("translation",)),
        _spec(6, "SD2", "two identical pairs with equal within-pair distances, or unequal", (4, 4),
              equidist=MARGINS["equidist"]),
        _spec(7, "SD1", "six shapes forming three identical pairs, or two identical triplets", (6, 6),
              group=("translation",)),
        _spec(8, "SR2", "four shapes arranged mirror-symmetrically about a vertical axis, or scrambled", (4, 4),
              symmetry=MARGINS["symmetry"]),
        _spec(9, "SR1", "the larger shape lies between the two smaller ones, or outside their span", (3, 3)),
        _spec(10, "SR2", "four identical shapes at the corners of a square, or a distorted quadrilateral", (4, 4),
              square=MARGINS["square"]),
        _spec(11, "SR2", "a large and a small shape in close contact, or clearly apart", (2, 2),
              contact=MARGINS["contact"], contact_band=_CONTACT_POS, apart_band=_CONTACT_NEG),
        _spec(12, "SR1", "two small shapes equally close to a larger one, or at clearly different gaps", (3, 3),
              equidist=MARGINS["equidist"]),
        _spec(13, "SD2", "two identical pairs with matching displacement vectors, or mismatched", (4, 4),
              pair_shift=MARGINS["pair_shift"]),
        _spec(14, "SR2", "three shape centers aligned in a row, or not", (3, 3),
              collinear=MARGINS["collinear"]),
        _spec(15, "SR1", "four identical shapes, or three identical plus one odd", (4, 4),
              group=("translation",)),
        _spec(16, "SD2", "two shapes mirror-identical about a vertical axis at equal height, or unrelated", (2, 2),
              symmetry=MARGINS["symmetry"], same_tol=MARGINS["same_tol"]),
        _spec(17, "SD2", "three identical shapes equidistant from the odd one, or at varied distances", (4, 4),
              equidist=MARGINS["equidist"]),
        _spec(18, "SR2", "a mirror pair plus a shape on their axis, or the third shape off-axis", (3, 3),
              symmetry=MARGINS["symmetry"]),
        _spec(19, "SD2", "one shape is a scaled copy of the other, or an unrelated shape", (2, 2),
              group=("translation", "scale"), same_tol=MARGINS["same_tol"]),
        _spec(20, "SD2", "second shape mirrors the first across the perpendicular bisector, or differs", (2, 2),
              group=("translation", "mirror"), same_tol=MARGINS["same_tol"]),
        _spec(21, "SD1", "one shape is a scaled, rotated, translated copy of the other, or unrelated", (2, 2),
              group=("translation", "rotation", "scale"), same_tol=MARGINS["same_tol"]),
        _spec(22, "SD2", "three identical shapes, or two identical plus one odd", (3, 3),
              group=("translation",)),
        _spec(23, "SR1", "two small shapes with exactly one inside the large one, or both on the same side", (3, 3)),
    ]
}

CLUSTERS = {
    "SD1": (7, 21),
    "SD2": (1, 5, 6, 13, 16, 17, 19, 20, 22),
    "SR1": (9, 12, 15, 23),
    "SR2": (2, 3, 4, 8, 10, 11, 14, 18),
}

_SAMPLERS = {
    1: _sample_t1, 2: _sample_t2, 3: _sample_t3, 4: _sample_t4, 5: _sample_t5,
    6: _sample_t6, 7: _sample_t7, 8: _sample_t8, 9: _sample_t9, 10: _sample_t10,
    11: _sample_t11, 12: _sample_t12, 13: _sample_t13, 14: _sample_t14,
    15: _sample_t15, 16: _sample_t16, 17: _sample_t17, 18: _sample_t18,
    19: _sample_t19, 20: _sample_t20, 21: _sample_t21, 22: _sample_t22,
    23: _sample_t23,
}

_VERIFIERS = {
    1: _verify_t1, 2: _verify_t2, 3: _verify_contact, 4: _verify_t4, 5: _verify_t5,
    6: _verify_t6, 7: _verify_t7, 8: _verify_symmetric, 9: _verify_t9, 10: _verify_t10,
    11: _verify_contact, 12: _verify_t12, 13: _verify_t13, 14: _verify_t14,
    15: _verify_t15, 16: _verify_t16, 17: _verify_t17, 18: _verify_symmetric,
    19: _verify_t19, 20: _verify_t20, 21: _verify_t21, 22: _verify_t22,
    23: _verify_t23,
}


def class_margin(task_id: int) -> dict:
    """Threshold table the task's verifier uses, for documentation and tests."""
    if task_id not in TASKS:
        raise RuleUndefined(f"no task {task_id}")
    spec = TASKS[task_id]
    out = {"cluster": spec.cluster, "shape_count_range": spec.shape_count_range}
    out.update(spec.margin)
    return out


def verify(task_id: int, shapes) -> int:
    """Pure rule evaluation; independent of how the scene was built."""
    if task_id not in TASKS:
        raise RuleUndefined(f"no task {task_id}")
    lo, hi = TASKS[task_id].shape_count_range
    if not lo <= len(shapes) <= hi:
        raise RuleUndefined(
            f"task {task_id} expects {lo}..{hi} shapes, got {len(shapes)}"
        )
    return _VERIFIERS[task_id](list(shapes))


def sample_scene(task_id: int, label: int, rng: np.random.Generator) -> Scene:
    """Construct a scene for (task, label); the result always re-verifies."""
    if task_id not in TASKS:
        raise RuleUndefined(f"no task {task_id}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    budget = _Budget()
    sampler = _SAMPLERS[task_id]
    while True:
        try:
            shapes = sampler(rng, budget, label)
        except _Retry:
            budget.spend(task_id, label)
            continue
        if verify(task_id, shapes) == label:
            return Scene(task_id=task_id, label=label, shapes=tuple(shapes))
        budget.spend(task_id, label)
