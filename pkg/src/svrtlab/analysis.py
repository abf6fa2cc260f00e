"""Task-space analysis: clustering, principal components, slopes, correlations.

An accuracy matrix has one row per task and one column per training condition
(depth tier x training-set size). On top of it sit Ward hierarchical
clustering (Lance-Williams updates on squared Euclidean distances, so merge
heights match the usual sqrt(2 * delta-SSE) convention), PCA via covariance
eigendecomposition, per-task slopes of attention/vanilla accuracy ratios
against log10 of the training-set size, and Pearson correlations with an
exact two-sided p from the regularized incomplete beta function.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.special import betainc

from .errors import DataError, DegenerateError


@dataclasses.dataclass(frozen=True)
class AccuracyMatrix:
    task_ids: tuple
    columns: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "task_ids", tuple(int(t) for t in self.task_ids))
        object.__setattr__(self, "columns", tuple(str(c) for c in self.columns))
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.task_ids), len(self.columns)):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"{len(self.task_ids)} tasks x {len(self.columns)} columns"
            )
        if len(set(self.columns)) != len(self.columns):
            raise DataError("column labels must be unique")
        if len(set(self.task_ids)) != len(self.task_ids):
            raise DataError("task ids must be unique")
        if not np.all(np.isfinite(values)):
            raise DataError("accuracy matrix contains non-finite values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise DataError("accuracies must lie in [0, 1]")


def matrix_from_results(results, tiers, sizes):
    """Mean test accuracy per (task, tier, size) from run results.

    Column labels are ``{tier}_n{size}``; every (task, tier, size) combination
    must appear at least once.
    """
    buckets = {}
    task_ids = set()
    for result in results:
        cfg = result.config
        key = (cfg.task_id, cfg.model.depth_tier, cfg.n_train)
        buckets.setdefault(key, []).append(result.test_acc)
        task_ids.add(cfg.task_id)
    task_ids = tuple(sorted(task_ids))
    columns = []
    rows = np.zeros((len(task_ids), len(tiers) * len(sizes)))
    col = 0
    for tier in tiers:
        for size in sizes:
            columns.append(f"{tier}_n{size}")
            for row, task_id in enumerate(task_ids):
                accs = buckets.get((task_id, tier, size))
                if not accs:
                    raise DataError(f"no runs for task {task_id}, tier {tier!r}, n_train {size}")
                rows[row, col] = float(np.mean(accs))
            col += 1
    return AccuracyMatrix(task_ids=task_ids, columns=tuple(columns), values=rows)


def _as_rows(matrix):
    values = matrix.values if isinstance(matrix, AccuracyMatrix) else np.asarray(matrix, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"expected a 2-d matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DataError("matrix contains non-finite values")
    return values


def standardize_columns(values):
    """Center each column and scale it to unit standard deviation."""
    values = _as_rows(values)
    std = values.std(axis=0)
    if np.any(std == 0.0):
        raise DegenerateError("cannot standardize a zero-variance column")
    return (values - values.mean(axis=0)) / std


@dataclasses.dataclass(frozen=True)
class Dendrogram:
    """Merge list of (cluster_a, cluster_b, distance, new_size).

    Original rows are clusters 0..n-1; the merge at step t creates cluster
    n+t. ``leaf_order`` lists the rows with each subtree's smaller leaf first.
    """

    merges: tuple
    leaf_order: tuple

    def heights(self):
        return tuple(m[2] for m in self.merges)


def ward_cluster(matrix, standardize=False):
    """Agglomerative Ward clustering; ties merge the lowest cluster indices.

    Distances follow the common convention sqrt(2 * increase in within-cluster
    sum of squares), so two singleton rows merge at their Euclidean distance.
    """
    points = _as_rows(matrix)
    if standardize:
        points = standardize_columns(points)
    n = points.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 rows to cluster, got {n}")

    sizes = {i: 1 for i in range(n)}
    d2 = {}
    for i in range(n):
        for j in range(i + 1, n):
            diff = points[i] - points[j]
            d2[(i, j)] = float(diff @ diff)

    merges = []
    children = {}
    next_id = n
    active = list(range(n))
    for _ in range(n - 1):
        best = None
        for ai, a in enumerate(active):
            for b in active[ai + 1 :]:
                dist = d2[(a, b)]
                if best is None or dist < best[0]:
                    best = (dist, a, b)
        dist2, a, b = best
        merged_size = sizes[a] + sizes[b]
        merges.append((a, b, float(np.sqrt(max(dist2, 0.0))), merged_size))
        children[next_id] = (a, b)
        for other in active:
            if other in (a, b):
                continue
            na, nb, nk = sizes[a], sizes[b], sizes[other]
            dka = d2[(min(a, other), max(a, other))]
            dkb = d2[(min(b, other), max(b, other))]
            updated = ((na + nk) * dka + (nb + nk) * dkb - nk * dist2) / (na + nb + nk)
            d2[(min(other, next_id), max(other, next_id))] = updated
        active = [c for c in active if c not in (a, b)] + [next_id]
        sizes[next_id] = merged_size
        next_id += 1

    def leaves(node):
        if node < n:
            return (node,)
        a, b = children[node]
        la, lb = leaves(a), leaves(b)
        return la + lb if min(la) <= min(lb) else lb + la

    return Dendrogram(merges=tuple(merges), leaf_order=leaves(next_id - 1))


@dataclasses.dataclass(frozen=True)
class PcaResult:
    components: np.ndarray
    explained_ratio: np.ndarray
    projections: np.ndarray
    mean: np.ndarray


def pca(matrix, k=None, standardize=False):
    """Principal components of the rows via covariance eigendecomposition.

    ``explained_ratio`` always covers every component (it sums to 1);
    ``components`` (k, n_cols) and ``projections`` (n_rows, k) are truncated
    to the requested k. Each component's largest-magnitude loading is
    oriented positive.
    """
    values = _as_rows(matrix)
    if standardize:
        values = standardize_columns(values)
    n_rows, n_cols = values.shape
    if n_rows < 2:
        raise DataError(f"need at least 2 rows for PCA, got {n_rows}")
    if k is None:
        k = n_cols
    if not 1 <= k <= n_cols:
        raise DataError(f"k must be in 1..{n_cols}, got {k}")
    if k > n_rows:
        raise DataError(f"k={k} exceeds the {n_rows} available rows")

    mean = values.mean(axis=0)
    centered = values - mean
    cov = centered.T @ centered / (n_rows - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    total = eigvals.sum()
    if total == 0.0:
        raise DegenerateError("matrix has no variance")

    components = eigvecs[:, order].T[:k]
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaResult(
        components=components,
        explained_ratio=eigvals / total,
        projections=centered @ components.T,
        mean=mean,
    )


@dataclasses.dataclass(frozen=True)
class SlopeVector:
    slopes: tuple
    model_tag: str


_X_MODES = ("log10", "raw", "index")


def slope_vector(attn, vanilla, sizes, model_tag="attn", x_mode="log10"):
    """Per-task slope of attention/vanilla accuracy ratios against set size.

    The abscissa defaults to log10(size); ``x_mode`` exposes raw counts and
    plain indices as alternatives.
    """
    attn = _as_rows(attn)
    vanilla = _as_rows(vanilla)
    sizes = np.asarray(sizes, dtype=np.float64)
    if attn.shape != vanilla.shape or attn.shape[1] != sizes.size:
        raise DataError(
            f"shape mismatch: attention {attn.shape}, vanilla {vanilla.shape}, {sizes.size} sizes"
        )
    if np.any(vanilla <= 0.0):
        raise DataError("vanilla accuracies must be positive to form ratios")
    if x_mode not in _X_MODES:
        raise DataError(f"x_mode must be one of {_X_MODES}, got {x_mode!r}")
    if np.all(sizes == sizes[0]):
        raise DegenerateError("all training-set sizes are equal; slope is undefined")

    if x_mode == "log10":
        if np.any(sizes <= 0.0):
            raise DataError("sizes must be positive for a log10 abscissa")
        x = np.log10(sizes)
    elif x_mode == "raw":
        x = sizes
    else:
        x = np.arange(sizes.size, dtype=np.float64)

    ratios = attn / vanilla
    xc = x - x.mean()
    slopes = (ratios - ratios.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    return SlopeVector(slopes=tuple(float(s) for s in slopes), model_tag=model_tag)


def pearson(x, y):
    """Sample Pearson r with the exact two-sided p for n-2 degrees of freedom."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 3:
        raise DataError(f"need at least 3 points, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("inputs contain non-finite values")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise DegenerateError("zero variance input")
    r = float(np.clip((xc @ yc) / np.sqrt(sx * sy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0
    df = n - 2
    t2 = df * r * r / (1.0 - r * r)
    p = float(betainc(df / 2.0, 0.5, df / (df + t2)))
    return r, p


def permutation_p(x, y, n_perm=10**6, seed=0, chunk=20000):
    """Two-sided permutation p-value for the Pearson r of x and y.

    Permutes y; uses the add-one estimator (b+1)/(m+1). Chunked so a million
    permutations stay within a modest memory budget.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    r_obs, _ = pearson(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(float(xc @ xc) * float(yc @ yc))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    threshold = abs(r_obs) - 1e-12
    while done < n_perm:
        m = min(chunk, n_perm - done)
        perms = rng.permuted(np.tile(yc, (m, 1)), axis=1)
        r_perm = perms @ xc / denom
        hits += int(np.count_nonzero(np.abs(r_perm) >= threshold))
        done += m
    return (hits + 1) / (n_perm + 1)


def correlate_slopes(slopes, projections):
    """Pearson (r, p) of the slope vector against each projection column."""
    slope_arr = np.asarray(
        slopes.slopes if isinstance(slopes, SlopeVector) else slopes, dtype=np.float64
    )
    proj = np.asarray(projections, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[0] != slope_arr.size:
        raise DataError(f"projections {proj.shape} do not match {slope_arr.size} slopes")
    return tuple(pearson(slope_arr, proj[:, j]) for j in range(proj.shape[1]))


def matrix_to_csv(matrix):
    lines = ["task," + ",".join(matrix.columns)]
    for task_id, row in zip(matrix.task_ids, matrix.values):
        lines.append(f"{task_id}," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def dendrogram_to_csv(dendrogram):
    lines = ["cluster_a,cluster_b,distance,size"]
    for a, b, dist, size in dendrogram.merges:
        lines.append(f"{a},{b},{dist:.9g},{size}")
    return "\n".join(lines) + "\n"


def correlation_table_csv(pairs, labels=None):
    lines = ["component,r,p"]
    for j, (r, p) in enumerate(pairs):
        label = labels[j] if labels else f"pc{j + 1}"
        lines.append(f"{label},{r:.6f},{p:.6g}")
    return "\n".join(lines) + "\n"
