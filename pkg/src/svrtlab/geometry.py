"""Closed-contour shapes and the geometric predicates task rules are built from.

Coordinates are float64 (x, y) pairs with x growing rightward (columns) and y
growing downward (rows). A :class:`Contour` stores a simple closed polyline of
64 samples, centered on its sample mean and scaled to max radius 1. Shapes are
placed in a scene by composing mirror, rotation, scale and translation.

All randomness comes from an explicit ``numpy.random.Generator``. Geometry
avoids BLAS-backed reductions so that results are reproducible across builds;
the trig calls in contour synthesis go through libm, which is the one spot
where cross-platform drift is conceivable (see README notes on determinism).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import SynthesisExhausted

N_SAMPLES = 64
_MAX_SYNTH_TRIES = 64

VALID_GROUP_TERMS = frozenset({"translation", "rotation", "scale", "mirror"})


@dataclass(frozen=True)
class Contour:
    """A simple closed curve: (64, 2) float64 samples, mean 0, max radius 1."""

    points: np.ndarray
    id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_SAMPLES, 2):
            raise ValueError(f"contour needs shape ({N_SAMPLES}, 2), got {pts.shape}")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Transform:
    """Placement of a unit contour: mirror, then rotate, then scale, then translate."""

    translation: tuple[float, float] = (0.0, 0.0)
    rotation: float = 0.0
    scale: float = 1.0
    mirror: bool = False


class PlacedShape:
    """A contour with a transform applied; transformed points are cached."""

    __slots__ = ("contour", "transform", "_points")

    def __init__(self, contour: Contour, transform: Transform):
        self.contour = contour
        self.transform = transform
        self._points = None

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            self._points = apply_transform(self.contour, self.transform)
        return self._points

    @property
    def centroid(self) -> np.ndarray:
        """Mean of the placed samples; equals the translation up to rounding."""
        return self.points.mean(axis=0)

    @property
    def radius(self) -> float:
        """Max distance from centroid; equals the transform scale for unit contours."""
        return float(self.transform.scale)

    def moved(self, translation) -> "PlacedShape":
        t = self.transform
        return PlacedShape(
            self.contour,
            Transform((float(translation[0]), float(translation[1])), t.rotation, t.scale, t.mirror),
        )


def _catmull_rom_closed(anchors: np.ndarray, n_out: int) -> np.ndarray:
    """Sample a closed uniform Catmull-Rom spline through ``anchors``.

    Returns ``n_out`` points; each anchor is hit exactly (t=0 of its segment).
    """
    n = len(anchors)
    p0 = np.roll(anchors, 1, axis=0)
    p1 = anchors
    p2 = np.roll(anchors, -1, axis=0)
    p3 = np.roll(anchors, -2, axis=0)
    # Per-segment sample counts that add up to n_out exactly.
    edges = np.floor(np.arange(n + 1) * n_out / n).astype(int)
    counts = np.diff(edges)
    out = np.empty((n_out, 2), dtype=np.float64)
    pos = 0
    for k in range(n):
        m = counts[k]
        if m == 0:
            continue
        t = (np.arange(m, dtype=np.float64) / m)[:, None]
        a = 2.0 * p1[k]
        b = p2[k] - p0[k]
        c = 2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]
        d = -p0[k] + 3.0 * p1[k] - 3.0 * p2[k] + p3[k]
        out[pos : pos + m] = 0.5 * (a + b * t + c * t * t + d * t * t * t)
        pos += m
    return out


def _contour_id(points: np.ndarray) -> int:
    return int.from_bytes(hashlib.blake2b(points.tobytes(), digest_size=8).digest(), "little")


def sample_contour(rng: np.random.Generator, n_anchor: int = 8, irregularity: float = 0.5) -> Contour:
    """Draw a random simple closed contour.

    Anchors sit at jittered uniform angles with radii in [1 - irregularity, 1];
    a closed Catmull-Rom spline through them is sampled 64 times, centered on
    the sample mean and scaled to max radius 1. Candidates with
    self-intersections are redrawn; gives up after a fixed retry budget.
    """
    if n_anchor < 3:
        raise ValueError("need at least 3 anchors")
    if not 0.0 <= irregularity <= 1.0:
        raise ValueError("irregularity must be in [0, 1]")
    base = np.arange(n_anchor, dtype=np.float64) * (2.0 * np.pi / n_anchor)
    for _ in range(_MAX_SYNTH_TRIES):
        jitter = rng.uniform(-1.0, 1.0, size=n_anchor) * irregularity * (np.pi / n_anchor) * 0.9
        radii = 1.0 - irregularity * rng.uniform(0.0, 1.0, size=n_anchor)
        theta = base + jitter
        anchors = np.stack([radii * np.cos(theta), radii * np.sin(theta)], axis=1)
        pts = _catmull_rom_closed(anchors, N_SAMPLES)
        pts = pts - pts.mean(axis=0)
        r = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2).max()
        if r < 1e-9:
            continue
        pts = pts / r
        if _polygon_is_simple(pts):
            if _signed_area(pts) < 0.0:
                pts = pts[::-1].copy()
            pts = pts - pts.mean(axis=0)
            return Contour(points=pts, id=_contour_id(pts))
    raise SynthesisExhausted(
        f"no simple contour after {_MAX_SYNTH_TRIES} tries (n_anchor={n_anchor}, irregularity={irregularity})"
    )


def apply_transform(contour: Contour, t: Transform) -> np.ndarray:
    """Transformed copy of the contour samples: mirror, rotate, scale, translate."""
    x = contour.points[:, 0].copy()
    y = contour.points[:, 1].copy()
    if t.mirror:
        x = -x
    if t.rotation != 0.0:
        c = np.cos(t.rotation)
        s = np.sin(t.rotation)
        x, y = c * x - s * y, s * x + c * y
    out = np.empty((len(x), 2), dtype=np.float64)
    out[:, 0] = t.scale * x + t.translation[0]
    out[:, 1] = t.scale * y + t.translation[1]
    return out


def _signed_area(pts: np.ndarray) -> float:
    x = pts[:, 0]
    y = pts[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _edges(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Edge start and end arrays for a closed polyline."""
    return pts, np.roll(pts, -1, axis=0)


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _segments_cross_matrix(p_a, p_b, q_a, q_b):
    """Boolean matrix: does segment i of P intersect segment j of Q (touching counts)."""
    pax = p_a[:, None, 0]
    pay = p_a[:, None, 1]
    pbx = p_b[:, None, 0]
    pby = p_b[:, None, 1]
    qax = q_a[None, :, 0]
    qay = q_a[None, :, 1]
    qbx = q_b[None, :, 0]
    qby = q_b[None, :, 1]

    d1 = _cross(qax, qay, qbx, qby, pax, pay)
    d2 = _cross(qax, qay, qbx, qby, pbx, pby)
    d3 = _cross(pax, pay, pbx, pby, qax, qay)
    d4 = _cross(pax, pay, pbx, pby, qbx, qby)

    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0))

    # Collinear or endpoint-touching cases: a zero cross product with the
    # point inside the other segment's bounding box.
    def on_seg(d, px, py, ax, ay, bx, by):
        return (
            (d == 0.0)
            & (px >= np.minimum(ax, bx))
            & (px <= np.maximum(ax, bx))
            & (py >= np.minimum(ay, by))
            & (py <= np.maximum(ay, by))
        )

    touch = (
        on_seg(d1, pax, pay, qax, qay, qbx, qby)
        | on_seg(d2, pbx, pby, qax, qay, qbx, qby)
        | on_seg(d3, qax, qay, pax, pay, pbx, pby)
        | on_seg(d4, qbx, qby, pax, pay, pbx, pby)
    )
    return proper | touch


def _polygon_is_simple(pts: np.ndarray) -> bool:
    a, b = _edges(pts)
    n = len(pts)
    hit = _segments_cross_matrix(a, b, a, b)
    idx = np.arange(n)
    diff = (idx[:, None] - idx[None, :]) % n
    adjacent = (diff == 0) | (diff == 1) | (diff == n - 1)
    return not bool(np.any(hit & ~adjacent))


def polylines_intersect(p: np.ndarray, q: np.ndarray) -> bool:
    """Whether two closed polylines share any point (crossing or touching)."""
    pa, pb = _edges(p)
    qa, qb = _edges(q)
    return bool(np.any(_segments_cross_matrix(pa, pb, qa, qb)))


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd (crossing number) test; boundary points are unreliable by design."""
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    ax, bx = poly[:, 0][None, :], np.roll(poly[:, 0], -1)[None, :]
    ay, by = poly[:, 1][None, :], np.roll(poly[:, 1], -1)[None, :]
    straddles = (ay <= py) != (by <= py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = ax + (py - ay) * (bx - ax) / (by - ay)
    crossing = straddles & (px < x_at)
    return (crossing.sum(axis=1) % 2).astype(bool)


def contains(outer: PlacedShape, inner: PlacedShape) -> bool:
    """True when every sample of ``inner`` lies inside ``outer`` and the curves do not touch."""
    p_out = outer.points
    p_in = inner.points
    if polylines_intersect(p_out, p_in):
        return False
    return bool(np.all(points_in_polygon(p_in, p_out)))


def _point_segment_dist(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> float:
    ab = seg_b - seg_a
    denom = ab[:, 0] ** 2 + ab[:, 1] ** 2
    denom = np.where(denom < 1e-300, 1.0, denom)
    apx = points[:, 0][:, None] - seg_a[:, 0][None, :]
    apy = points[:, 1][:, None] - seg_a[:, 1][None, :]
    t = (apx * ab[:, 0][None, :] + apy * ab[:, 1][None, :]) / denom[None, :]
    t = np.clip(t, 0.0, 1.0)
    dx = apx - t * ab[:, 0][None, :]
    dy = apy - t * ab[:, 1][None, :]
    return float(np.sqrt(dx * dx + dy * dy).min())


def border_distance(a: PlacedShape, b: PlacedShape) -> float:
    """Minimum distance between the two contours; 0.0 when they cross or touch.

    For non-crossing segment sets the closest approach involves at least one
    segment endpoint, so checking endpoints against the other polyline in both
    directions is exact.
    """
    p = a.points
    q = b.points
    if polylines_intersect(p, q):
        return 0.0
    pa, pb = _edges(p)
    qa, qb = _edges(q)
    return min(_point_segment_dist(p, qa, qb), _point_segment_dist(q, pa, pb))


def interior_depth(outer: PlacedShape, inner: PlacedShape) -> float:
    """Border distance of ``inner`` from ``outer`` when contained, else -1.0."""
    p = outer.points
    q = inner.points
    if polylines_intersect(p, q) or not np.all(points_in_polygon(q, p)):
        return -1.0
    pa, pb = _edges(p)
    qa, qb = _edges(q)
    return min(_point_segment_dist(p, qa, qb), _point_segment_dist(q, pa, pb))


def _normalize_group(group) -> frozenset:
    if isinstance(group, str):
        group = {group}
    g = frozenset(group)
    bad = g - VALID_GROUP_TERMS
    if bad:
        raise ValueError(f"unknown group terms: {sorted(bad)}")
    return g | {"translation"}


def _cyclic_shifts(pts: np.ndarray) -> np.ndarray:
    n = len(pts)
    idx = (np.arange(n)[None, :] + np.arange(n)[:, None]) % n
    return pts[idx]


def shape_distance(a: PlacedShape, b: PlacedShape, group=("translation",)) -> float:
    """RMS sample distance between ``a`` and the best alignment of ``b``.

    The alignment searches cyclic shifts of the sample order, and optionally
    the group's rotation (closed-form optimal angle per shift, exact for the
    RMS objective), scale (RMS radius ratio) and mirror image. The result is
    normalized by ``a``'s max radius, so a tolerance reads as a fraction of
    shape size.
    """
    g = _normalize_group(group)
    pa = a.points
    pb = b.points
    a0 = pa - pa.mean(axis=0)
    b0 = pb - pb.mean(axis=0)
    rad_a = np.sqrt(a0[:, 0] ** 2 + a0[:, 1] ** 2)
    rad_b = np.sqrt(b0[:, 0] ** 2 + b0[:, 1] ** 2)
    scale_a = float(rad_a.max())
    if scale_a < 1e-12:
        return float(np.sqrt(b0[:, 0] ** 2 + b0[:, 1] ** 2).mean())
    if "scale" in g:
        rms_a = float(np.sqrt((rad_a**2).mean()))
        rms_b = float(np.sqrt((rad_b**2).mean()))
        if rms_b > 1e-12:
            b0 = b0 * (rms_a / rms_b)

    candidates = [b0]
    if "mirror" in g:
        bm = b0.copy()
        bm[:, 0] = -bm[:, 0]
        candidates.append(bm)

    best = np.inf
    rotate = "rotation" in g
    for cand in candidates:
        # Both traversal orders: mirroring flips winding, so a mirrored copy
        # stores its samples in the opposite order from the original.
        for variant in (cand, cand[::-1].copy()):
            shifts = _cyclic_shifts(variant)  # (n, n, 2)
            if rotate:
                dots = (shifts * a0[None, :, :]).sum(axis=(1, 2))
                crosses = (shifts[:, :, 0] * a0[None, :, 1] - shifts[:, :, 1] * a0[None, :, 0]).sum(axis=1)
                norm = np.sqrt(dots * dots + crosses * crosses)
                norm = np.where(norm < 1e-300, 1.0, norm)
                c = dots / norm
                s = crosses / norm
                rx = c[:, None] * shifts[:, :, 0] - s[:, None] * shifts[:, :, 1]
                ry = s[:, None] * shifts[:, :, 0] + c[:, None] * shifts[:, :, 1]
                dx = a0[None, :, 0] - rx
                dy = a0[None, :, 1] - ry
            else:
                dx = a0[None, :, 0] - shifts[:, :, 0]
                dy = a0[None, :, 1] - shifts[:, :, 1]
            err = np.sqrt((dx * dx + dy * dy).mean(axis=1).min())
            if err < best:
                best = float(err)
    return best / scale_a


def same_shape(a: PlacedShape, b: PlacedShape, group=("translation",), tol: float = 0.02) -> bool:
    """Whether ``b`` is a copy of ``a`` up to the given transform group."""
    return shape_distance(a, b, group) <= tol


def _reflect_points(pts: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    v = pts - origin[None, :]
    along = v[:, 0] * direction[0] + v[:, 1] * direction[1]
    par_x = along * direction[0]
    par_y = along * direction[1]
    out = np.empty_like(pts)
    out[:, 0] = origin[0] + 2.0 * par_x - v[:, 0]
    out[:, 1] = origin[1] + 2.0 * par_y - v[:, 1]
    return out


def _mirror_pair_error(p: np.ndarray, q: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> float:
    """Best cyclic-shift mean distance between reflect(p) and q, either order."""
    r = _reflect_points(p, origin, direction)
    best = np.inf
    for cand in (r, r[::-1].copy()):
        shifts = _cyclic_shifts(q)
        dx = shifts[:, :, 0] - cand[None, :, 0]
        dy = shifts[:, :, 1] - cand[None, :, 1]
        err = float(np.sqrt(dx * dx + dy * dy).mean(axis=1).min())
        best = min(best, err)
    return best


def symmetric_arrangement(shapes, tol: float = 1.5) -> bool:
    """Whether some mirror axis maps the set of shapes onto itself.

    Candidate axes are the perpendicular bisectors of centroid pairs (a valid
    axis must pass through the global centroid, which prunes candidates). Each
    off-axis shape must map onto a partner both by centroid (within ``tol``
    pixels) and pointwise as a mirrored contour; a shape sitting on the axis
    matches itself by centroid alone, with no constraint on its own symmetry.
    """
    shapes = list(shapes)
    k = len(shapes)
    if k < 2:
        raise ValueError("need at least two shapes")
    cents = np.stack([s.centroid for s in shapes])
    g = cents.mean(axis=0)

    axes = []
    for i in range(k):
        for j in range(i + 1, k):
            d = cents[j] - cents[i]
            nrm = float(np.sqrt(d[0] ** 2 + d[1] ** 2))
            if nrm < 1e-9:
                continue
            mid = 0.5 * (cents[i] + cents[j])
            direction = np.array([-d[1] / nrm, d[0] / nrm])
            # Distance from the global centroid to the candidate line.
            off = g - mid
            perp = off[0] * (d[0] / nrm) + off[1] * (d[1] / nrm)
            if abs(perp) > tol:
                continue
            axes.append((mid, direction))

    for origin, direction in axes:
        refl = _reflect_points(cents, origin, direction)
        dists = np.sqrt(((refl[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2))
        partner = dists.argmin(axis=1)
        if np.any(dists[np.arange(k), partner] > tol):
            continue
        if np.any(partner[partner] != np.arange(k)):
            continue
        ok = True
        for i in range(k):
            j = int(partner[i])
            if j == i or j < i:
                continue
            err = _mirror_pair_error(shapes[i].points, shapes[j].points, origin, direction)
            if err > tol:
                ok = False
                break
        if ok:
            return True
    return False
