"""Stroke initialisation from image evidence.

``heuristic_recover`` turns one stroke mask into an action via its skeleton.
``split_strokes`` carves a difference mask into disjoint stroke masks:
spatial k-means over-segments the region, each segment gets a line or
quadratic centreline in its PCA frame, the centreline is extended and
thickened inside the region, and a greedy cover score picks the strokes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image
from scipy import ndimage

from . import canvas as cv
from . import kernels
from .stroke import ActionBounds, StrokeAction, clip_action

HEURISTIC_FORCE = 0.5
MIN_BEND_DEVIATION = 0.5
CAP_SLACK = 1.0
RADIUS_QUANTILE = 75.0


class SplitterError(ValueError):
    pass


def seed_words(*parts) -> list[int]:
    """Flatten ints and int sequences into one SeedSequence entropy list."""
    out = []
    for p in parts:
        out.extend(int(v) for v in np.atleast_1d(np.asarray(p, dtype=np.int64)).ravel())
    return out


# --------------------------------------------------------------------------
# single-mask recovery


def stroke_core(mask: np.ndarray, slack: float = CAP_SLACK, skeleton: np.ndarray | None = None) -> np.ndarray:
    """Pixels whose distance to the background is within ``slack`` of the brush radius.

    The radius is the upper quartile of the distance along the skeleton,
    which the short branches into the caps cannot drag down. What remains is
    a thin band around the centreline that stops ``slack`` px into each cap.
    """
    if skeleton is None:
        skeleton, _ = cv.skeletonize(mask)
    # pad so the canvas border counts as background
    edt = ndimage.distance_transform_edt(np.pad(mask, 1))[1:-1, 1:-1]
    radius = float(np.percentile(edt[skeleton], RADIUS_QUANTILE))
    return cv.largest_component(mask & (edt >= radius - slack))


def heuristic_recover(mask: np.ndarray, fixed_force: float = HEURISTIC_FORCE,
                      slack: float = CAP_SLACK) -> StrokeAction:
    """Action from the stroke's core band.

    With the control point over the chord midpoint the stroke is mirror
    symmetric, so the core's principal axis is parallel to the chord and the
    extreme projections on it, pulled back by ``slack``, are the endpoints.
    The centreline sits ``c + 2 b s (1 - s)`` off that axis at chord fraction
    ``s``; ``c`` and the bend ``b`` come from a least-squares fit. The start
    is the lexicographically smaller endpoint.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise SplitterError("empty mask")
    skeleton, ends = cv.skeletonize(mask)
    if len(ends) < 2:
        raise SplitterError(f"skeleton has {len(ends)} endpoints; need two (closed loop or point mask)")
    core = stroke_core(mask, slack, skeleton)
    ys, xs = np.nonzero(core)
    pts = np.column_stack([xs, ys]).astype(np.float64)
    try:
        frame, st = pca_project(pts)
    except SplitterError as exc:
        raise SplitterError("stroke core is a single point; no endpoints to recover") from exc
    lo, hi = float(st[:, 0].min()) + slack, float(st[:, 0].max()) - slack
    length = hi - lo
    if length < 1.0:
        raise SplitterError("stroke core too short to recover a direction")
    frac = (st[:, 0] - lo) / length
    g = 2.0 * np.clip(frac * (1.0 - frac), 0.0, None)
    design = np.column_stack([np.ones_like(g), g])
    (offset, bend), *_ = np.linalg.lstsq(design, st[:, 1], rcond=None)
    start = frame.to_xy(lo, offset)
    end = frame.to_xy(hi, offset)
    if tuple(end) < tuple(start):
        start, end, bend = end, start, -bend
    alpha = math.degrees(math.atan2(end[1] - start[1], end[0] - start[0])) % 360.0
    bend = float(bend)
    if abs(bend) < 2.0 * MIN_BEND_DEVIATION:
        bend = 0.0
    return StrokeAction(float(start[0]), float(start[1]), float(length), bend, alpha, float(fixed_force))


# --------------------------------------------------------------------------
# segmentation and robust fits


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 300
    inlier_tol: float = 1.5
    min_points: int = 5


@dataclass(frozen=True)
class GrowConfig:
    seed_width: float = 1.0
    max_width: float = 20.0
    refits: int = 2


@dataclass(frozen=True)
class SplitterConfig:
    K: int = 5
    kmeans_k: int | None = None
    lambda_b: float = 0.5
    lambda_o: float = 2.0
    ransac: RansacConfig = field(default_factory=RansacConfig)
    grow: GrowConfig = field(default_factory=GrowConfig)
    min_cover: int = 10

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.lambda_b < 0 or self.lambda_o < 0:
            raise ValueError("penalties must be non-negative")

    @property
    def n_segments(self) -> int:
        return self.kmeans_k if self.kmeans_k is not None else 2 * self.K


@dataclass(frozen=True)
class Frame:
    mu: np.ndarray
    v0: np.ndarray
    v1: np.ndarray

    def to_xy(self, s, t) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)[..., None]
        t = np.asarray(t, dtype=np.float64)[..., None]
        return self.mu + s * self.v0 + t * self.v1


@dataclass(frozen=True)
class CandidateStroke:
    mask: np.ndarray
    fit_kind: str
    coefficients: tuple[float, ...]
    frame: Frame
    inlier_count: int
    chord: float

    @property
    def bend(self) -> float:
        if self.fit_kind == "line":
            return 0.0
        return abs(self.coefficients[0]) * self.chord ** 2


def spatial_kmeans(diff: np.ndarray, k: int, seed=0, max_iter: int = 100) -> list[np.ndarray]:
    """Partition the foreground into ``k`` segments using ``[x/W, y/H]`` features."""
    h, w = diff.shape
    ys, xs = np.nonzero(diff)
    n = xs.size
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < k:
        raise SplitterError(f"{n} foreground pixels cannot form {k} segments")
    X = np.column_stack([xs / w, ys / h])
    rng = np.random.default_rng(seed)
    centers = np.empty((k, 2))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        new = np.argmin(dist, axis=1)
        for j in range(k):
            if not np.any(new == j):
                far = int(np.argmax(dist[np.arange(n), new]))
                new[far] = j
        centers = np.array([X[new == j].mean(axis=0) for j in range(k)])
        if np.array_equal(new, labels):
            break
        labels = new
    segments = []
    for j in range(k):
        seg = np.zeros(diff.shape, dtype=bool)
        seg[ys[labels == j], xs[labels == j]] = True
        segments.append(seg)
    return segments


def pca_project(points: np.ndarray) -> tuple[Frame, np.ndarray]:
    """Centroid and principal axes of ``(N, 2)`` xy points, plus their ``(s, t)`` coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (N, 2)")
    if len(np.unique(pts, axis=0)) < 2:
        raise SplitterError("need at least two distinct points")
    mu = pts.mean(axis=0)
    centered = pts - mu
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    v0 = evecs[:, int(np.argmax(evals))]
    if v0[0] < 0 or (v0[0] == 0 and v0[1] < 0):
        v0 = -v0
    v1 = np.array([-v0[1], v0[0]])
    frame = Frame(mu, v0, v1)
    return frame, np.column_stack([centered @ v0, centered @ v1])


def _lstsq_poly(s, t, degree):
    coef, *_ = np.linalg.lstsq(np.vander(s, degree + 1), t, rcond=None)
    return tuple(float(c) for c in coef)


def _count_inliers(s, t, coef, tol):
    return np.abs(t - np.polyval(coef, s)) <= tol


def _ransac_model(s, t, degree, cfg: RansacConfig, rng):
    """Best minimal-sample model by inlier count; earliest sample wins ties."""
    idx = rng.integers(0, s.size, size=(cfg.iterations, degree + 1))
    ss, tt = s[idx], t[idx]
    V = ss[..., None] ** np.arange(degree, -1, -1)
    ok = np.abs(np.linalg.det(V)) > 1e-9
    if not ok.any():
        return None, -1
    coef = np.linalg.solve(V[ok], tt[ok][..., None])[..., 0]
    fitted = (s[:, None] ** np.arange(degree, -1, -1)) @ coef.T
    inliers = (np.abs(t[:, None] - fitted) <= cfg.inlier_tol).T
    counts = inliers.sum(axis=1)
    best = int(np.argmax(counts))
    return inliers[best], int(counts[best])


def ransac_fit(points: np.ndarray, cfg: RansacConfig = RansacConfig(), seed=0):
    """Robust line or quadratic ``t(s)``; the line wins ties.

    Returns ``(kind, coefficients, inlier_mask)`` with coefficients highest
    power first, refit by least squares on the inliers.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < max(cfg.min_points, 1):
        raise SplitterError(f"{len(pts)} points, need {cfg.min_points}")
    s, t = pts[:, 0], pts[:, 1]
    distinct = len(np.unique(s))
    if distinct < 2:
        q = float(t.mean())
        return "line", (0.0, q), np.abs(t - q) <= cfg.inlier_tol
    rng = np.random.default_rng(seed)
    line_mask, line_count = _ransac_model(s, t, 1, cfg, rng)
    quad_mask, quad_count = (None, -1)
    if distinct >= 3:
        quad_mask, quad_count = _ransac_model(s, t, 2, cfg, rng)
    if quad_count > line_count:
        kind, degree, mask = "quadratic", 2, quad_mask
    else:
        kind, degree, mask = "line", 1, line_mask
    if mask is None or len(np.unique(s[mask])) < degree + 1:
        mask = np.ones(s.size, dtype=bool)
    coef = _lstsq_poly(s[mask], t[mask], degree)
    return kind, coef, _count_inliers(s, t, coef, cfg.inlier_tol)


# --------------------------------------------------------------------------
# candidate construction


def _inside(region: np.ndarray, xy: np.ndarray) -> np.ndarray:
    h, w = region.shape
    xi = np.rint(xy[..., 0]).astype(np.int64)
    yi = np.rint(xy[..., 1]).astype(np.int64)
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.zeros(xi.shape, dtype=bool)
    out[ok] = region[yi[ok], xi[ok]]
    return out


def _centreline(region, frame, coef, s_lo, s_hi, step=0.5):
    """Dense centreline over ``[s_lo, s_hi]``, extended both ways while inside ``region``."""
    span = max(region.shape) * 1.5
    grid = np.arange(s_lo - span, s_hi + span + step, step)
    xy = frame.to_xy(grid, np.polyval(coef, grid))
    inside = _inside(region, xy)
    core = (grid >= s_lo) & (grid <= s_hi)
    if not np.any(inside & core):
        return xy[core & inside], 0.0
    lo = int(np.argmax(core))
    hi = len(grid) - 1 - int(np.argmax(core[::-1]))
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    while hi < len(grid) - 1 and inside[hi + 1]:
        hi += 1
    keep = np.zeros_like(inside)
    keep[lo:hi + 1] = True
    keep &= inside
    pts = xy[keep]
    chord = float(grid[hi] - grid[lo]) if pts.size else 0.0
    return pts, chord


def _grow(region, edt, centre, grow: GrowConfig):
    h, w = region.shape
    xi = np.clip(np.rint(centre[:, 0]).astype(np.int64), 0, w - 1)
    yi = np.clip(np.rint(centre[:, 1]).astype(np.int64), 0, h - 1)
    half = float(np.median(edt[yi, xi])) + 0.5
    half = min(max(half, grow.seed_width), grow.max_width)
    cx = np.ascontiguousarray(centre[:, 0])
    cy = np.ascontiguousarray(centre[:, 1])
    d2 = kernels.min_dist2(h, w, cx, cy, 0, 0)
    return region & (d2 <= half * half)


def distance_ridge(region: np.ndarray, edt: np.ndarray, tol: float = 0.5) -> np.ndarray:
    """Pixels within ``tol`` of the 3x3 maximum of the distance map: the centrelines."""
    return region & (edt >= ndimage.maximum_filter(edt, size=3) - tol)


def _candidate(region, edt, ridge, seg, cfg: SplitterConfig, seed) -> CandidateStroke | None:
    mask = seg
    result = None
    for it in range(cfg.grow.refits + 1):
        ys, xs = np.nonzero(mask & ridge)
        if xs.size < cfg.ransac.min_points:
            ys, xs = np.nonzero(mask)
        if xs.size < cfg.ransac.min_points:
            return result
        pts = np.column_stack([xs, ys]).astype(np.float64)
        try:
            frame, st = pca_project(pts)
        except SplitterError:
            return result
        kind, coef, inl = ransac_fit(st, cfg.ransac, seed=seed_words(seed, it))
        s_in = st[inl, 0] if inl.any() else st[:, 0]
        centre, chord = _centreline(region, frame, coef, float(s_in.min()), float(s_in.max()))
        if len(centre) == 0:
            return result
        grown = cv.largest_component(_grow(region, edt, centre, cfg.grow))
        if not grown.any():
            return result
        result = CandidateStroke(grown, kind, coef, frame, int(inl.sum()), chord)
        if np.array_equal(grown, mask):
            break
        mask = grown
    return result


@dataclass(frozen=True)
class Selection:
    candidate: CandidateStroke
    mask: np.ndarray
    score: float
    cover: int


def select_greedy(region, candidates, cfg: SplitterConfig) -> list[Selection]:
    """Greedy max-score selection; each pick is trimmed to pixels not already taken."""
    chosen: list[Selection] = []
    taken = np.zeros(region.shape, dtype=bool)
    pool = list(candidates)
    while pool and len(chosen) < cfg.K:
        best, best_i = None, -1
        for i, c in enumerate(pool):
            cover = int(np.count_nonzero(c.mask & region & ~taken))
            overlap = int(np.count_nonzero(c.mask & taken))
            score = cover - cfg.lambda_b * c.bend - cfg.lambda_o * overlap
            if best is None or score > best[0]:
                best, best_i = (score, cover), i
        score, cover = best
        if cover < cfg.min_cover:
            break
        c = pool.pop(best_i)
        mask = cv.largest_component(c.mask & region & ~taken)
        chosen.append(Selection(c, mask, float(score), int(mask.sum())))
        taken |= mask
    return chosen


def stroke_candidates(diff: np.ndarray, cfg: SplitterConfig, seed=0) -> list[CandidateStroke]:
    region = np.asarray(diff, dtype=bool)
    n_fg = int(region.sum())
    k = min(max(cfg.n_segments, 1), n_fg)
    edt = ndimage.distance_transform_edt(np.pad(region, 1))[1:-1, 1:-1]
    ridge = distance_ridge(region, edt)
    out = []
    for j, seg in enumerate(spatial_kmeans(region, k, seed=seed)):
        c = _candidate(region, edt, ridge, seg, cfg, seed=seed_words(seed, j))
        if c is not None:
            out.append(c)
    return out


def split_strokes(diff: np.ndarray, cfg: SplitterConfig = SplitterConfig(), seed=0) -> list[np.ndarray]:
    """Up to ``cfg.K`` pairwise disjoint, connected stroke masks inside ``diff``, largest first."""
    region = np.asarray(diff, dtype=bool)
    if cfg.K == 0 or not region.any():
        return []
    chosen = select_greedy(region, stroke_candidates(region, cfg, seed), cfg)
    chosen.sort(key=lambda sel: -sel.cover)
    return [sel.mask for sel in chosen]


# --------------------------------------------------------------------------
# masks to actions


_PAD_OFFSETS = ((2.0, 0.0), (-2.0, 0.0), (0.0, 2.0), (0.0, -2.0),
                (2.0, 2.0), (-2.0, -2.0), (2.0, -2.0), (-2.0, 2.0))


def default_action(shape, bounds: ActionBounds, fixed_force: float) -> StrokeAction:
    h, w = shape
    return clip_action(StrokeAction(w / 2.0, h / 2.0, bounds.l[0], 0.0, 0.0, fixed_force), bounds)


def masks_to_actions(
    masks,
    H: int,
    fixed_force: float = HEURISTIC_FORCE,
    bounds: ActionBounds = ActionBounds(),
    shape=(cv.PATCH_SIDE, cv.PATCH_SIDE),
    force_fn=None,
) -> list[StrokeAction]:
    """Exactly ``H`` initial actions, largest masks first.

    ``force_fn(mask, action)`` may replace the fixed force of each recovered
    action. Short lists are padded with jittered copies of the first action.
    """
    if H < 0:
        raise ValueError("H must be non-negative")
    ranked = sorted(masks, key=lambda m: -int(np.count_nonzero(m)))[:H]
    actions = []
    for m in ranked:
        try:
            u = heuristic_recover(m, fixed_force)
        except (SplitterError, cv.CanvasError):
            continue
        if force_fn is not None:
            u = replace(u, F=float(force_fn(m, u)))
        actions.append(clip_action(u, bounds))
    if not actions:
        return [default_action(shape, bounds, fixed_force) for _ in range(H)]
    base = actions[0]
    k = 0
    while len(actions) < H:
        ox, oy = _PAD_OFFSETS[k % len(_PAD_OFFSETS)]
        actions.append(clip_action(replace(base, x0=base.x0 + ox, y0=base.y0 + oy), bounds))
        k += 1
    return actions


# --------------------------------------------------------------------------
# diagnostics

_OVERLAY_COLORS = np.array([
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48), (145, 30, 180),
    (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128),
], dtype=np.float64)


def overlay_image(diff: np.ndarray, masks) -> np.ndarray:
    """RGB uint8 image: diff in gray, each mask tinted with its own colour."""
    base = np.where(diff, 170.0, 255.0)
    rgb = np.repeat(base[..., None], 3, axis=-1)
    for i, m in enumerate(masks):
        rgb[m] = 0.35 * rgb[m] + 0.65 * _OVERLAY_COLORS[i % len(_OVERLAY_COLORS)]
    return np.round(rgb).astype(np.uint8)


def save_overlay(path, diff: np.ndarray, masks) -> None:
    Image.fromarray(overlay_image(diff, masks)).save(path)
