"""Forward stroke-dynamics models and their identification from self-play data.

A model maps ``(canvas, action, color)`` to the predicted next canvas. Two
families live here: the analytic renderer driven by a width law (exact when
it shares the executor's law) and the linear-regression surrogate whose
stamp radius is ``softplus(a * F + beta) + eps``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import canvas as cv
from . import kernels
from .stroke import (
    STRAIGHT_BEND_THRESHOLD,
    StrokeAction,
    StrokeColor,
    StrokeRenderer,
    WidthLaw,
    arc_length,
    stamp_offsets,
    stamp_spacing,
)

MODEL_FORMAT_VERSION = 1
LR_EPS = 0.25


class DynamicsModel(Protocol):
    def predict(self, image: np.ndarray, u: StrokeAction, color: StrokeColor) -> np.ndarray: ...

    def footprint(self, u: StrokeAction, shape) -> np.ndarray: ...

    def radius(self, F: float) -> float: ...


class _RendererModel:
    expected_shape: tuple[int, int] | None = (cv.PATCH_SIDE, cv.PATCH_SIDE)
    straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD
    n_stamps: int | None = None

    def _renderer(self) -> StrokeRenderer:
        return StrokeRenderer(self, self.straight_bend_threshold, self.n_stamps)

    def _check(self, image):
        if image.ndim != 2:
            raise cv.CanvasError(f"expected a 2-D image, got shape {image.shape}")
        if self.expected_shape is not None and image.shape != tuple(self.expected_shape):
            raise cv.CanvasError(f"model expects {self.expected_shape} images, got {image.shape}")

    def predict(self, image, u, color):
        self._check(image)
        return self._renderer().render(image, u, color)

    def footprint(self, u, shape):
        return self._renderer().footprint(u, shape)


@dataclass(frozen=True)
class AnalyticModel(_RendererModel):
    """Renders with a width law; the oracle when the law matches the executor's."""

    law: object = field(default_factory=WidthLaw)
    straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD
    n_stamps: int | None = None
    expected_shape: tuple[int, int] | None = (cv.PATCH_SIDE, cv.PATCH_SIDE)

    def radius(self, F):
        return self.law.radius(F)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    # log1p(exp(-|x|)) + max(x, 0) never overflows
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LRSurrogate(_RendererModel):
    """Constant-width strokes of radius ``softplus(a * F + beta) + eps``."""

    a: float = 1.0
    beta: float = 1.0
    eps: float = LR_EPS
    straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD
    n_stamps: int | None = None
    expected_shape: tuple[int, int] | None = (cv.PATCH_SIDE, cv.PATCH_SIDE)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def radius(self, F):
        return lr_thickness(F, self)


def lr_thickness(F, m: LRSurrogate):
    return softplus(m.a * np.asarray(F, dtype=np.float64) + m.beta) + m.eps


@dataclass(frozen=True)
class CalibrationCurve:
    """Monotone piecewise-linear force (N) to footprint width (px) map."""

    forces: tuple[float, ...]
    widths: tuple[float, ...]

    def __post_init__(self):
        f, w = np.asarray(self.forces), np.asarray(self.widths)
        if f.size == 0 or f.size != w.size:
            raise ValueError("calibration needs matching, non-empty knot lists")
        if np.any(np.diff(f) <= 0) or np.any(np.diff(w) < 0):
            raise ValueError("calibration knots must be increasing in force and non-decreasing in width")

    def width(self, F):
        out = np.interp(F, self.forces, self.widths)
        return float(out) if np.ndim(out) == 0 else out

    def radius(self, F):
        return 0.5 * self.width(F)


# --------------------------------------------------------------------------
# fast objective for radius-only models


class RadiusObjective:
    """Mean per-triple loss of a constant-radius renderer as a function of radius.

    For every triple the pixels are sorted by squared distance to the nearest
    stamp centre, less the covering allowance for the stamp gap; the loss at
    radius r is then the loss of the unpainted canvas plus a cumulative sum
    over the pixels with d^2 <= r^2.
    """

    def __init__(self, dataset, weighted: bool = True, straight_bend_threshold=STRAIGHT_BEND_THRESHOLD,
                 n_stamps=None):
        if not dataset:
            raise ValueError("dataset is empty")
        self.forces = np.array([t.action.F for t in dataset], dtype=np.float64)
        self._keys, self._cum, self._base = [], [], []
        for t in dataset:
            h, w = t.before.shape
            if weighted:
                wts = cv.stroke_weights(cv.change_mask(t.before, t.after))
            else:
                wts = np.ones_like(t.before)
            total = float(wts.sum())
            base_err = wts * np.abs(t.before - t.after)
            self._base.append(float(base_err.sum()) / total)
            if t.color.a <= 0.0:
                self._keys.append(np.empty(0))
                self._cum.append(np.zeros(1))
                continue
            a = min(max(float(t.color.a), 0.0), 1.0)
            painted = np.clip(t.before * (1.0 - a) + t.color.c * a, 0.0, 1.0)
            delta = (wts * np.abs(painted - t.after) - base_err) / total
            u = t.action
            dx, dy = stamp_offsets(u, n_stamps, straight_bend_threshold)
            ax, ay = math.floor(u.x0), math.floor(u.y0)
            cx = np.ascontiguousarray(u.x0 - ax + dx)
            cy = np.ascontiguousarray(u.y0 - ay + dy)
            # covered at radius r iff d^2 <= r^2 + (spacing / 2)^2, see covering_radius
            half_gap = 0.5 * stamp_spacing(dx, dy)
            # COVER_EPS is ignored here: it only settles exact ties
            d2 = kernels.min_dist2(h, w, cx, cy, ax, ay).ravel() - half_gap * half_gap
            order = np.argsort(d2, kind="stable")
            self._keys.append(d2[order])
            self._cum.append(np.concatenate([[0.0], np.cumsum(delta.ravel()[order])]))
        self._base = np.array(self._base)

    def per_triple(self, radii) -> np.ndarray:
        radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), self.forces.shape)
        out = self._base.copy()
        for i, (keys, cum) in enumerate(zip(self._keys, self._cum)):
            if keys.size:
                r = max(radii[i], 0.0)
                out[i] += cum[np.searchsorted(keys, r * r, side="right")]
        return out

    def __call__(self, radius_fn) -> float:
        return float(np.mean(self.per_triple(radius_fn(self.forces))))


def lr_objective(dataset, weighted: bool = True) -> RadiusObjective:
    return RadiusObjective(dataset, weighted=weighted)


def fit_lr(
    dataset,
    init: LRSurrogate | None = None,
    grid: int = 21,
    levels: int = 2,
    a_range: tuple[float, float] = (-4.0, 16.0),
    beta_range: tuple[float, float] = (-6.0, 14.0),
    rel_tol: float = 1e-4,
    min_step: float = 1e-3,
    objective: RadiusObjective | None = None,
) -> LRSurrogate:
    """Fit ``(a, beta)`` by coarse-to-fine grid search then coordinate descent.

    Only strict improvements replace the incumbent, so the result never has a
    higher loss than ``init`` and a flat objective returns ``init`` itself.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    init = init or LRSurrogate()
    obj = objective or RadiusObjective(dataset, True, init.straight_bend_threshold, init.n_stamps)

    def loss(a, beta):
        return obj(lambda F: softplus(a * F + beta) + init.eps)

    best = (init.a, init.beta)
    best_loss = loss(*best)
    (a_lo, a_hi), (b_lo, b_hi) = a_range, beta_range
    step_a = step_b = 0.0
    for _ in range(levels):
        a_vals = np.linspace(a_lo, a_hi, grid)
        b_vals = np.linspace(b_lo, b_hi, grid)
        step_a, step_b = a_vals[1] - a_vals[0], b_vals[1] - b_vals[0]
        for a in a_vals:
            for beta in b_vals:
                val = loss(a, beta)
                if val < best_loss:
                    best, best_loss = (float(a), float(beta)), val
        a_lo, a_hi = best[0] - 2 * step_a, best[0] + 2 * step_a
        b_lo, b_hi = best[1] - 2 * step_b, best[1] + 2 * step_b

    steps = [step_a / 2.0, step_b / 2.0]
    while True:
        start = best_loss
        for k in range(2):
            for sign in (1.0, -1.0):
                cand = list(best)
                cand[k] += sign * steps[k]
                val = loss(*cand)
                if val < best_loss:
                    best, best_loss = (cand[0], cand[1]), val
        gain = (start - best_loss) / start if start > 0 else 0.0
        if gain < rel_tol:
            if max(steps) <= min_step:
                break
            steps = [s / 2.0 for s in steps]
    if best == (init.a, init.beta):
        return init
    return LRSurrogate(float(best[0]), float(best[1]), init.eps, init.straight_bend_threshold, init.n_stamps,
                       init.expected_shape)


# --------------------------------------------------------------------------
# width calibration


def isotonic(y, weights=None) -> np.ndarray:
    """Pool-adjacent-violators fit of a non-decreasing sequence."""
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    blocks = []  # (mean, weight, count)
    for yi, wi in zip(y, w):
        blocks.append([yi, wi, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, c2 = blocks.pop()
            m1, w1, c1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2])
    return np.concatenate([np.full(c, m) for m, _, c in blocks])


def measured_width(triple, threshold: float = 1e-6,
                   straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD) -> float | None:
    """Footprint width from area and centreline length, correcting for round caps.

    A capsule of length L and radius r has area 2 r L + pi r^2; solving for r
    avoids the upward bias of plain area / length on short strokes. Returns
    None when the footprint touches the canvas border or is empty.
    """
    fp = np.abs(triple.after - triple.before) > threshold
    if not fp.any():
        return None
    if fp[0, :].any() or fp[-1, :].any() or fp[:, 0].any() or fp[:, -1].any():
        return None
    area = float(fp.sum())
    L = arc_length(triple.action, straight_bend_threshold)
    r = (-L + math.sqrt(L * L + math.pi * area)) / math.pi
    return 2.0 * r


def fit_width_calibration(dataset, force_bins: int = 8, threshold: float = 1e-6) -> CalibrationCurve:
    """Per-bin median footprint width, made monotone by isotonic regression."""
    if not dataset:
        raise ValueError("dataset is empty")
    samples = [(t.action.F, measured_width(t, threshold)) for t in dataset]
    samples = [(f, w) for f, w in samples if w is not None]
    if not samples:
        raise ValueError("no measurable footprints in dataset")
    F = np.array([s[0] for s in samples])
    W = np.array([s[1] for s in samples])
    edges = np.linspace(F.min(), F.max(), force_bins + 1)
    idx = np.clip(np.searchsorted(edges, F, side="right") - 1, 0, force_bins - 1)
    knots_f, knots_w, counts = [], [], []
    for b in range(force_bins):
        sel = idx == b
        if sel.any():
            knots_f.append(float(np.median(F[sel])))
            knots_w.append(float(np.median(W[sel])))
            counts.append(int(sel.sum()))
    if len(knots_f) < 3:
        raise ValueError(f"only {len(knots_f)} force bins populated; need at least 3")
    order = np.argsort(knots_f)
    kf = np.array(knots_f)[order]
    kw = isotonic(np.array(knots_w)[order], np.array(counts)[order])
    # equal medians in neighbouring bins would break strict knot ordering
    keep = np.concatenate([[True], np.diff(kf) > 0])
    return CalibrationCurve(tuple(float(v) for v in kf[keep]), tuple(float(v) for v in kw[keep]))


# --------------------------------------------------------------------------
# evaluation and persistence


def eval_model(model, dataset) -> tuple[float, float]:
    """Mean unweighted and mean weighted l1 of one-step predictions."""
    if not dataset:
        raise ValueError("dataset is empty")
    plain, weighted = [], []
    for t in dataset:
        pred = model.predict(t.before, t.action, t.color)
        plain.append(cv.l1(pred, t.after))
        w = cv.stroke_weights(cv.change_mask(t.before, t.after))
        weighted.append(cv.weighted_l1(pred, t.after, w))
    return float(np.mean(plain)), float(np.mean(weighted))


def model_to_dict(model) -> dict:
    d = {"format_version": MODEL_FORMAT_VERSION}
    if isinstance(model, LRSurrogate):
        d.update(kind="lr", a=model.a, beta=model.beta, eps=model.eps)
    elif isinstance(model, CalibrationCurve):
        d.update(kind="calibration", forces=list(model.forces), widths=list(model.widths))
    elif isinstance(model, AnalyticModel):
        law = model.law
        if isinstance(law, WidthLaw):
            d.update(kind="analytic", law=law.to_dict())
        elif isinstance(law, CalibrationCurve):
            d.update(kind="analytic", calibration=model_to_dict(law))
        else:
            raise TypeError(f"cannot serialise width law {law!r}")
    else:
        raise TypeError(f"cannot serialise {model!r}")
    return d


def model_from_dict(d: dict):
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')}")
    kind = d.get("kind")
    if kind == "lr":
        return LRSurrogate(float(d["a"]), float(d["beta"]), float(d.get("eps", LR_EPS)))
    if kind == "calibration":
        return CalibrationCurve(tuple(d["forces"]), tuple(d["widths"]))
    if kind == "analytic":
        if "law" in d:
            return AnalyticModel(WidthLaw(**d["law"]))
        return AnalyticModel(model_from_dict(d["calibration"]))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
