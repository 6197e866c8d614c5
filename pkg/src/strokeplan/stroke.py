"""Stroke geometry: action parameters, Bezier centreline, width law, rasterizer."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .canvas import CanvasError

PARAM_NAMES = ("x0", "y0", "l", "b", "alpha", "F")
N_PARAMS = len(PARAM_NAMES)
ALPHA_INDEX = 4
FORCE_INDEX = 5
SENSOR_FORCE_RANGE = (0.1, 4.0)
STRAIGHT_BEND_THRESHOLD = 0.75


@dataclass(frozen=True)
class StrokeAction:
    """One brushstroke: start point, length, bend (px), heading (deg), force (N)."""

    x0: float
    y0: float
    l: float
    b: float
    alpha: float
    F: float

    def to_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.l, self.b, self.alpha, self.F], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "StrokeAction":
        v = [float(x) for x in values]
        if len(v) != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} values, got {len(v)}")
        return cls(*v)


@dataclass(frozen=True)
class StrokeColor:
    """Grayscale paint value ``c`` with opacity ``a``; ``rgba`` is kept for reports."""

    c: float
    a: float = 1.0
    rgba: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if not (0.0 <= self.c <= 1.0 and 0.0 <= self.a <= 1.0):
            raise ValueError(f"color out of range: c={self.c}, a={self.a}")


@dataclass(frozen=True)
class ActionBounds:
    x0: tuple[float, float] = (10.0, 90.0)
    y0: tuple[float, float] = (10.0, 90.0)
    l: tuple[float, float] = (5.0, 70.0)
    b: tuple[float, float] = (-15.0, 15.0)
    alpha: tuple[float, float] = (0.0, 360.0)
    F: tuple[float, float] = SENSOR_FORCE_RANGE

    def __post_init__(self):
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"bounds for {name} have min > max")

    @property
    def lo(self) -> np.ndarray:
        return np.array([getattr(self, n)[0] for n in PARAM_NAMES], dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.array([getattr(self, n)[1] for n in PARAM_NAMES], dtype=np.float64)

    @property
    def wraps_alpha(self) -> bool:
        lo, hi = self.alpha
        return hi - lo >= 360.0

    def to_dict(self) -> dict:
        return {n: list(getattr(self, n)) for n in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionBounds":
        return cls(**{k: tuple(float(x) for x in v) for k, v in d.items() if k in PARAM_NAMES})


@dataclass(frozen=True)
class WidthLaw:
    """Force-to-radius power law ``r(F) = r_min + k * F**gamma``."""

    r_min: float = 1.5
    k: float = 6.0
    gamma: float = 0.7

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def radius(self, F):
        return force_to_radius(F, self)

    def to_dict(self) -> dict:
        return asdict(self)


def force_to_radius(F, law: WidthLaw):
    F = np.maximum(np.asarray(F, dtype=np.float64), 0.0)
    r = law.r_min + law.k * F ** law.gamma
    return float(r) if r.ndim == 0 else r


def _wrap(values, lo=0.0):
    out = lo + np.mod(np.asarray(values, dtype=np.float64) - lo, 360.0)
    # np.mod of a tiny negative rounds up to exactly 360
    return np.where(out >= lo + 360.0, lo, out)


def wrap_angle(alpha):
    out = _wrap(alpha)
    return float(out) if out.ndim == 0 else out


def clip_array(values: np.ndarray, bounds: ActionBounds) -> np.ndarray:
    """Clamp ``(..., 6)`` action arrays; headings wrap when bounds span 360 deg."""
    out = np.clip(values, bounds.lo, bounds.hi)
    if bounds.wraps_alpha:
        lo = bounds.alpha[0]
        out[..., ALPHA_INDEX] = _wrap(values[..., ALPHA_INDEX], lo)
    return out


def clip_action(u: StrokeAction, bounds: ActionBounds) -> StrokeAction:
    return StrokeAction.from_array(clip_array(u.to_array(), bounds))


def bezier_control_points(u: StrokeAction):
    """Quadratic Bezier control points ``(q0, q1, q2)`` as (x, y) arrays."""
    rad = math.radians(u.alpha)
    t = np.array([math.cos(rad), math.sin(rad)])
    n = np.array([-math.sin(rad), math.cos(rad)])
    p0 = np.array([u.x0, u.y0], dtype=np.float64)
    return p0, p0 + 0.5 * u.l * t + u.b * n, p0 + u.l * t


def bezier_point(q0, q1, q2, s):
    s = np.asarray(s, dtype=np.float64)[..., None]
    return (1 - s) ** 2 * q0 + 2 * (1 - s) * s * q1 + s ** 2 * q2


_DENSE = np.linspace(0.0, 1.0, 129)


def _relative_curve(u: StrokeAction, straight_bend_threshold: float):
    rad = math.radians(u.alpha)
    t = np.array([math.cos(rad), math.sin(rad)])
    n = np.array([-math.sin(rad), math.cos(rad)])
    straight = abs(u.b) < straight_bend_threshold
    q1 = 0.5 * u.l * t + (0.0 if straight else u.b) * n
    return np.zeros(2), q1, u.l * t, straight


def arc_length(u: StrokeAction, straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD) -> float:
    q0, q1, q2, straight = _relative_curve(u, straight_bend_threshold)
    if straight:
        return abs(float(u.l))
    pts = bezier_point(q0, q1, q2, _DENSE)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def min_curvature_radius(u: StrokeAction, straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD) -> float:
    """Tightest radius of curvature along the centreline (at its midpoint)."""
    if abs(u.b) < straight_bend_threshold or u.b == 0:
        return math.inf
    return u.l * u.l / (4.0 * abs(u.b))


def default_stamp_count(length: float) -> int:
    return max(2, int(math.ceil(2.0 * length)))


def stamp_offsets(
    u: StrokeAction,
    n_stamps: int | None = None,
    straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray]:
    """Stamp centres relative to ``p0``, uniformly spaced in arc length."""
    q0, q1, q2, straight = _relative_curve(u, straight_bend_threshold)
    if straight:
        length = abs(float(u.l))
        n = n_stamps or default_stamp_count(length)
        s = np.linspace(0.0, 1.0, n)
        return s * q2[0], s * q2[1]
    return kernels.bezier_stamps(float(q1[0]), float(q1[1]), float(q2[0]), float(q2[1]),
                                 len(_DENSE), int(n_stamps or 0))


def _anchor(v: float) -> tuple[int, float]:
    a = math.floor(v)
    return int(a), v - a


COVER_EPS = 1e-9  # midpoints between centres sit exactly on the covering circle


def stamp_spacing(dx, dy) -> float:
    """Largest gap between consecutive stamp centres."""
    if len(dx) < 2:
        return 0.0
    return float(np.max(np.hypot(np.diff(dx), np.diff(dy))))


def covering_radius(radius, spacing: float):
    """Disk radius whose stamped union contains the swept disk of ``radius``.

    Midway between two centres ``spacing`` apart, a plain disk union falls
    short of the swept boundary; widening each disk closes those notches.
    """
    r = np.asarray(radius, dtype=np.float64)
    return np.where(r > 0.0, np.sqrt(r * r + 0.25 * spacing * spacing) + COVER_EPS, r)


def stamp_mask(shape, x0, y0, dx, dy, radius, spacing: float | None = None) -> np.ndarray:
    """Boolean footprint of disks at ``p0 + (dx, dy)``; ``radius`` scalar or per stamp.

    ``spacing`` is the nominal centre gap used for the covering radius; it
    defaults to the measured gap of ``(dx, dy)``.
    """
    if spacing is None:
        spacing = stamp_spacing(dx, dy)
    radius = covering_radius(radius, spacing)
    ax, fx = _anchor(float(x0))
    ay, fy = _anchor(float(y0))
    cx = np.ascontiguousarray(fx + np.asarray(dx, dtype=np.float64))
    cy = np.ascontiguousarray(fy + np.asarray(dy, dtype=np.float64))
    r = np.broadcast_to(np.asarray(radius, dtype=np.float64), cx.shape).copy()
    mask = np.zeros(shape, dtype=np.bool_)
    kernels.stamp_disks(mask, cx, cy, r, ax, ay)
    return mask


def stroke_footprint(
    u: StrokeAction,
    shape,
    radius: float,
    n_stamps: int | None = None,
    straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD,
) -> np.ndarray:
    dx, dy = stamp_offsets(u, n_stamps, straight_bend_threshold)
    return stamp_mask(shape, u.x0, u.y0, dx, dy, radius)


def rasterize_stroke(
    u: StrokeAction,
    color: StrokeColor,
    shape,
    law,
    n_stamps: int | None = None,
    straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray]:
    """Disk-stamped stroke as ``(alpha_map, footprint)``.

    ``law`` is anything with a ``radius(F)`` method.
    """
    if n_stamps is not None and n_stamps < 2:
        raise ValueError("n_stamps must be at least 2")
    if len(shape) != 2 or min(shape) <= 0:
        raise CanvasError(f"invalid canvas shape {shape}")
    covered = stroke_footprint(u, shape, law.radius(u.F), n_stamps, straight_bend_threshold)
    alpha_map = np.where(covered, float(color.a), 0.0)
    return alpha_map, alpha_map > 0.0


def composite(base: np.ndarray, alpha_map: np.ndarray, color: StrokeColor) -> np.ndarray:
    """Blend ``color`` over ``base`` with effective opacity ``clip(alpha_map, 0, 1)``."""
    if base.shape != alpha_map.shape:
        raise CanvasError(f"dimension mismatch: {base.shape} vs {alpha_map.shape}")
    a_eff = np.clip(alpha_map, 0.0, 1.0)
    return np.clip(base * (1.0 - a_eff) + color.c * a_eff, 0.0, 1.0)


def paint(base: np.ndarray, covered: np.ndarray, color: StrokeColor) -> np.ndarray:
    """Same arithmetic as :func:`composite`, touching only covered pixels."""
    out = base.copy()
    if color.a > 0.0:
        a = min(max(float(color.a), 0.0), 1.0)
        vals = base[covered] * (1.0 - a) + color.c * a
        out[covered] = np.clip(vals, 0.0, 1.0)
    return out


# --------------------------------------------------------------------------
# line-delimited action records


def action_record(u: StrokeAction, color: StrokeColor) -> dict:
    return {"x0": u.x0, "y0": u.y0, "l": u.l, "b": u.b, "alpha_deg": u.alpha, "F": u.F,
            "c": color.c, "a": color.a}


def dumps_action(u: StrokeAction, color: StrokeColor) -> str:
    return json.dumps(action_record(u, color), sort_keys=True)


def loads_action(line: str) -> tuple[StrokeAction, StrokeColor]:
    d = json.loads(line)
    u = StrokeAction(float(d["x0"]), float(d["y0"]), float(d["l"]), float(d["b"]),
                     float(d["alpha_deg"]), float(d["F"]))
    return u, StrokeColor(float(d["c"]), float(d["a"]))


@dataclass
class StrokeRenderer:
    """Analytic stroke renderer bundling a width law with stamping policy."""

    law: object = field(default_factory=WidthLaw)
    straight_bend_threshold: float = STRAIGHT_BEND_THRESHOLD
    n_stamps: int | None = None

    def footprint(self, u: StrokeAction, shape) -> np.ndarray:
        return stroke_footprint(u, shape, self.law.radius(u.F), self.n_stamps,
                                self.straight_bend_threshold)

    def render(self, canvas: np.ndarray, u: StrokeAction, color: StrokeColor) -> np.ndarray:
        if color.a <= 0.0:
            return canvas.copy()
        return paint(canvas, self.footprint(u, canvas.shape), color)
