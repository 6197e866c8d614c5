"""Normal-force admittance loop on a one-dimensional spring-damper canvas.

The outer loop accumulates a feedforward force from the low-pass filtered
tracking error until the measured contact force settles at the commanded
value; after that the stroke would proceed under impedance control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .stroke import SENSOR_FORCE_RANGE


@dataclass(frozen=True)
class ForceLoopState:
    F_ff: float = 0.0
    e_bar: float = 0.0
    k_f: float = 4.0
    lam: float = 0.8
    dt: float = 0.005

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")
        if self.dt <= 0 or self.k_f <= 0:
            raise ValueError("dt and k_f must be positive")


@dataclass(frozen=True)
class ContactModel:
    """Canvas spring-damper pressed by an impedance-controlled tip.

    The tip moves with ``arm_damping * depth_rate = F_ff - stiffness * depth``
    (quasi-static, massless), and the sensor reads
    ``max(0, stiffness * depth + damping * depth_rate)``.
    """

    stiffness: float = 50.0
    damping: float = 0.5
    depth: float = 0.0
    arm_damping: float = 2.0

    def __post_init__(self):
        if self.stiffness <= 0:
            raise ValueError("stiffness must be positive")

    def step(self, F_ff: float, dt: float) -> tuple["ContactModel", float]:
        rate = (F_ff - self.stiffness * self.depth) / (self.arm_damping + self.damping)
        depth = self.depth + rate * dt
        force = max(0.0, self.stiffness * depth + self.damping * rate)
        return replace(self, depth=depth), force

    def force(self) -> float:
        return max(0.0, self.stiffness * self.depth)


@dataclass(frozen=True)
class SensorFilter:
    bias: float = 0.0
    alpha: float = 0.2
    y_prev: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


def estimate_bias(stationary_samples) -> float:
    """Mean of a stationary window (50 samples by convention)."""
    samples = np.asarray(stationary_samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("bias window is empty")
    return float(samples.mean())


def filter_sensor(raw: float, filt: SensorFilter) -> tuple[float, SensorFilter]:
    x = raw - filt.bias
    y = filt.alpha * x + (1.0 - filt.alpha) * filt.y_prev
    return y, replace(filt, y_prev=y)


def admittance_step(state: ForceLoopState, F_star: float, F_meas: float) -> ForceLoopState:
    e_bar = state.lam * state.e_bar + (1.0 - state.lam) * (F_star - F_meas)
    return replace(state, e_bar=e_bar, F_ff=state.F_ff + state.k_f * e_bar * state.dt)


@dataclass
class PressResult:
    converged: bool
    steps: int
    trace: list = field(default_factory=list)

    @property
    def final_force(self) -> float:
        tail = self.trace[-10:]
        return float(np.mean(tail)) if tail else 0.0

    def overshoot(self, F_star: float) -> float:
        return max(0.0, max(self.trace, default=0.0) - F_star)

    def write_trace(self, path) -> None:
        lines = [f"{k} {f:.12g}" for k, f in enumerate(self.trace)]
        Path(path).write_text("# step F_meas\n" + "\n".join(lines) + "\n")


def simulate_press(
    F_star: float,
    state: ForceLoopState | None = None,
    contact: ContactModel | None = None,
    max_steps: int = 5000,
    tol: float = 0.01,
    hold: int = 10,
) -> PressResult:
    """Drive the admittance loop against the contact model.

    Convergence is the first step from which ``|F_meas - F_star| < tol`` holds
    for ``hold`` consecutive steps. Divergence (non-finite or runaway force)
    ends the run early as non-converged rather than raising.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = state or ForceLoopState()
    contact = contact or ContactModel()
    trace = []
    run_start, run_len = 0, 0
    F_meas = contact.force()
    for k in range(max_steps):
        state = admittance_step(state, F_star, F_meas)
        contact, F_meas = contact.step(state.F_ff, state.dt)
        if not math.isfinite(F_meas) or abs(state.F_ff) > 1e6:
            return PressResult(False, max_steps, trace)
        trace.append(F_meas)
        if abs(F_meas - F_star) < tol:
            if run_len == 0:
                run_start = k
            run_len += 1
            if run_len >= hold:
                # keep recording until the trace shows the settled value
                return PressResult(True, run_start, trace)
        else:
            run_len = 0
    return PressResult(False, max_steps, trace)


def settle(F_star: float, **kwargs) -> PressResult:
    """Press from rest at the default gains, continuing well past convergence."""
    lo, hi = SENSOR_FORCE_RANGE
    if not lo <= F_star <= hi:
        raise ValueError(f"target force {F_star} outside sensor range [{lo}, {hi}] N")
    return simulate_press(F_star, hold=kwargs.pop("hold", 50), **kwargs)
