"""Receding-horizon stroke planning with a CMA-adapted sampling optimiser.

Sequences are handled as ``(H, 6)`` arrays in action space. Sampling and
covariance adaptation run in normalised coordinates, i.e. action offsets
divided by per-parameter base scales, so one covariance serves parameters
measured in pixels, degrees and newtons.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import canvas as cv
from .color import (
    EmptyRegionError,
    PatchDatabase,
    gray_to_rgb,
    predict_color,
    select_region_multistep,
)
from .splitter import HEURISTIC_FORCE, SplitterConfig, masks_to_actions, seed_words, split_strokes
from .stroke import (
    ALPHA_INDEX,
    N_PARAMS,
    ActionBounds,
    StrokeAction,
    StrokeColor,
    action_record,
    arc_length,
    bezier_control_points,
    bezier_point,
    clip_action,
    clip_array,
    wrap_angle,
)

SIGMA_MIN = 1e-3
SIGMA_MAX = 2.0
COV_JITTER = 1e-10


@dataclass(frozen=True)
class NominalSequence:
    actions: tuple[StrokeAction, ...]
    colors: tuple[StrokeColor, ...]

    def __post_init__(self):
        if len(self.actions) != len(self.colors):
            raise ValueError("actions and colours differ in length")

    def __len__(self):
        return len(self.actions)

    def to_array(self) -> np.ndarray:
        return np.array([u.to_array() for u in self.actions]).reshape(len(self), N_PARAMS)

    def with_array(self, values: np.ndarray) -> "NominalSequence":
        return NominalSequence(tuple(StrokeAction.from_array(v) for v in values), self.colors)


@dataclass(frozen=True)
class PlannerConfig:
    H: int = 5
    execute_per_cycle: int = 2
    K: int = 64
    M: int = 30
    rho: float = 0.25
    beta: float | None = None
    beta_scale: float = 0.1
    ema: float = 0.7
    seed: int = 0
    sigma0: float = 1.0
    base_scale: float = 0.1
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    workers: int = 1
    termination: float = 0.01
    stroke_budget: int | None = None
    max_cycles: int = 50
    init_force: str = "model"
    fixed_force: float = HEURISTIC_FORCE

    def __post_init__(self):
        if self.H < 1 or self.execute_per_cycle < 1:
            raise ValueError("H and execute_per_cycle must be at least 1")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if not 1 <= self.n_elite <= self.K:
            raise ValueError("rho must select between 1 and K elites")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 < self.ema <= 1.0:
            raise ValueError("ema must lie in (0, 1]")
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("invalid sigma clamps")
        if self.init_force not in ("model", "fixed"):
            raise ValueError("init_force must be 'model' or 'fixed'")

    @property
    def n_elite(self) -> int:
        return int(math.floor(self.rho * self.K))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# sampler state


def chi_mean(n: int) -> float:
    """E||N(0, I_n)||."""
    return math.sqrt(2.0) * math.exp(math.lgamma((n + 1) / 2.0) - math.lgamma(n / 2.0))


@dataclass(frozen=True)
class CMAConstants:
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float

    @classmethod
    def from_weights(cls, weights, n: int = N_PARAMS) -> "CMAConstants":
        w = np.asarray(weights, dtype=np.float64)
        mu_eff = 1.0 / float(w @ w)
        c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
        d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
        c_c = 4.0 / (n + 4.0)
        c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
        c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
        return cls(mu_eff, c_sigma, d_sigma, c_c, c_1, max(c_mu, 0.0))


@dataclass(frozen=True)
class SamplerState:
    sigma: np.ndarray
    Sigma: np.ndarray
    A: np.ndarray
    p_s: np.ndarray
    p_c: np.ndarray
    scales: np.ndarray
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX

    @property
    def H(self) -> int:
        return len(self.sigma)

    @classmethod
    def initial(cls, H: int, scales, sigma0: float = 1.0, sigma_min: float = SIGMA_MIN,
                sigma_max: float = SIGMA_MAX) -> "SamplerState":
        n = len(scales)
        eye = np.broadcast_to(np.eye(n), (H, n, n)).copy()
        return cls(np.full(H, float(sigma0)), eye, eye.copy(), np.zeros((H, n)), np.zeros((H, n)),
                   np.asarray(scales, dtype=np.float64), sigma_min, sigma_max)


def base_scales(bounds: ActionBounds, fraction: float = 0.1) -> np.ndarray:
    scales = fraction * (bounds.hi - bounds.lo)
    return np.where(scales > 0, scales, 1.0)


def wrap_delta(values: np.ndarray) -> np.ndarray:
    """Action differences with the heading component wrapped to [-180, 180)."""
    out = np.array(values, dtype=np.float64, copy=True)
    out[..., ALPHA_INDEX] = np.mod(out[..., ALPHA_INDEX] + 180.0, 360.0) - 180.0
    return out


# --------------------------------------------------------------------------
# sampling and cost


def perturb(U: np.ndarray, state: SamplerState, z: np.ndarray) -> np.ndarray:
    """``U_t + sigma_t * scales * (A_t z_t)`` for noise ``z`` of shape ``(..., H, 6)``."""
    steps = np.einsum("hij,...hj->...hi", state.A, z)
    return U + state.sigma[:, None] * state.scales * steps


def sample_candidates(U: np.ndarray, state: SamplerState, K: int, bounds: ActionBounds,
                      rng: np.random.Generator, clip: bool = True) -> np.ndarray:
    """``K`` candidate sequences; candidate 0 is ``U`` itself."""
    if K < 2:
        raise ValueError("K must be at least 2")
    U = np.asarray(U, dtype=np.float64)
    z = rng.standard_normal((K - 1, *U.shape))
    noisy = perturb(U, state, z)
    if clip:
        noisy = clip_array(noisy, bounds)
    return np.concatenate([U[None], noisy], axis=0)


def rollout(model, I0: np.ndarray, actions, colors) -> np.ndarray:
    img = I0
    for u, c in zip(actions, colors):
        if not isinstance(u, StrokeAction):
            u = StrokeAction.from_array(u)
        img = model.predict(img, u, c)
    return img


def rollout_cost(model, I0, actions, colors, I_g, w) -> tuple[np.ndarray, float]:
    """Terminal image after all actions and its weighted l1 to the goal."""
    final = rollout(model, I0, actions, colors)
    return final, cv.weighted_l1(final, I_g, w)


def evaluate_candidates(model, I0, candidates, colors, I_g, w, workers: int = 1) -> np.ndarray:
    def cost(seq):
        return rollout_cost(model, I0, seq, colors, I_g, w)[1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(cost, candidates)))
    return np.array([cost(seq) for seq in candidates])


# --------------------------------------------------------------------------
# updates


def elite_indices(costs, n_elite: int) -> np.ndarray:
    return np.argsort(np.asarray(costs), kind="stable")[:n_elite]


def softmax_weights(costs, beta: float) -> np.ndarray:
    """``softmax(-J / beta)`` with the minimum subtracted; uniform for ``beta = inf``."""
    J = np.asarray(costs, dtype=np.float64)
    if math.isinf(beta):
        return np.full(J.size, 1.0 / J.size)
    e = np.exp(-(J - J.min()) / beta)
    return e / e.sum()


def temperature(costs, cfg: PlannerConfig) -> float:
    """``cfg.beta`` or ``beta_scale`` times the spread of this iteration's costs."""
    if cfg.beta is not None:
        return cfg.beta
    J = np.asarray(costs, dtype=np.float64)
    spread = float(J.max() - J.min())
    return cfg.beta_scale * spread if spread > 0 else math.inf


def weighted_mean(elites: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted mean of ``(n, H, 6)`` sequences, headings averaged on the circle."""
    if len(weights) == 1 or np.count_nonzero(weights) == 1:
        return elites[int(np.argmax(weights))].copy()
    mean = np.einsum("k,khp->hp", weights, elites)
    rad = np.radians(elites[..., ALPHA_INDEX])
    s = np.einsum("k,kh->h", weights, np.sin(rad))
    c = np.einsum("k,kh->h", weights, np.cos(rad))
    mean[:, ALPHA_INDEX] = wrap_angle(np.degrees(np.arctan2(s, c)))
    return mean


def elite_update(candidates: np.ndarray, costs, cfg: PlannerConfig, U: np.ndarray,
                 bounds: ActionBounds):
    """New nominal from the softmax-weighted elites, blended into ``U`` by ``ema``.

    Returns ``(U_new, elite_index, weights)``.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if len(candidates) != len(costs):
        raise ValueError("candidates and costs differ in length")
    idx = elite_indices(costs, cfg.n_elite)
    weights = softmax_weights(costs[idx], temperature(costs, cfg))
    mean = weighted_mean(candidates[idx], weights)
    if cfg.ema == 1.0:
        new = mean
    else:
        new = U + cfg.ema * wrap_delta(mean - U)
    return clip_array(new, bounds), idx, weights


def cma_update(elites: np.ndarray, weights, state: SamplerState, mean_old: np.ndarray) -> SamplerState:
    """Per-timestep step-size and covariance adaptation from weighted elites.

    ``elites`` has shape ``(n, H, 6)`` and ``mean_old`` is the nominal they
    were sampled around.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(w) == 0 or len(w) != len(elites):
        raise ValueError("need one weight per elite")
    if not math.isclose(float(w.sum()), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError("elite weights must sum to 1")
    n = elites.shape[-1]
    k = CMAConstants.from_weights(w, n)
    chi = chi_mean(n)
    sigma, Sigma, A = state.sigma.copy(), state.Sigma.copy(), state.A.copy()
    p_s, p_c = state.p_s.copy(), state.p_c.copy()
    for t in range(state.H):
        y = wrap_delta(elites[:, t, :] - mean_old[t]) / (sigma[t] * state.scales)
        step = w @ y
        white = np.linalg.solve(A[t], step)
        p_s[t] = (1 - k.c_sigma) * p_s[t] + math.sqrt(k.c_sigma * (2 - k.c_sigma) * k.mu_eff) * white
        p_c[t] = (1 - k.c_c) * p_c[t] + math.sqrt(k.c_c * (2 - k.c_c) * k.mu_eff) * step
        rank_mu = np.einsum("k,ki,kj->ij", w, y, y)
        S = (1 - k.c_1 - k.c_mu) * Sigma[t] + k.c_1 * np.outer(p_c[t], p_c[t]) + k.c_mu * rank_mu
        S = 0.5 * (S + S.T) + COV_JITTER * np.eye(n)
        Sigma[t] = S
        A[t] = np.linalg.cholesky(S)
        growth = math.exp((k.c_sigma / k.d_sigma) * (np.linalg.norm(p_s[t]) / chi - 1.0))
        sigma[t] = min(max(sigma[t] * growth, state.sigma_min), state.sigma_max)
    return replace(state, sigma=sigma, Sigma=Sigma, A=A, p_s=p_s, p_c=p_c)


# --------------------------------------------------------------------------
# window optimisation


@dataclass
class WindowResult:
    U_star: NominalSequence
    best_cost: float
    cost_trace: list[float]
    init_cost: float
    state: SamplerState


def goal_weights(I0: np.ndarray, I_g: np.ndarray) -> np.ndarray:
    return cv.stroke_weights(cv.change_mask(I0, I_g))


def optimize_window(I0, I_g, model, init: NominalSequence, cfg: PlannerConfig,
                    bounds: ActionBounds = ActionBounds(), weights=None, seed=None) -> WindowResult:
    """Sample-and-refine over ``len(init)`` strokes; returns the best sequence evaluated."""
    if len(init) < 1:
        raise ValueError("empty initial sequence")
    w = goal_weights(I0, I_g) if weights is None else weights
    seed = cfg.seed if seed is None else seed
    colors = init.colors
    U = clip_array(init.to_array(), bounds)
    state = SamplerState.initial(len(init), base_scales(bounds, cfg.base_scale), cfg.sigma0,
                                 cfg.sigma_min, cfg.sigma_max)
    best_U, best_cost, init_cost = U.copy(), math.inf, math.nan
    trace: list[float] = []
    for it in range(cfg.M):
        rng = np.random.default_rng(np.random.SeedSequence(seed_words(seed, it)))
        cands = sample_candidates(U, state, cfg.K, bounds, rng)
        costs = evaluate_candidates(model, I0, cands, colors, I_g, w, cfg.workers)
        if it == 0:
            init_cost = float(costs[0])
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_U = float(costs[i]), cands[i].copy()
        trace.append(best_cost)
        if best_cost == 0.0:
            break
        U_new, idx, weights = elite_update(cands, costs, cfg, U, bounds)
        state = cma_update(cands[idx], weights, state, U)
        U = U_new
    return WindowResult(init.with_array(best_U), best_cost, trace, init_cost, state)


# --------------------------------------------------------------------------
# receding horizon


def arc_midpoint(u: StrokeAction) -> np.ndarray:
    return bezier_point(*bezier_control_points(u), 0.5)


def force_for_radius(model, radius: float, bounds: ActionBounds, n: int = 256) -> float:
    """Force whose modelled radius is closest to ``radius`` on a grid over the bounds."""
    grid = np.linspace(bounds.F[0], bounds.F[1], n)
    radii = np.array([model.radius(F) for F in grid])
    return float(grid[int(np.argmin(np.abs(radii - radius)))])


def mask_radius(mask: np.ndarray, u: StrokeAction) -> float:
    """Brush radius of a capsule with the mask's area around the centreline of ``u``."""
    L = arc_length(u)
    area = float(np.count_nonzero(mask))
    return max((-L + math.sqrt(L * L + math.pi * area)) / math.pi, 0.0)


def _default_color(I_g, region) -> StrokeColor:
    vals = I_g[region] if region.any() else I_g.ravel()
    return StrokeColor(float(np.clip(np.median(vals), 0.0, 1.0)))


def predict_stroke_color(model, canvas, I_g, u: StrokeAction, color_db: PatchDatabase | None,
                         diff: np.ndarray) -> tuple[StrokeColor, str]:
    """Colour for ``u`` from the goal pixels under its predicted footprint near the arc midpoint."""
    footprint = model.footprint(u, canvas.shape)
    try:
        S = select_region_multistep(footprint, arc_midpoint(u), max(0.4 * u.l, 1.0))
    except (EmptyRegionError, ValueError):
        S = footprint & diff
    if not S.any():
        return _default_color(I_g, diff), "fallback"
    if color_db is None:
        return _default_color(I_g, S), "median"
    pred = predict_color(gray_to_rgb(I_g), gray_to_rgb(canvas), S, cv.stroke_weights(S), color_db)
    return pred.stroke_color(color_db), pred.label


@dataclass
class CycleLog:
    cycle: int
    horizon: int
    executed: int
    actions: list[dict]
    colors: list[str]
    cost_trace: list[float]
    init_cost: float
    window_cost: float
    planning_loss: float
    execution_loss: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class PlanResult:
    actions: list[StrokeAction]
    colors: list[StrokeColor]
    canvases: list[np.ndarray]
    cycles: list[CycleLog]
    initial_loss: float
    final_loss: float

    @property
    def final_canvas(self) -> np.ndarray:
        return self.canvases[-1]


class PlanningError(RuntimeError):
    def __init__(self, cycle: int, cause: Exception):
        super().__init__(f"cycle {cycle}: {cause}")
        self.cycle = cycle


def reversed_action(u: StrokeAction) -> StrokeAction:
    """The same centreline traversed from the other end."""
    rad = math.radians(u.alpha)
    return StrokeAction(u.x0 + u.l * math.cos(rad), u.y0 + u.l * math.sin(rad), u.l, -u.b,
                        (u.alpha + 180.0) % 360.0, u.F)


def orient(model, canvas, I_g, w, u: StrokeAction, color: StrokeColor, bounds: ActionBounds) -> StrokeAction:
    """Pick the traversal direction that matches the goal better once clipped to bounds."""
    best, best_cost = u, None
    for v in (u, clip_action(reversed_action(u), bounds)):
        cost = cv.weighted_l1(model.predict(canvas, v, color), I_g, w)
        if best_cost is None or cost < best_cost:
            best, best_cost = v, cost
    return best


def initial_sequence(model, canvas, I_g, H: int, cfg: PlannerConfig, bounds: ActionBounds,
                     splitter: SplitterConfig | None, color_db, seed) -> tuple[NominalSequence, list[str]]:
    raw = np.abs(canvas - I_g) > cv.DIFF_THRESHOLD
    splitter = replace(splitter or SplitterConfig(), K=H)
    masks = split_strokes(raw, splitter, seed=seed) if raw.any() else []
    def model_force(mask, u):
        return force_for_radius(model, mask_radius(mask, u), bounds)

    force_fn = model_force if cfg.init_force == "model" else None
    actions = masks_to_actions(masks, H, cfg.fixed_force, bounds, canvas.shape, force_fn)
    diff = cv.change_mask(canvas, I_g)
    w = cv.stroke_weights(diff)
    oriented, colors, labels = [], [], []
    for u in actions:
        c, label = predict_stroke_color(model, canvas, I_g, u, color_db, diff)
        oriented.append(orient(model, canvas, I_g, w, u, c, bounds))
        colors.append(c)
        labels.append(label)
    return NominalSequence(tuple(oriented), tuple(colors)), labels


def warm_start(prev: NominalSequence | None, n_exec: int, fresh: NominalSequence) -> NominalSequence:
    """Unexecuted tail of the previous plan, topped up from ``fresh`` to its length."""
    H = len(fresh)
    if prev is None:
        return fresh
    acts = list(prev.actions[n_exec:])[:H]
    cols = list(prev.colors[n_exec:])[:H]
    k = H - len(acts)
    if k > 0:
        acts += fresh.actions[:k]
        cols += fresh.colors[:k]
    return NominalSequence(tuple(acts), tuple(cols))


def plan_receding(I0, I_g, model, executor, cfg: PlannerConfig, color_db: PatchDatabase | None = None,
                  bounds: ActionBounds = ActionBounds(), splitter: SplitterConfig | None = None,
                  stroke_budget: int | None = None, on_cycle=None) -> PlanResult:
    """Plan ``H`` strokes, execute the first few, re-observe and repeat.

    Stops when the stroke budget is spent, the goal loss drops below
    ``cfg.termination`` or nothing differs any more. ``executor`` needs an
    ``execute(canvas, action, color)`` method.
    """
    if I0.shape != I_g.shape:
        raise cv.CanvasError(f"dimension mismatch: {I0.shape} vs {I_g.shape}")
    budget = stroke_budget if stroke_budget is not None else cfg.stroke_budget
    canvas = np.array(I0, dtype=np.float64, copy=True)
    w_goal = goal_weights(I0, I_g)
    initial_loss = cv.weighted_l1(canvas, I_g, w_goal)
    actions, colors, canvases, cycles = [], [], [canvas], []
    previous = None
    for cycle in range(cfg.max_cycles):
        remaining = cfg.H if budget is None else budget - len(actions)
        if remaining <= 0:
            break
        diff = cv.change_mask(canvas, I_g)
        if not diff.any() or cv.weighted_l1(canvas, I_g, w_goal) < cfg.termination:
            break
        H = min(cfg.H, remaining)
        try:
            seed = [cfg.seed, cycle]
            init, labels = initial_sequence(model, canvas, I_g, H, cfg, bounds, splitter, color_db, seed)
            w = cv.stroke_weights(diff)
            if previous is not None:
                carried = warm_start(previous, cfg.execute_per_cycle, init)
                fresh_cost = rollout_cost(model, canvas, init.actions, init.colors, I_g, w)[1]
                if rollout_cost(model, canvas, carried.actions, carried.colors, I_g, w)[1] < fresh_cost:
                    init = carried
                    labels = ["carried"] * len(init)
            res = optimize_window(canvas, I_g, model, init, cfg, bounds, w, seed=seed)
            n_exec = min(cfg.execute_per_cycle, H)
            prefix = res.U_star.actions[:n_exec]
            prefix_colors = res.U_star.colors[:n_exec]
            planned = rollout(model, canvas, prefix, prefix_colors)
            previous = res.U_star
            for u, c in zip(prefix, prefix_colors):
                canvas = executor.execute(canvas, u, c)
                actions.append(u)
                colors.append(c)
                canvases.append(canvas)
        except Exception as exc:
            raise PlanningError(cycle, exc) from exc
        log = CycleLog(
            cycle, H, n_exec,
            [action_record(u, c) for u, c in zip(res.U_star.actions, res.U_star.colors)],
            labels, res.cost_trace, res.init_cost, res.best_cost,
            cv.weighted_l1(planned, I_g, w), cv.weighted_l1(canvas, I_g, w),
        )
        cycles.append(log)
        if on_cycle is not None:
            on_cycle(log, planned, canvas)
    return PlanResult(actions, colors, canvases, cycles, initial_loss, cv.weighted_l1(canvas, I_g, w_goal))
