"""Planning-stage vs execution-stage evaluation and report files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import canvas as cv
from .color import PatchDatabase
from .executor import Executor, ExecutorConfig, sample_actions
from .planner import (
    PlannerConfig,
    initial_sequence,
    optimize_window,
    plan_receding,
    predict_stroke_color,
)
from .splitter import HEURISTIC_FORCE, SplitterConfig, SplitterError, heuristic_recover
from .stroke import ActionBounds, StrokeAction, StrokeColor, StrokeRenderer, WidthLaw, action_record, clip_action

NA = "N/A"
REGRESSION_TOL = 0.02
DEFAULT_GRAYS = (0.0, 0.2, 0.4, 0.6)


def fully_on_canvas(renderer: StrokeRenderer, u: StrokeAction, shape) -> bool:
    """True when no part of the footprint would be clipped by the canvas border."""
    h, w = shape
    pad = int(np.ceil(u.l + renderer.law.radius(u.F))) + 2
    inner = np.count_nonzero(renderer.footprint(u, shape))
    moved = StrokeAction(u.x0 + pad, u.y0 + pad, u.l, u.b, u.alpha, u.F)
    return inner == np.count_nonzero(renderer.footprint(moved, (h + 2 * pad, w + 2 * pad)))


def self_targets(n: int, seed: int = 0, law=None, bounds: ActionBounds = ActionBounds(),
                 grays=DEFAULT_GRAYS, on_canvas: bool = True, size: int = cv.PATCH_SIDE):
    """``n`` blank-canvas single-stroke targets as ``(pairs, actions, colors)``.

    With ``on_canvas`` rejected draws are resampled until the whole footprint
    fits, so an exact reproduction exists inside the action bounds.
    """
    renderer = StrokeRenderer(law or WidthLaw())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    blank = cv.blank_canvas(size)
    pairs, actions, colors = [], [], []
    while len(pairs) < n:
        u = sample_actions(rng, bounds, 1)[0]
        color = StrokeColor(float(rng.choice(grays)))
        if on_canvas and not fully_on_canvas(renderer, u, blank.shape):
            continue
        pairs.append((blank, renderer.render(blank, u, color)))
        actions.append(u)
        colors.append(color)
    return pairs, actions, colors


def synthetic_painting(n_strokes: int = 17, checkpoints=(5, 10, 15, 17), seed: int = 0, law=None,
                       bounds: ActionBounds = ActionBounds(), grays=DEFAULT_GRAYS, size: int = cv.PATCH_SIDE):
    """Random stroke painting; returns the canvases after each checkpoint stroke count."""
    if list(checkpoints) != sorted(checkpoints) or not checkpoints or checkpoints[-1] > n_strokes:
        raise ValueError("checkpoints must be increasing and within the stroke count")
    renderer = StrokeRenderer(law or WidthLaw())
    rng = np.random.default_rng(seed)
    actions = sample_actions(rng, bounds, n_strokes)
    colors = [StrokeColor(float(rng.choice(grays))) for _ in actions]
    img = cv.blank_canvas(size)
    images = [img]
    for u, c in zip(actions, colors):
        img = renderer.render(img, u, c)
        images.append(img)
    return [images[k] for k in checkpoints], actions, colors


def budgets_for(checkpoints) -> list[int]:
    """Strokes between consecutive checkpoints."""
    return [int(v) for v in np.diff([0, *checkpoints])]


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def footprint_iou(before, result, target, threshold: float = cv.DIFF_THRESHOLD) -> float:
    """IoU of the pixels changed by the execution and by the target."""
    a = np.abs(result - before) > threshold
    b = np.abs(target - before) > threshold
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def _stats(values) -> dict:
    vals = [v for v in values if isinstance(v, (int, float)) and not isinstance(v, bool)]
    if not vals:
        return {"mean": NA, "sd": NA, "n": 0}
    arr = np.array(vals, dtype=np.float64)
    return {"mean": float(arr.mean()), "sd": float(arr.std()), "n": len(vals)}


METRICS = ("planning_loss", "execution_loss", "iou")


@dataclass
class MetricsReport:
    name: str
    rows: list[dict]
    provenance: dict
    flags: list[str] = field(default_factory=list)

    @property
    def aggregates(self) -> dict:
        return {m: _stats(r.get(m) for r in self.rows) for m in METRICS}

    def mean(self, metric: str) -> float:
        return self.aggregates[metric]["mean"]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "provenance", **self.provenance}, sort_keys=True)]
        lines += [json.dumps({"type": "case", **r}, sort_keys=True) for r in self.rows]
        lines.append(json.dumps({"type": "aggregate", **self.aggregates}, sort_keys=True))
        lines += [json.dumps({"type": "flag", "message": f}, sort_keys=True) for f in self.flags]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        def fmt(v):
            return f"{v:.6f}" if isinstance(v, float) else str(v)

        head = f"{'case':>6}  {'planning':>10}  {'execution':>10}  {'iou':>8}"
        out = [f"# {self.name}",
               f"# config {self.provenance.get('config_hash')}  seed {self.provenance.get('seed')}"
               f"  version {self.provenance.get('version')}", head]
        for r in self.rows:
            out.append(f"{r['case']:>6}  {fmt(r['planning_loss']):>10}  {fmt(r['execution_loss']):>10}"
                       f"  {fmt(r['iou']):>8}")
        for stat in ("mean", "sd"):
            agg = self.aggregates
            out.append(f"{stat:>6}  {fmt(agg['planning_loss'][stat]):>10}  "
                       f"{fmt(agg['execution_loss'][stat]):>10}  {fmt(agg['iou'][stat]):>8}")
        out += [f"! {f}" for f in self.flags]
        return "\n".join(out) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table, jsonl = out / f"{self.name}.txt", out / f"{self.name}.jsonl"
        table.write_text(self.to_table())
        jsonl.write_text(self.to_jsonl())
        return table, jsonl


def provenance(config: dict, seed: int) -> dict:
    return {"config_hash": config_hash(config), "seed": seed, "version": __version__}


def eval_single_strokes(
    targets,
    model,
    cfg: PlannerConfig,
    world: ExecutorConfig = ExecutorConfig(),
    law=None,
    mode: str = "mpc",
    color_db: PatchDatabase | None = None,
    bounds: ActionBounds = ActionBounds(),
    splitter: SplitterConfig | None = None,
    config: dict | None = None,
    name: str = "single_strokes",
) -> MetricsReport:
    """One-step planning toward each ``(before, after)`` pair, then execution.

    Losses are weighted by the target's change mask. ``mode="heuristic"``
    skips optimisation and executes the skeleton estimate at a fixed force,
    so it has no planning-stage loss.
    """
    targets = list(targets)
    if not targets:
        raise ValueError("no evaluation cases")
    if mode not in ("mpc", "heuristic"):
        raise ValueError(f"unknown mode {mode!r}")
    one = replace(cfg, H=1, execute_per_cycle=1)
    renderer = StrokeRenderer(law) if law is not None else None
    rows = []
    for i, (before, after) in enumerate(targets):
        if before.shape != after.shape:
            raise cv.CanvasError(f"case {i}: dimension mismatch {before.shape} vs {after.shape}")
        w = cv.stroke_weights(cv.change_mask(before, after))
        seed = [cfg.seed, i]
        if mode == "mpc":
            init, _ = initial_sequence(model, before, after, 1, one, bounds, splitter, color_db, seed)
            res = optimize_window(before, after, model, init, one, bounds, w, seed=seed)
            u, color = res.U_star.actions[0], res.U_star.colors[0]
            planning = cv.weighted_l1(model.predict(before, u, color), after, w)
        else:
            raw = np.abs(after - before) > cv.DIFF_THRESHOLD
            try:
                u = heuristic_recover(cv.largest_component(raw), HEURISTIC_FORCE)
            except (SplitterError, cv.CanvasError):
                u = initial_sequence(model, before, after, 1, replace(one, init_force="fixed"),
                                     bounds, splitter, color_db, seed)[0].actions[0]
            u = clip_action(u, bounds)
            color, _ = predict_stroke_color(model, before, after, u, color_db, cv.change_mask(before, after))
            planning = NA
        executor = Executor(world, stream=i, renderer=renderer) if renderer else Executor(world, stream=i)
        executed = executor.execute(before, u, color)
        rows.append({
            "case": i,
            "planning_loss": planning,
            "execution_loss": cv.weighted_l1(executed, after, w),
            "iou": footprint_iou(before, executed, after),
            "action": action_record(u, color),
        })
    cfg_dict = config if config is not None else {"planner": one.to_dict(), "mode": mode,
                                                  "executor": world.to_dict()}
    return MetricsReport(name, rows, provenance(cfg_dict, cfg.seed))


def eval_multistep(
    checkpoints,
    model,
    cfg: PlannerConfig,
    executor,
    budgets=None,
    color_db: PatchDatabase | None = None,
    bounds: ActionBounds = ActionBounds(),
    splitter: SplitterConfig | None = None,
    start=None,
    config: dict | None = None,
    name: str = "multistep",
    tol: float = REGRESSION_TOL,
):
    """Receding-horizon planning toward each checkpoint in turn, carrying the canvas.

    Window losses are weighted by the change mask between the start canvas
    and that checkpoint. A window whose loss exceeds the previous one by
    more than ``tol`` is flagged. Returns ``(report, results)``.
    """
    checkpoints = [np.asarray(c, dtype=np.float64) for c in checkpoints]
    if not checkpoints:
        raise ValueError("no checkpoints")
    shape = checkpoints[0].shape
    for k, c in enumerate(checkpoints):
        if c.shape != shape:
            raise cv.CanvasError(f"checkpoint {k} has shape {c.shape}, expected {shape}")
    canvas = cv.blank_canvas(shape[0]) if start is None else np.array(start, dtype=np.float64)
    if canvas.shape != shape:
        raise cv.CanvasError(f"start canvas has shape {canvas.shape}, expected {shape}")
    origin = canvas.copy()
    if budgets is not None and len(budgets) != len(checkpoints):
        raise ValueError("one stroke budget per checkpoint required")
    rows, results, flags = [], [], []
    prev = None
    for k, target in enumerate(checkpoints):
        budget = None if budgets is None else budgets[k]
        res = plan_receding(canvas, target, model, executor, replace(cfg, seed=cfg.seed + 1000 * k),
                            color_db, bounds, splitter, stroke_budget=budget)
        canvas = res.final_canvas
        w = cv.stroke_weights(cv.change_mask(origin, target))
        loss = cv.weighted_l1(canvas, target, w)
        planning = res.cycles[-1].planning_loss if res.cycles else loss
        rows.append({
            "case": k,
            "planning_loss": float(planning),
            "execution_loss": float(loss),
            "iou": footprint_iou(origin, canvas, target),
            "baseline_loss": float(cv.weighted_l1(origin, target, w)),
            "strokes": len(res.actions),
            "cycles": len(res.cycles),
        })
        if prev is not None and loss > prev + tol:
            flags.append(f"checkpoint {k}: loss {loss:.4f} regressed from {prev:.4f}")
        prev = loss
        results.append(res)
    cfg_dict = config if config is not None else {"planner": cfg.to_dict(), "budgets": budgets}
    return MetricsReport(name, rows, provenance(cfg_dict, cfg.seed), flags), results
