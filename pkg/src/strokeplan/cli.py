"""Command-line entry points.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
subcommand fails at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import canvas as cv
from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import AnalyticModel, eval_model, fit_lr, fit_width_calibration, load_model, model_to_dict, save_model
from .evaluation import (
    budgets_for,
    eval_multistep,
    eval_single_strokes,
    self_targets,
    synthetic_painting,
)
from .executor import Executor, load_dataset, save_dataset, selfplay_collect
from .force import ContactModel, ForceLoopState, simulate_press
from .splitter import save_overlay, split_strokes
from .stroke import StrokeColor, loads_action

log = logging.getLogger("strokeplan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _model(cfg: ExperimentConfig):
    if cfg.data.model_source == "oracle":
        return AnalyticModel(cfg.width_law)
    path = cfg.model_path
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path} (run `fit` first)")
    return load_model(path)


def _executor(cfg: ExperimentConfig) -> Executor:
    return Executor(cfg.executor, law=cfg.width_law)


def cmd_selfplay(cfg: ExperimentConfig) -> None:
    colors = [StrokeColor(g) for g in cfg.grays]
    data = selfplay_collect(cfg.data.selfplay_size, cfg.bounds, colors, cfg.executor,
                            cfg.data.strokes_per_canvas, law=cfg.width_law)
    root = save_dataset(data, cfg.dataset_path, cfg.bounds, cfg.executor, cfg.seed)
    print(f"wrote {len(data)} triples to {root}")


def cmd_fit(cfg: ExperimentConfig) -> None:
    data = load_dataset(cfg.dataset_path)
    lr = fit_lr(data)
    calib = AnalyticModel(fit_width_calibration(data))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(lr, cfg.model_path)
    save_model(calib, cfg.out_dir / "calibration.json")
    report = {"seed": cfg.seed, "triples": len(data), "lr": model_to_dict(lr)}
    for name, model in (("lr", lr), ("calibration", calib)):
        l1, wl1 = eval_model(model, data)
        report[f"{name}_train_l1"], report[f"{name}_train_wl1"] = l1, wl1
    _dump(cfg.out_dir / "fit_report.json", report)
    print(f"a={lr.a:.6g} beta={lr.beta:.6g} train l1={report['lr_train_l1']:.6f} -> {cfg.model_path}")


def _target_pairs(cfg: ExperimentConfig, n: int):
    t = cfg.targets
    if t.before is not None:
        return [(cv.load_gray_png(t.before), cv.load_gray_png(t.after))]
    return self_targets(n, cfg.seed, cfg.width_law, cfg.bounds, cfg.grays)[0]


def cmd_plan_stroke(cfg: ExperimentConfig) -> None:
    model, db = _model(cfg), cfg.palette()
    pairs = _target_pairs(cfg, 1)
    report = eval_single_strokes(pairs, model, cfg.planner, cfg.executor, cfg.width_law, "mpc", db,
                                 cfg.bounds, cfg.splitter, cfg.to_dict(), "plan_stroke")
    report.write(cfg.out_dir)
    before, after = pairs[0]
    row = report.rows[0]
    u, color = loads_action(json.dumps(row["action"]))
    cv.save_gray_png(cfg.out_dir / "target.png", after)
    cv.save_gray_png(cfg.out_dir / "planned.png", model.predict(before, u, color))
    cv.save_gray_png(cfg.out_dir / "executed.png", _executor(cfg).execute(before, u, color))
    print(report.to_table(), end="")


def cmd_plan_painting(cfg: ExperimentConfig) -> None:
    model, db = _model(cfg), cfg.palette()
    t = cfg.targets
    if t.checkpoints:
        checkpoints = [cv.load_gray_png(p) for p in t.checkpoints]
        budgets = None
    else:
        checkpoints = synthetic_painting(t.painting_strokes, t.painting_checkpoints, cfg.seed,
                                         cfg.width_law, cfg.bounds, cfg.grays)[0]
        budgets = budgets_for(t.painting_checkpoints)
    report, results = eval_multistep(checkpoints, model, cfg.planner, _executor(cfg), budgets, db,
                                     cfg.bounds, cfg.splitter, config=cfg.to_dict(), name="plan_painting")
    report.write(cfg.out_dir)
    lines = []
    for k, (res, target) in enumerate(zip(results, checkpoints)):
        cv.save_gray_png(cfg.out_dir / f"checkpoint_{k}_target.png", target)
        cv.save_gray_png(cfg.out_dir / f"checkpoint_{k}_result.png", res.final_canvas)
        lines += [json.dumps({"window": k, **c.to_dict()}, sort_keys=True) for c in res.cycles]
    (cfg.out_dir / "cycles.jsonl").write_text("".join(line + "\n" for line in lines))
    print(report.to_table(), end="")


def cmd_eval(cfg: ExperimentConfig) -> None:
    model, db = _model(cfg), cfg.palette()
    pairs = _target_pairs(cfg, cfg.targets.eval_cases)
    for mode in cfg.targets.eval_modes:
        report = eval_single_strokes(pairs, model, cfg.planner, cfg.executor, cfg.width_law, mode, db,
                                     cfg.bounds, cfg.splitter, {**cfg.to_dict(), "mode": mode}, f"eval_{mode}")
        report.write(cfg.out_dir)
        agg = {m: v["mean"] for m, v in report.aggregates.items()}
        shown = {m: f"{v:.6f}" if isinstance(v, float) else v for m, v in agg.items()}
        print(f"{mode}: planning {shown['planning_loss']}  execution {shown['execution_loss']}"
              f"  iou {shown['iou']}  (n={len(report.rows)})")


def cmd_force_sim(cfg: ExperimentConfig) -> None:
    f = cfg.force
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for i, F_star in enumerate(f.targets):
        state = ForceLoopState(k_f=f.k_f, lam=f.lam, dt=f.dt)
        contact = ContactModel(f.stiffness, f.damping, arm_damping=f.arm_damping)
        res = simulate_press(float(F_star), state, contact, max_steps=f.max_steps)
        res.write_trace(cfg.out_dir / f"force_{i:02d}.txt")
        summary.append({"target": float(F_star), "converged": res.converged, "steps": res.steps,
                        "final": res.final_force, "overshoot": res.overshoot(float(F_star))})
        print(f"F*={F_star:.3f} N  converged={res.converged}  steps={res.steps}  final={res.final_force:.4f}")
    (cfg.out_dir / "force_summary.jsonl").write_text(
        "".join(json.dumps({"seed": cfg.seed, **s}, sort_keys=True) + "\n" for s in summary))


def cmd_split(cfg: ExperimentConfig) -> None:
    t = cfg.targets
    if t.before is not None:
        before, after = cv.load_gray_png(t.before), cv.load_gray_png(t.after)
    else:
        n = cfg.splitter.K
        after = synthetic_painting(n, (n,), cfg.seed, cfg.width_law, cfg.bounds, cfg.grays)[0][0]
        before = cv.blank_canvas(after.shape[0])
    diff = np.abs(after - before) > cv.DIFF_THRESHOLD
    masks = split_strokes(diff, cfg.splitter, seed=cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_overlay(cfg.out_dir / "split_overlay.png", diff, masks)
    for i, m in enumerate(masks):
        cv.save_mask_png(cfg.out_dir / f"split_mask_{i}.png", m)
    _dump(cfg.out_dir / "split.json", {"seed": cfg.seed, "masks": [int(m.sum()) for m in masks]})
    print(f"{len(masks)} stroke masks -> {cfg.out_dir / 'split_overlay.png'}")


COMMANDS = {
    "selfplay": (cmd_selfplay, "collect a self-play dataset"),
    "fit": (cmd_fit, "fit the LR surrogate and width calibration"),
    "plan-stroke": (cmd_plan_stroke, "plan and execute one stroke toward a target pair"),
    "plan-painting": (cmd_plan_painting, "receding-horizon planning toward checkpoints"),
    "eval": (cmd_eval, "batch single-stroke evaluation reports"),
    "force-sim": (cmd_force_sim, "force-loop step-response traces"),
    "split": (cmd_split, "splitter overlay for a difference image"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="strokeplan", description="Plan, execute and evaluate brushstrokes on a simulated canvas.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="TOML experiment file (defaults apply without one)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", type=Path, help="override the output directory")
        p.add_argument("--workers", type=int, help="parallel rollout threads")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.workers is not None:
        cfg = replace(cfg, planner=replace(cfg.planner, workers=args.workers))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "strokeplan: error: a command is required")
        cfg = resolve_config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FileNotFoundError, ConfigError) as exc:
        print(f"strokeplan: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command][0](cfg)
    except Exception as exc:  # reported, not raised: the exit code carries the failure
        log.debug("failure", exc_info=True)
        print(f"strokeplan {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
