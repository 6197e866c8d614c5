"""Stochastic brush executor (the simulated robot) and self-play datasets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import canvas as cv
from .force import settle
from .stroke import (
    ActionBounds,
    StrokeAction,
    StrokeColor,
    StrokeRenderer,
    WidthLaw,
    dumps_action,
    loads_action,
    paint,
    stamp_mask,
    stamp_offsets,
    stamp_spacing,
)

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExecutorConfig:
    width_jitter_sd: float = 0.0
    edge_noise_sd: float = 0.0
    opacity_jitter_sd: float = 0.0
    force_realization: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.width_jitter_sd, self.edge_noise_sd, self.opacity_jitter_sd) < 0:
            raise ValueError("noise standard deviations must be non-negative")

    @property
    def noiseless(self) -> bool:
        return self.width_jitter_sd == 0 and self.edge_noise_sd == 0 and self.opacity_jitter_sd == 0

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=4096)
def realized_force(F: float) -> float:
    """Steady-state contact force reached by the admittance loop for a command F."""
    return settle(F).final_force


def execute_stroke(
    canvas: np.ndarray,
    u: StrokeAction,
    color: StrokeColor,
    cfg: ExecutorConfig,
    law=None,
    rng: np.random.Generator | None = None,
    renderer: StrokeRenderer | None = None,
) -> np.ndarray:
    """Paint ``u`` onto ``canvas`` with the configured execution noise.

    With zero noise and no force realisation this is exactly the analytic
    renderer. ``rng`` defaults to one derived from ``cfg.seed``.
    """
    renderer = renderer or StrokeRenderer(law or WidthLaw())
    F = realized_force(float(u.F)) if cfg.force_realization else u.F
    if cfg.noiseless:
        if F != u.F:
            u = StrokeAction(u.x0, u.y0, u.l, u.b, u.alpha, F)
        return renderer.render(canvas, u, color)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    radius = renderer.law.radius(F) * (1.0 + rng.normal(0.0, cfg.width_jitter_sd))
    radius = max(radius, 0.0)
    dx, dy = stamp_offsets(u, renderer.n_stamps, renderer.straight_bend_threshold)
    spacing = stamp_spacing(dx, dy)
    if cfg.edge_noise_sd > 0:
        dx = dx + rng.normal(0.0, cfg.edge_noise_sd, dx.shape)
        dy = dy + rng.normal(0.0, cfg.edge_noise_sd, dy.shape)
    a = float(np.clip(color.a * (1.0 + rng.normal(0.0, cfg.opacity_jitter_sd)), 0.0, 1.0))
    if a <= 0.0:
        return canvas.copy()
    covered = stamp_mask(canvas.shape, u.x0, u.y0, dx, dy, radius, spacing)
    return paint(canvas, covered, StrokeColor(color.c, a, color.rgba))


class Executor:
    """Stateful executor: call ``k`` draws noise from ``SeedSequence([seed, stream, k])``."""

    def __init__(self, cfg: ExecutorConfig, law=None, stream: int = 0, renderer=None):
        self.cfg = cfg
        self.renderer = renderer or StrokeRenderer(law or WidthLaw())
        self.stream = stream
        self.calls = 0

    @property
    def law(self):
        return self.renderer.law

    def execute(self, canvas: np.ndarray, u: StrokeAction, color: StrokeColor) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, self.stream, self.calls]))
        self.calls += 1
        return execute_stroke(canvas, u, color, self.cfg, rng=rng, renderer=self.renderer)


@dataclass
class Triple:
    before: np.ndarray
    action: StrokeAction
    after: np.ndarray
    color: StrokeColor


def sample_actions(rng: np.random.Generator, bounds: ActionBounds, n: int) -> list[StrokeAction]:
    lo, hi = bounds.lo, bounds.hi
    if bounds.wraps_alpha:
        hi = hi.copy()
        hi[4] = lo[4] + 360.0
    vals = rng.uniform(lo, hi, size=(n, len(lo)))
    if bounds.wraps_alpha:
        vals[:, 4] = lo[4] + np.mod(vals[:, 4] - lo[4], 360.0)
    return [StrokeAction.from_array(v) for v in vals]


def selfplay_collect(
    n: int,
    bounds: ActionBounds,
    colors: list[StrokeColor],
    cfg: ExecutorConfig,
    strokes_per_canvas: int = 8,
    law=None,
    size: int = cv.PATCH_SIDE,
    background: float = 1.0,
) -> list[Triple]:
    """Uniform random exploration with round-robin colours.

    The canvas is reset every ``strokes_per_canvas`` strokes. Canvas ``j``
    draws actions and noise from its own generator keyed by ``(seed, j)``, so
    canvases are independent of collection order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not colors:
        raise ValueError("colour set is empty")
    if strokes_per_canvas < 1:
        raise ValueError("strokes_per_canvas must be at least 1")
    renderer = StrokeRenderer(law or WidthLaw())
    triples: list[Triple] = []
    n_canvases = -(-n // strokes_per_canvas)
    for j in range(n_canvases):
        count = min(strokes_per_canvas, n - j * strokes_per_canvas)
        action_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, j, 0]))
        executor = Executor(cfg, stream=j + 1, renderer=renderer)
        img = cv.blank_canvas(size, background)
        for i, u in enumerate(sample_actions(action_rng, bounds, count)):
            color = colors[(j * strokes_per_canvas + i) % len(colors)]
            after = executor.execute(img, u, color)
            triples.append(Triple(img, u, after, color))
            img = after
    return triples


# --------------------------------------------------------------------------
# dataset directory format


class DatasetError(Exception):
    """Base class for dataset loading failures."""


class MissingFileError(DatasetError):
    pass


class MalformedRecordError(DatasetError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"triple {index}: malformed action record ({reason})")
        self.index = index


class ManifestMismatchError(DatasetError):
    pass


MANIFEST = "manifest.json"


def save_dataset(
    dataset: list[Triple],
    path,
    bounds: ActionBounds | None = None,
    cfg: ExecutorConfig | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for i, t in enumerate(dataset):
        name = f"{i:05d}"
        d = root / name
        d.mkdir(exist_ok=True)
        cv.save_gray_png(d / "before.png", t.before, exact=True)
        cv.save_gray_png(d / "after.png", t.after, exact=True)
        (d / "action.json").write_text(dumps_action(t.action, t.color) + "\n")
        names.append(name)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "count": len(dataset),
        "triples": names,
        "bounds": bounds.to_dict() if bounds else None,
        "executor": cfg.to_dict() if cfg else None,
        "seed": seed if seed is not None else (cfg.seed if cfg else None),
    }
    if extra:
        manifest.update(extra)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.is_file():
        raise MissingFileError(f"missing manifest: {mpath}")
    try:
        return json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestMismatchError(f"unreadable manifest {mpath}: {exc}") from exc


def load_dataset(path) -> list[Triple]:
    root = Path(path)
    manifest = read_manifest(root)
    names = manifest.get("triples", [])
    on_disk = sorted(p.name for p in root.iterdir() if p.is_dir())
    if manifest.get("count") != len(names) or len(on_disk) != len(names):
        raise ManifestMismatchError(
            f"manifest lists {manifest.get('count')} triples ({len(names)} names) "
            f"but {len(on_disk)} directories exist in {root}")
    out = []
    for i, name in enumerate(names):
        d = root / name
        for fname in ("before.png", "after.png", "action.json"):
            if not (d / fname).is_file():
                raise MissingFileError(f"triple {i}: missing {d / fname}")
        try:
            u, color = loads_action((d / "action.json").read_text().strip())
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedRecordError(i, str(exc)) from exc
        out.append(Triple(cv.load_gray_png(d / "before.png"), u,
                          cv.load_gray_png(d / "after.png"), color))
    return out
