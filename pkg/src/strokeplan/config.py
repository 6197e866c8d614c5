"""Experiment configuration: one TOML file with a typed section per module.

Relative paths resolve against the directory holding the config file.
Inputs the experiment only reads (colour database, target images) must exist
when the file is loaded; artifacts produced by earlier subcommands (dataset,
model) are checked when a subcommand needs them.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .color import PatchDatabase, load_database_dir, palette_database
from .evaluation import DEFAULT_GRAYS
from .executor import ExecutorConfig
from .planner import PlannerConfig
from .splitter import GrowConfig, RansacConfig, SplitterConfig
from .stroke import ActionBounds, WidthLaw


class ConfigError(ValueError):
    """Unreadable, inconsistent or incomplete configuration."""


@dataclass(frozen=True)
class DataConfig:
    selfplay_size: int = 900
    strokes_per_canvas: int = 8
    dataset: Path | None = None
    model: Path | None = None
    model_source: str = "fitted"


@dataclass(frozen=True)
class TargetConfig:
    before: Path | None = None
    after: Path | None = None
    checkpoints: tuple[Path, ...] = ()
    painting_strokes: int = 17
    painting_checkpoints: tuple[int, ...] = (5, 10, 15, 17)
    eval_cases: int = 50
    eval_modes: tuple[str, ...] = ("mpc", "heuristic")


@dataclass(frozen=True)
class ForceSimConfig:
    targets: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0, 4.0)
    k_f: float = 4.0
    lam: float = 0.8
    dt: float = 0.005
    stiffness: float = 50.0
    damping: float = 0.5
    arm_damping: float = 2.0
    max_steps: int = 5000


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: Path = Path("out")
    bounds: ActionBounds = field(default_factory=ActionBounds)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    width_law: WidthLaw = field(default_factory=WidthLaw)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    splitter: SplitterConfig = field(default_factory=SplitterConfig)
    grays: tuple[float, ...] = DEFAULT_GRAYS
    color_database: Path | None = None
    data: DataConfig = field(default_factory=DataConfig)
    targets: TargetConfig = field(default_factory=TargetConfig)
    force: ForceSimConfig = field(default_factory=ForceSimConfig)
    source: Path | None = None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, executor=replace(self.executor, seed=seed),
                       planner=replace(self.planner, seed=seed))

    def palette(self) -> PatchDatabase:
        if self.color_database is not None:
            return load_database_dir(self.color_database)
        return palette_database(self.grays)

    @property
    def dataset_path(self) -> Path:
        return self.data.dataset or self.out_dir / "selfplay"

    @property
    def model_path(self) -> Path:
        return self.data.model or self.out_dir / "model.json"

    def to_dict(self) -> dict:
        """Everything that affects results.

        Where the config came from, where outputs go and how many rollout
        threads run are left out.
        """
        d = asdict(self)
        d.pop("source")
        d.pop("out_dir")
        d["planner"].pop("workers")
        d["bounds"] = self.bounds.to_dict()
        return _plain(d)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    return v


def _section(cls, raw: dict, name: str, **nested):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(unknown)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in raw.items() if k not in nested}
    kwargs.update(nested)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _path(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _require(path: Path | None, what: str) -> None:
    if path is not None and not path.exists():
        raise ConfigError(f"{what} not found: {path}")


def from_dict(raw: dict, base: Path = Path("."), source: Path | None = None) -> ExperimentConfig:
    raw = dict(raw)
    allowed = {"seed", "out_dir", "bounds", "executor", "width_law", "planner", "splitter",
               "colors", "data", "targets", "force"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")

    bounds_raw = raw.get("bounds", {})
    try:
        bounds = ActionBounds.from_dict({**ActionBounds().to_dict(), **bounds_raw})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[bounds] {exc}") from exc
    unknown = sorted(set(bounds_raw) - set(ActionBounds().to_dict()))
    if unknown:
        raise ConfigError(f"[bounds] unknown keys: {', '.join(unknown)}")

    sp = dict(raw.get("splitter", {}))
    splitter = _section(SplitterConfig, sp, "splitter",
                        ransac=_section(RansacConfig, sp.pop("ransac", {}), "splitter.ransac"),
                        grow=_section(GrowConfig, sp.pop("grow", {}), "splitter.grow"))

    colors = dict(raw.get("colors", {}))
    grays = tuple(float(g) for g in colors.pop("grays", DEFAULT_GRAYS))
    color_db = _path(base, colors.pop("database", None))
    if colors:
        raise ConfigError(f"[colors] unknown keys: {', '.join(sorted(colors))}")
    if not grays:
        raise ConfigError("[colors] grays is empty")

    data_raw = dict(raw.get("data", {}))
    for key in ("dataset", "model"):
        if key in data_raw:
            data_raw[key] = _path(base, data_raw[key])
    data = _section(DataConfig, data_raw, "data")
    if data.model_source not in ("fitted", "oracle"):
        raise ConfigError("[data] model_source must be 'fitted' or 'oracle'")

    tg_raw = dict(raw.get("targets", {}))
    for key in ("before", "after"):
        if key in tg_raw:
            tg_raw[key] = _path(base, tg_raw[key])
    if "checkpoints" in tg_raw:
        tg_raw["checkpoints"] = [_path(base, c) for c in tg_raw["checkpoints"]]
    targets = _section(TargetConfig, tg_raw, "targets")
    if (targets.before is None) != (targets.after is None):
        raise ConfigError("[targets] before and after must be given together")

    cfg = ExperimentConfig(
        seed=seed,
        out_dir=_path(base, raw.get("out_dir", "out")),
        bounds=bounds,
        executor=_section(ExecutorConfig, raw.get("executor", {}), "executor"),
        width_law=_section(WidthLaw, raw.get("width_law", {}), "width_law"),
        planner=_section(PlannerConfig, raw.get("planner", {}), "planner"),
        splitter=splitter,
        grays=grays,
        color_database=color_db,
        data=data,
        targets=targets,
        force=_section(ForceSimConfig, raw.get("force", {}), "force"),
        source=source,
    )
    for what, p in (("colour database", cfg.color_database), ("target image", targets.before),
                    ("target image", targets.after), *(("checkpoint", c) for c in targets.checkpoints)):
        _require(p, what)
    return cfg.with_seed(seed)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw, path.resolve().parent, path)
