"""Run configuration: flat ``section.key = value`` files mapped onto dataclasses.

Values are Python literals (numbers, strings, tuples, None). Relative paths are
resolved against the directory holding the config file. Unknown sections or
keys are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .data import SplitSpec
from .detector import DetectorConfig
from .evaluation import CONDITIONS, DECODE_THRESHOLD
from .losses import LossWeights
from .optimizer import OptimizerConfig
from .patch_model import ManualParams, validate_manual


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "runs/toy"
    target_class: str = "stop_sign"
    printable_colors: str | None = None
    log_level: str = "INFO"


@dataclass(frozen=True)
class DataSection:
    # manifest files; when empty, synthetic scenes are generated instead
    manifests: tuple[str, ...] = ()
    synthetic_scenes: int = 450
    synthetic_test_scenes: int = 600
    synthetic_seed: int = 21


@dataclass(frozen=True)
class DetectorSection:
    checkpoint: str = "runs/toy/detector.pt"
    train_scenes: int = 2000
    holdout_scenes: int = 300
    data_seed: int = 11
    model: DetectorConfig = field(default_factory=DetectorConfig)


@dataclass(frozen=True)
class EvalSection:
    conditions: tuple[str, ...] = CONDITIONS
    ap_threshold: float = DECODE_THRESHOLD
    nms_iou: float = 0.45


@dataclass(frozen=True)
class SweepSection:
    axis: str = "n_shapes"
    values: tuple[float, ...] = (3, 8)


@dataclass(frozen=True)
class GridSection:
    budget_fraction: float = 0.2
    # explicit weight tuples; None means the built-in product grid
    weights: tuple[tuple[float, float, float, float], ...] | None = None


@dataclass(frozen=True)
class ExportSection:
    dpi: float = 300.0
    width_in: float = 0.6
    height_in: float = 0.33


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    split: SplitSpec = field(default_factory=lambda: SplitSpec(test_sources=("synthetic-test",), seed=3))
    detector: DetectorSection = field(default_factory=DetectorSection)
    patch: ManualParams = field(default_factory=ManualParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    grid: GridSection = field(default_factory=GridSection)
    export: ExportSection = field(default_factory=ExportSection)
    base_dir: Path = field(default=Path("."), compare=False)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    @property
    def out_dir(self) -> Path:
        return self.path(self.run.out)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, run=replace(self.run, seed=seed), optimizer=replace(self.optimizer, seed=seed))

    def with_out(self, out: str | Path) -> "RunConfig":
        return replace(self, run=replace(self.run, out=str(Path(out).resolve())))


# keys accepted under [optimizer] besides the OptimizerConfig fields themselves
_OPTIMIZER_EXTRA = {"weights"}


def _coerce(value: Any, default: Any, where: str) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if isinstance(value, (str, bytes)) or not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def _literal(text: str, where: str) -> Any:
    lowered = text.strip()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return ast.literal_eval(lowered)
    except (ValueError, SyntaxError):
        # bare words are accepted as strings: target_class = stop_sign
        if lowered and all(ch.isalnum() or ch in "_-./" for ch in lowered):
            return lowered
        raise ConfigError(f"{where}: cannot parse value {text!r}") from None


def parse_assignments(text: str, origin: str = "<config>") -> dict[str, dict[str, Any]]:
    """Split `section.key = value` lines into {section: {key: value}}."""
    out: dict[str, dict[str, Any]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{origin}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        lhs, rhs = line.split("=", 1)
        lhs = lhs.strip()
        if lhs.count(".") != 1:
            raise ConfigError(f"{where}: key {lhs!r} must look like section.key")
        section, key = lhs.split(".")
        if key in out.get(section, {}):
            raise ConfigError(f"{where}: {lhs} assigned twice")
        out.setdefault(section, {})[key] = (_literal(rhs, where), where)
    return out


def _apply(obj, values: dict[str, tuple[Any, str]], section: str, skip: set[str] = frozenset()):
    known = {f.name: f for f in fields(obj) if f.name not in skip}
    updates = {}
    for key, (value, where) in values.items():
        if key not in known:
            raise ConfigError(f"{where}: unknown key {section}.{key}; known keys: {', '.join(sorted(known))}")
        updates[key] = _coerce(value, getattr(obj, key), f"{where} ({section}.{key})")
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def build_config(assignments: dict[str, dict[str, tuple[Any, str]]], base_dir: Path = Path(".")) -> RunConfig:
    cfg = RunConfig(base_dir=Path(base_dir))
    sections = {f.name for f in fields(RunConfig) if f.name != "base_dir"}
    updates: dict[str, Any] = {}
    for section, values in assignments.items():
        if section not in sections:
            first = next(iter(values.values()))[1]
            raise ConfigError(f"{first}: unknown section {section!r}; known sections: {', '.join(sorted(sections))}")
        current = getattr(cfg, section)
        if section == "detector":
            model_keys = {f.name for f in fields(DetectorConfig)}
            own = {k: v for k, v in values.items() if k not in model_keys}
            model = {k: v for k, v in values.items() if k in model_keys}
            current = _apply(current, own, section, skip={"model"})
            current = replace(current, model=_apply(current.model, model, section))
        elif section == "optimizer":
            extra = {k: v for k, v in values.items() if k in _OPTIMIZER_EXTRA}
            rest = {k: v for k, v in values.items() if k not in _OPTIMIZER_EXTRA}
            current = _apply(current, rest, section, skip={"weights"})
            if "weights" in extra:
                value, where = extra["weights"]
                try:
                    current = replace(current, weights=LossWeights(*value))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{where}: optimizer.weights: {exc}") from None
        else:
            current = _apply(current, values, section)
        updates[section] = current
    cfg = replace(cfg, **updates)
    # run.seed drives the optimizer seed too; keep a single source of truth
    cfg = cfg.with_seed(cfg.run.seed)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    try:
        validate_manual(cfg.patch)
    except ValueError as exc:
        raise ConfigError(f"[patch] {exc}") from None
    bad = [c for c in cfg.eval.conditions if c.upper() not in CONDITIONS]
    if bad:
        raise ConfigError(f"[eval] unknown condition(s) {bad}; expected a subset of {list(CONDITIONS)}")
    if cfg.sweep.axis not in ("n_shapes", "alpha_max"):
        raise ConfigError(f"[sweep] unknown axis {cfg.sweep.axis!r}")
    if not (cfg.export.dpi > 0 and cfg.export.width_in > 0 and cfg.export.height_in > 0):
        raise ConfigError("[export] dpi and physical size must be positive")
    if not 0 < cfg.grid.budget_fraction <= 1:
        raise ConfigError("[grid] budget_fraction must lie in (0, 1]")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    assignments = parse_assignments(path.read_text(encoding="utf-8"), str(path))
    if "optimizer" in assignments and "seed" in assignments["optimizer"]:
        raise ConfigError(f"{assignments['optimizer']['seed'][1]}: use run.seed instead of optimizer.seed")
    return build_config(assignments, path.parent.resolve())


def format_config(cfg: RunConfig) -> str:
    """Render every setting in the flat file format (round-trips through load_config)."""
    lines = []

    def emit(section: str, obj, skip=()):
        for f in fields(obj):
            if f.name in skip:
                continue
            value = getattr(obj, f.name)
            lines.append(f"{section}.{f.name} = {value!r}")

    emit("run", cfg.run)
    emit("data", cfg.data)
    emit("split", cfg.split)
    emit("detector", cfg.detector, skip=("model",))
    emit("detector", cfg.detector.model)
    emit("patch", cfg.patch)
    emit("optimizer", cfg.optimizer, skip=("weights", "seed"))
    lines.append(f"optimizer.weights = {cfg.optimizer.weights.as_tuple()!r}")
    emit("eval", cfg.eval)
    emit("sweep", cfg.sweep)
    emit("grid", cfg.grid)
    emit("export", cfg.export)
    return "\n".join(lines) + "\n"
