"""Plain-text run configuration: ``key = value`` lines under ``[section]`` headers.

Sections map onto the config dataclasses::

    [data]       dir, dataset
    [split]      rho, majority, val_per_class, minority_fraction, seed, file, from_file
    [model]      ModelConfig fields
    [selection]  SelectionConfig fields
    [run]        RunConfig scalar fields plus ``budget`` (full | acceptance)
    [sweep]      workers, and ``section.key = v1, v2, ...`` grid axes
    [output]     out_dir

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .gcn import ModelConfig
from .pipeline import RunConfig, acceptance_budget
from .select import SelectionConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dir: str = ""
    dataset: str = "cora"

    def resolved_dir(self) -> Path:
        if self.dir:
            return Path(self.dir)
        root = os.environ.get("UNREAL_DATA_DIR", "data")
        return Path(root) / self.dataset


@dataclass
class SplitConfig:
    rho: float = 10.0
    majority: int = 20
    val_per_class: int = 30
    minority_fraction: float = 0.5
    seed: int = -1  # -1: follow the run seed
    file: str = ""
    from_file: str = ""


@dataclass
class RunSection:
    method: str = "unreal"
    rounds: int = 40
    k_prime: int = 300
    retrain_policy: str = "fresh_init"
    seed: int = 0
    normalize_embeddings: bool = False
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-4
    budget: str = "full"


@dataclass
class SweepConfig:
    workers: int = 0  # 0: one per core
    grid: dict[str, list[str]] = field(default_factory=dict)


@dataclass
class OutputConfig:
    out_dir: str = "runs"


@dataclass
class CliConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    run: RunSection = field(default_factory=RunSection)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def run_config(self) -> RunConfig:
        model_kw = dict(self.model)
        model_kw.setdefault("seed", self.run.seed)
        model = ModelConfig(**model_kw)
        selection = SelectionConfig(**self.selection)
        r = self.run
        cfg = RunConfig(
            method=r.method,
            rounds=r.rounds,
            model=model,
            selection=selection,
            k_prime=r.k_prime,
            retrain_policy=r.retrain_policy,
            seed=r.seed,
            normalize_embeddings=r.normalize_embeddings,
            kmeans_max_iters=r.kmeans_max_iters,
            kmeans_tol=r.kmeans_tol,
        )
        if r.budget == "acceptance":
            cfg = acceptance_budget(cfg)
        elif r.budget != "full":
            raise ConfigError(f"run.budget must be full or acceptance, got {r.budget!r}")
        return cfg

    def split_seed(self) -> int:
        return self.run.seed if self.split.seed < 0 else self.split.seed


_TYPED = {"data": DataConfig, "split": SplitConfig, "run": RunSection, "output": OutputConfig}
_DICT = {"model": ModelConfig, "selection": SelectionConfig}


def _field_types(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            if "," in raw:
                return [int(v) for v in raw.split(",") if v.strip()]
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return ""


def parse_text(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    """Split into ``{section: {key: raw_value}}``; ``#`` and ``;`` start comments."""
    out: dict[str, dict[str, str]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            if section not in _TYPED and section not in _DICT and section != "sweep":
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside any section")
        key, value = (t.strip() for t in s.split("=", 1))
        if key in out[section]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {section}.{key}")
        out[section][key] = value
    return out


def set_value(cfg: CliConfig, dotted: str, raw) -> None:
    """Assign ``section.key`` from a raw string (or an already-typed value)."""
    if "." not in dotted:
        raise ConfigError(f"expected section.key, got {dotted!r}")
    section, key = dotted.split(".", 1)
    if section in _TYPED:
        fields = _field_types(_TYPED[section])
        if key not in fields:
            raise ConfigError(f"unknown key {dotted}")
        target = getattr(cfg, section)
        val = _coerce(raw, _default_of(fields[key]), dotted) if isinstance(raw, str) else raw
        setattr(target, key, val)
    elif section in _DICT:
        fields = _field_types(_DICT[section])
        if key not in fields:
            raise ConfigError(f"unknown key {dotted}")
        default = _default_of(fields[key])
        getattr(cfg, section)[key] = _coerce(raw, default, dotted) if isinstance(raw, str) else raw
    elif section == "sweep":
        if key != "workers":
            raise ConfigError(f"unknown key {dotted}")
        cfg.sweep.workers = _coerce(raw, 0, dotted) if isinstance(raw, str) else raw
    else:
        raise ConfigError(f"unknown section in {dotted}")


def _lookup_default(dotted: str):
    if "." not in dotted:
        raise ConfigError(f"expected section.key, got {dotted!r}")
    section, key = dotted.split(".", 1)
    cls = _TYPED.get(section) or _DICT.get(section)
    if cls is None:
        raise ConfigError(f"unknown section in {dotted}")
    fields = _field_types(cls)
    if key not in fields:
        raise ConfigError(f"unknown key {dotted}")
    return _default_of(fields[key])


def from_sections(sections: dict[str, dict[str, str]]) -> CliConfig:
    cfg = CliConfig()
    for section, items in sections.items():
        for key, raw in items.items():
            if section == "sweep" and key != "workers":
                _lookup_default(key)
                cfg.sweep.grid[key] = [v.strip() for v in raw.split(",") if v.strip()]
            else:
                set_value(cfg, f"{section}.{key}", raw)
    return cfg


def load_config(path: str | Path | None) -> CliConfig:
    if path is None:
        return CliConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return from_sections(parse_text(p.read_text(encoding="utf-8"), str(p)))


def validate(cfg: CliConfig) -> RunConfig:
    """Build the run config, turning constructor errors into ConfigError."""
    try:
        return cfg.run_config()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
