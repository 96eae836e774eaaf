"""Pipeline configuration: a flat ``section.key = value`` text file.

Every field has a default and unknown keys are rejected. Lists are
comma-separated; windows are ``name:0,12;name2:0,12,24``; family maps are
``pattern=family`` pairs separated by commas.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field, fields

from .errors import ConfigError, StorageError
from .forest import ForestParams
from .synthgen import DIMENSIONS, CohortSpec


@dataclass
class PathsConfig:
    input: str = "visits.csv"
    truth: str = ""
    out: str = "out"
    external: str = ""
    artifacts: str = ""


@dataclass
class CohortConfig:
    schedule: tuple[int, ...] = (0, 12, 24, 36, 48)
    snap_window: int = 3
    normalization: str = "minmax"
    static_epsilon: float = 0.0


@dataclass
class SynthConfig:
    n_pdvec1: int = 150
    n_pdvec2: int = 150
    n_pdvec3: int = 150
    n_hc: int = 100
    noise_std: float = 0.5
    baseline_std: tuple[float, ...] = (0.6,)  # one value, or one per dimension
    codes_per_dimension: int = 5
    missing_rate: float = 0.05
    velocity_pdvec1: tuple[float, ...] = (0.04, 0.010, 0.020)
    velocity_pdvec2: tuple[float, ...] = (0.10, 0.025, 0.050)
    velocity_pdvec3: tuple[float, ...] = (0.16, 0.040, 0.080)
    baseline_pdvec1: tuple[float, ...] = (1.0, 0.5, 0.5)
    baseline_pdvec2: tuple[float, ...] = (2.0, 1.0, 1.0)
    baseline_pdvec3: tuple[float, ...] = (3.0, 1.5, 1.5)
    baseline_hc: tuple[float, ...] = (0.0, 0.0, 0.0)


@dataclass
class DimredConfig:
    method: str = "nmf"
    rank: int = 3
    max_iter: int = 2000
    tol: float = 1e-6
    n_restarts: int = 5
    families: dict = field(
        default_factory=lambda: {"motor*": "motor", "cognitive*": "cognitive", "sleep*": "sleep"}
    )


@dataclass
class GmmConfig:
    k_min: int = 1
    k_max: int = 6
    n_init: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    reg_floor: float = 1e-6
    view: str = "full"
    cohorts: tuple[str, ...] = ("PD",)


@dataclass
class ForestConfig:
    n_trees: int = 500
    max_depth: int = 0  # 0 = unlimited
    min_samples_leaf: int = 1
    mtry: int = 0  # 0 = ceil(sqrt(p))
    bootstrap: bool = True
    class_weight: dict = field(default_factory=dict)


@dataclass
class EvalConfig:
    cv_k: int = 5
    windows: dict = field(
        default_factory=lambda: {"baseline": (0,), "baseline+12m": (0, 12), "baseline+12m+24m": (0, 12, 24)}
    )
    final_window: str = "baseline"


@dataclass
class ReportConfig:
    figures: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    cohort: CohortConfig = field(default_factory=CohortConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    dimred: DimredConfig = field(default_factory=DimredConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.partition(".")
        if not name:
            if section not in {f.name for f in fields(self)} or section in _SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, section, _convert(_hint(type(self), section), raw, key))
            return
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(self, section)
        if name not in {f.name for f in fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, name, _convert(_hint(type(target), name), raw, key))

    def cohort_spec(self) -> CohortSpec:
        s = self.synth
        return CohortSpec(
            n_patients_per_group={"PDVec1": s.n_pdvec1, "PDVec2": s.n_pdvec2, "PDVec3": s.n_pdvec3, "HC": s.n_hc},
            dimensions=DIMENSIONS,
            velocity_means={
                "PDVec1": s.velocity_pdvec1,
                "PDVec2": s.velocity_pdvec2,
                "PDVec3": s.velocity_pdvec3,
                "HC": (0.0,) * len(DIMENSIONS),
            },
            baseline_means={
                "PDVec1": s.baseline_pdvec1,
                "PDVec2": s.baseline_pdvec2,
                "PDVec3": s.baseline_pdvec3,
                "HC": s.baseline_hc,
            },
            baseline_std=s.baseline_std[0] if len(s.baseline_std) == 1 else tuple(s.baseline_std),
            noise_std=s.noise_std,
            codes_per_dimension=s.codes_per_dimension,
            schedule=tuple(self.cohort.schedule),
            missing_rate=s.missing_rate,
            seed=self.seed,
        )

    def forest_params(self, seed: int) -> ForestParams:
        f = self.forest
        return ForestParams(
            n_trees=f.n_trees,
            max_depth=f.max_depth or None,
            min_samples_leaf=f.min_samples_leaf,
            mtry=f.mtry or None,
            bootstrap=f.bootstrap,
            seed=seed,
            class_weight=dict(f.class_weight) or None,
        )

    def dump(self, exclude=()) -> str:
        lines = [f"seed = {self.seed}"]
        for sec in _SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                if f"{sec}.{f.name}" in exclude:
                    continue
                lines.append(f"{sec}.{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


_SECTIONS = ("paths", "cohort", "synth", "dimred", "gmm", "forest", "eval", "report")


def _hint(cls, name):
    return typing.get_type_hints(cls)[name]


def _convert(hint, raw: str, key: str):
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if typing.get_origin(hint) is tuple:
            inner = typing.get_args(hint)[0]
            return tuple(inner(v.strip()) for v in raw.split(",") if v.strip())
        if hint is dict or typing.get_origin(hint) is dict:
            return _parse_mapping(raw, key)
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from None
    raise ConfigError(f"unsupported config type for {key}")


def _parse_mapping(raw: str, key: str) -> dict:
    if not raw:
        return {}
    if key.endswith("windows"):
        out = {}
        for part in raw.split(";"):
            name, _, months = part.partition(":")
            if not months:
                raise ValueError(part)
            out[name.strip()] = tuple(int(m) for m in months.split(","))
        return out
    out = {}
    for part in raw.split(","):
        k, _, v = part.partition("=")
        if not v:
            raise ValueError(part)
        v = v.strip()
        try:
            out[k.strip()] = float(v)
        except ValueError:
            out[k.strip()] = v
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, dict):
        if value and all(isinstance(v, tuple) for v in value.values()):
            return ";".join(f"{k}:{','.join(str(m) for m in v)}" for k, v in value.items())
        return ",".join(f"{k}={v}" for k, v in value.items())
    return str(value)


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base if base is not None else PipelineConfig()
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), interpolation=None
    )
    parser.optionxform = str
    try:
        parser.read_string("[__root__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for key, value in parser.items("__root__"):
        cfg.set(key, value)
    return cfg


def load_config(path: str | None) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def replace_section(cfg: PipelineConfig, section: str, **changes) -> PipelineConfig:
    setattr(cfg, section, dataclasses.replace(getattr(cfg, section), **changes))
    return cfg
