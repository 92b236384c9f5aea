"""Scenario configuration: YAML parsing, validation, defaults and echo.

Every key is checked; unknown keys are rejected and errors name the
offending field using its dotted path (``prior.spatial_correlation``).
Relative file paths resolve against the directory of the config file.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ValidationError
from .prior import BlockLayout, rho_dim
from .smc import SmcConfig


@dataclass(frozen=True)
class LayoutConfig:
    areas_per_block: tuple = (1,)


@dataclass(frozen=True)
class PriorConfig:
    reference: tuple = ((1.0, 0.1, 1.0, 0.1),)
    reference_last: tuple = None
    sigma_abs: float = 0.1
    sigma_rel: float = 0.05
    spatial_correlation: float = 0.95


@dataclass(frozen=True)
class RhoConfig:
    case: int = 1
    prior: str = "uniform"
    a: float = 1.0
    b: float = 1.0


@dataclass(frozen=True)
class NoiseConfig:
    std: float = 0.05


@dataclass(frozen=True)
class MetamodelConfig:
    source: str = "synthetic"
    gamma: float = 0.0
    seed: int = 1
    training_size: int = 0
    training_file: str = None
    matrices_file: str = None
    include_residual: bool = True
    bootstrap: int = 0


@dataclass(frozen=True)
class TruthConfig:
    mode: str = "smooth"
    rho: tuple = None


@dataclass(frozen=True)
class InputsConfig:
    measurements: str = None
    model: str = None
    truth: str = None


@dataclass(frozen=True)
class ScenarioConfig:
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    n_freqs: int = 1
    n_angles: int = 1
    prior: PriorConfig = field(default_factory=PriorConfig)
    rho: RhoConfig = field(default_factory=RhoConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    metamodel: MetamodelConfig = field(default_factory=MetamodelConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    inputs: InputsConfig = field(default_factory=InputsConfig)
    smc: SmcConfig = field(default_factory=SmcConfig)
    output: str = "out"
    seed: int = 0

    @property
    def n_blocks(self):
        return len(self.layout.areas_per_block)

    @property
    def n_areas(self):
        return sum(self.layout.areas_per_block)

    def to_dict(self, include_output=False):
        data = _plain(asdict(self))
        data["smc"].pop("threads", None)
        if not include_output:
            data.pop("output")
        return data

    def digest(self):
        """Short hash identifying the scenario (output dir and seed excluded)."""
        data = self.to_dict()
        data.pop("seed")
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "layout": LayoutConfig,
    "prior": PriorConfig,
    "rho": RhoConfig,
    "noise": NoiseConfig,
    "metamodel": MetamodelConfig,
    "truth": TruthConfig,
    "inputs": InputsConfig,
    "smc": SmcConfig,
}

_PATH_FIELDS = {("metamodel", "training_file"), ("metamodel", "matrices_file"),
                ("inputs", "measurements"), ("inputs", "model"), ("inputs", "truth"), (None, "output")}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tuplify(obj):
    if isinstance(obj, list):
        return tuple(_tuplify(v) for v in obj)
    return obj


def _number(value, name, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{name}: expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ValidationError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _build(cls, raw, prefix, base):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError(f"{prefix}: expected a mapping")
    known = {f.name: f for f in fields(cls) if not (cls is SmcConfig and f.name == "threads")}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValidationError(f"unknown key {prefix + '.' if prefix else ''}{unknown[0]}")
    kwargs = {}
    for name, value in raw.items():
        dotted = f"{prefix}.{name}" if prefix else name
        default = getattr(cls(), name) if cls is not ScenarioConfig else None
        if value is None:
            if default is not None or cls is ScenarioConfig:
                raise ValidationError(f"{dotted}: a value is required")
            kwargs[name] = None
            continue
        if (prefix or None, name) in _PATH_FIELDS:
            if not isinstance(value, str):
                raise ValidationError(f"{dotted}: expected a path string")
            path = Path(value)
            kwargs[name] = str(path if path.is_absolute() or base is None else (base / path).resolve())
        elif isinstance(default, bool) or name == "include_residual":
            if not isinstance(value, bool):
                raise ValidationError(f"{dotted}: expected true or false")
            kwargs[name] = value
        elif isinstance(default, int) or name in ("seed", "case", "n_freqs", "n_angles"):
            kwargs[name] = _number(value, dotted, int)
        elif isinstance(default, float):
            kwargs[name] = _number(value, dotted)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ValidationError(f"{dotted}: expected a string")
            kwargs[name] = value
        else:
            kwargs[name] = _tuplify(value)
    return kwargs


def from_dict(raw, base=None):
    """Validated :class:`ScenarioConfig` from a plain mapping."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a mapping")
    top = {k: v for k, v in raw.items() if k not in _SECTIONS}
    kwargs = _build(ScenarioConfig, top, "", base)
    for name, cls in _SECTIONS.items():
        sub = _build(cls, raw.get(name), name, base)
        try:
            kwargs[name] = cls(**sub)
        except ValidationError as exc:
            raise ValidationError(f"{name}: {exc}") from exc
    cfg = ScenarioConfig(**kwargs)
    validate(cfg)
    if cfg.metamodel.training_size == 0:
        auto = 10 * (4 * cfg.n_areas + 1)
        cfg = replace(cfg, metamodel=replace(cfg.metamodel, training_size=auto))
    return cfg


def _check(cond, message):
    if not cond:
        raise ValidationError(message)


def validate(cfg):
    sizes = cfg.layout.areas_per_block
    _check(isinstance(sizes, tuple) and len(sizes) >= 1, "layout.areas_per_block: need at least one block")
    _check(all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in sizes),
           "layout.areas_per_block: counts must be positive integers")
    _check(cfg.n_freqs >= 1, "n_freqs: must be at least 1")
    _check(cfg.n_angles >= 1, "n_angles: must be at least 1")
    p = cfg.prior
    for name, ref in (("prior.reference", p.reference), ("prior.reference_last", p.reference_last)):
        if ref is None and name.endswith("last"):
            continue
        _check(isinstance(ref, tuple) and len(ref) == cfg.n_blocks,
               f"{name}: need one row per block ({cfg.n_blocks})")
        for row in ref:
            _check(isinstance(row, tuple) and len(row) == 4
                   and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row),
                   f"{name}: each row needs 4 numbers")
    _check(p.sigma_abs >= 0, "prior.sigma_abs: must be non-negative")
    _check(p.sigma_rel >= 0, "prior.sigma_rel: must be non-negative")
    _check(p.sigma_abs + p.sigma_rel > 0, "prior.sigma_abs: sigma_abs + sigma_rel must be positive")
    _check(0.0 <= p.spatial_correlation <= 1.0, "prior.spatial_correlation: spatial correlation out of [0,1]")
    r = cfg.rho
    _check(r.case in (1, 2, 3), "rho.case: must be 1, 2 or 3")
    _check(r.prior in ("uniform", "beta"), "rho.prior: must be 'uniform' or 'beta'")
    _check(r.a > 0 and r.b > 0, "rho.a: Beta parameters must be positive")
    _check(cfg.noise.std >= 0, "noise.std: must be non-negative")
    m = cfg.metamodel
    _check(m.source in ("synthetic", "training", "matrices"),
           "metamodel.source: must be 'synthetic', 'training' or 'matrices'")
    _check(m.gamma >= 0, "metamodel.gamma: must be non-negative")
    _check(m.training_size >= 0, "metamodel.training_size: must be non-negative")
    _check(m.bootstrap == 0 or m.bootstrap >= 100, "metamodel.bootstrap: 0 or at least 100")
    if m.source == "training":
        _check(m.training_file is not None, "metamodel.training_file: required for source 'training'")
    if m.source == "matrices":
        _check(m.matrices_file is not None, "metamodel.matrices_file: required for source 'matrices'")
    t = cfg.truth
    _check(t.mode in ("smooth", "irregular"), "truth.mode: must be 'smooth' or 'irregular'")
    if t.rho is not None:
        want = rho_dim(r.case, BlockLayout(sizes))
        vals = t.rho if isinstance(t.rho, tuple) else (t.rho,)
        _check(len(vals) == want and all(isinstance(v, (int, float)) and 0 <= v <= 1 for v in vals),
               f"truth.rho: need {want} values in [0,1]")


def parse_scenario(path):
    """Read and validate a YAML scenario file."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML ({exc})") from exc
    return from_dict(raw or {}, base=path.parent.resolve())


def dump_scenario(cfg):
    """YAML text of the fully materialised config (output dir omitted)."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
