"""Experiment configuration: TOML tables mapped onto typed dataclasses.

Every key has a default; unknown keys and wrongly typed values are rejected
with the dotted key path (and the line number for TOML syntax errors).
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import tomli

FORMAT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line


@dataclass
class MixtureSection:
    radius: float = 2.0
    sigma: float = 0.1
    minor_factor: float = 0.1


@dataclass
class GanSection:
    latent_dim: int = 2
    hidden: int = 128
    batch_size: int = 256
    iterations: int = 50_000
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    generator_loss: str = "non_saturating"
    d_norm: str = "none"


@dataclass
class InferenceSection:
    methods: list[str] = field(default_factory=lambda: ["DFI", "DFI_image", "ENC_image", "ENC_latent"])
    iterations: int = 50_000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    distance: str = "L2"
    cn_hidden: list[int] = field(default_factory=lambda: [128, 128])
    groups: int = 0
    taps: str = "last"


@dataclass
class RefineSection:
    steps: int = 50
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class EvalSection:
    metrics: list[str] = field(
        default_factory=lambda: [
            "modes_recovered",
            "high_quality_fraction",
            "nearest_mode_distance",
            "reconstruction_fid",
            "fidelity",
            "latent_recon_error",
        ]
    )
    test_size: int = 1000
    test_seed: int = 12345
    test_weights: str = "uniform"


@dataclass
class ScganSection:
    center_gan_iterations: int = 20_000
    center_cn_iterations: int = 20_000
    iterations: int = 20_000
    batch_size: int = 64
    hidden: int = 128
    z_edge_dim: int = 2
    alpha: float = 10.0
    gamma: float = 10.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    test_inputs: int = 50
    edge_draws: int = 100


@dataclass
class PlotSection:
    bounds: list[float] = field(default_factory=lambda: [-3.0, 3.0, -3.0, 3.0])
    n_real: int = 500
    n_generated: int = 500


@dataclass
class SweepSection:
    grid: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    experiment_id: str = "toy"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    out_dir: str = "runs"
    mixture: MixtureSection = field(default_factory=MixtureSection)
    gan: GanSection = field(default_factory=GanSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    refine: RefineSection = field(default_factory=RefineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    scgan: ScganSection = field(default_factory=ScganSection)
    plot: PlotSection = field(default_factory=PlotSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved(self) -> dict:
        """Settings that determine results; the output location is excluded."""
        d = self.to_dict()
        d.pop("out_dir")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.resolved()).encode()).hexdigest()[:16]

    def provenance(self, seed=None) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config_hash": self.config_hash(),
            "seed": seed,
            "config": self.resolved(),
        }

    def with_override(self, dotted: str, value) -> "ExperimentConfig":
        data = self.to_dict()
        node, leaf = _locate(data, dotted)
        node[leaf] = copy.deepcopy(value)
        return from_dict(data)


def _locate(data: dict, dotted: str) -> tuple[dict, str]:
    """Parent table and final key for a dotted path; unknown paths are errors."""
    node = data
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown key {dotted!r}", key=dotted)
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown key {dotted!r}", key=dotted)
    return node, parts[-1]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _check_value(value, tp, key: str):
    origin = typing.get_origin(tp)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}", key=key)
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key=key)
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}", key=key)
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}", key=key)
        (inner,) = typing.get_args(tp)
        return [_check_value(v, inner, f"{key}[{i}]") for i, v in enumerate(value)]
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a table, got {value!r}", key=key)
        return value
    raise TypeError(f"unsupported config field type {tp!r}")  # pragma: no cover


def _build(cls, table: dict, prefix: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a table", key=prefix or None)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in table:
        if key not in names:
            dotted = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"unknown key {dotted!r}", key=dotted)
    kwargs = {}
    for name in names:
        if name not in table:
            continue
        dotted = f"{prefix}.{name}" if prefix else name
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, table[name], dotted)
        else:
            kwargs[name] = _check_value(table[name], tp, dotted)
    return cls(**kwargs)


_CHOICES = {
    "gan.generator_loss": ("non_saturating", "minimax"),
    "gan.d_norm": ("none", "batch_norm", "group_norm"),
    "inference.distance": ("L2", "L1"),
    "inference.taps": ("last", "all"),
    "eval.test_weights": ("uniform", "mixture"),
}
METRICS = (
    "modes_recovered",
    "high_quality_fraction",
    "nearest_mode_distance",
    "reconstruction_fid",
    "fidelity",
    "latent_recon_error",
)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    from ..inference import METHOD_TABLE

    for dotted, choices in _CHOICES.items():
        section, name = dotted.split(".")
        value = getattr(getattr(cfg, section), name)
        if value not in choices:
            raise ConfigError(f"{dotted}: {value!r} is not one of {list(choices)}", key=dotted)
    for m in cfg.inference.methods:
        if m not in METHOD_TABLE:
            raise ConfigError(f"inference.methods: unknown method {m!r}", key="inference.methods")
    if len(set(cfg.inference.methods)) != len(cfg.inference.methods):
        raise ConfigError("inference.methods: duplicate entries", key="inference.methods")
    for m in cfg.eval.metrics:
        if m not in METRICS:
            raise ConfigError(f"eval.metrics: unknown metric {m!r}", key="eval.metrics")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds: duplicate entries", key="seeds")
    if len(cfg.plot.bounds) != 4:
        raise ConfigError("plot.bounds: expected [xmin, xmax, ymin, ymax]", key="plot.bounds")
    positive = {
        "gan.batch_size": cfg.gan.batch_size >= 2,
        "inference.batch_size": cfg.inference.batch_size >= 2,
        "scgan.batch_size": cfg.scgan.batch_size >= 2,
        "eval.test_size": cfg.eval.test_size >= 2,
        "gan.iterations": cfg.gan.iterations >= 0,
        "inference.iterations": cfg.inference.iterations >= 0,
    }
    for dotted, ok in positive.items():
        if not ok:
            raise ConfigError(f"{dotted}: value out of range", key=dotted)
    for dotted, values in cfg.sweep.grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.grid.{dotted}: expected a non-empty list", key=f"sweep.grid.{dotted}")
        if dotted.split(".")[0] in ("sweep", "seeds", "out_dir"):
            raise ConfigError(f"sweep.grid: cannot sweep {dotted!r}", key=f"sweep.grid.{dotted}")
        _locate(cfg.to_dict(), dotted)
    return cfg


def from_dict(data: dict) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data, ""))


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed TOML: {exc}", line=line) from exc
    return from_dict(data)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from exc
    return loads(text)
