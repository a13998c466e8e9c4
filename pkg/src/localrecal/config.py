"""Run configuration: typed container, JSON (de)serialization, validation.

A run config describes one experiment end to end: data generation (or CSV
ingestion), the network, the predictive method, the recalibration settings,
and the metric levels. Sweeps wrap a base config with a matrix of dotted
parameter paths mapped to value lists.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

from .data import GENERATORS
from .errors import ConfigError

EXPERIMENTS = tuple(GENERATORS) + ("csv",)
PREDICTIVE_METHODS = ("wsir_gaussian", "wsir_log_gaussian", "gamma_heads", "mc_dropout")
RECAL_MODES = ("none", "local", "global", "isotonic")

# Desk-scale architectures for the 20-input nonlinear study: the small net as
# published (four 5-unit layers); the big net shrunk to 50-50-50-5 so default
# runs stay fast (wider layers remain a config choice away).
NONLINEAR20_SMALL_NET = [{"width": 5, "activation": "relu", "dropout": 0.0}] * 4
NONLINEAR20_BIG_NET = ([{"width": 50, "activation": "relu", "dropout": 0.0}] * 3
                       + [{"width": 5, "activation": "relu", "dropout": 0.0}])


@dataclass
class SplitConfig:
    train: float = 0.8
    validation: float = 0.1
    test: float = 0.1


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 100
    max_epochs: int = 75
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=list)  # [{"width":..,"activation":..,"dropout":..}]
    loss: str = "mse"
    log_response: bool = False
    standardize_x: bool = True
    standardize_y: bool = True
    train: TrainSection = field(default_factory=TrainSection)


@dataclass
class PredictiveConfig:
    method: str = "wsir_gaussian"
    T: int = 1000
    seed: int = 0


@dataclass
class RuleConfig:
    type: str = "knearest"  # knearest | radius
    k: int = 1000
    eps: float = 0.0
    r: float = 0.5


@dataclass
class KernelConfig:
    family: str = "epanechnikov"
    bandwidth: str = "kth_neighbor"
    radius: float | None = None


@dataclass
class RecalConfig:
    mode: str = "local"
    layer: int = 1
    rule: RuleConfig = field(default_factory=RuleConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    standardize: bool = True
    leaf_size: int = 32
    resample: bool = False
    resample_seed: int = 0


@dataclass
class CsvConfig:
    path: str = ""
    response: str = ""
    ordinal: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    experiment: str = "gaussian_quadratic"
    n: int = 10000
    seed: int = 0
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    predictive: PredictiveConfig = field(default_factory=PredictiveConfig)
    recalibration: RecalConfig = field(default_factory=RecalConfig)
    levels: list = field(default_factory=lambda: [0.95])
    csv: CsvConfig | None = None

    def to_dict(self):
        return asdict(self)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f for f in cls.__dataclass_fields__}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    return data


def config_from_dict(data, path="config"):
    data = dict(_build(RunConfig, data, path))
    if "split" in data:
        data["split"] = SplitConfig(**_build(SplitConfig, data["split"], f"{path}.split"))
    if "model" in data:
        m = dict(_build(ModelConfig, data["model"], f"{path}.model"))
        if "train" in m:
            m["train"] = TrainSection(**_build(TrainSection, m["train"], f"{path}.model.train"))
        data["model"] = ModelConfig(**m)
    if "predictive" in data:
        data["predictive"] = PredictiveConfig(**_build(PredictiveConfig, data["predictive"], f"{path}.predictive"))
    if "recalibration" in data:
        r = dict(_build(RecalConfig, data["recalibration"], f"{path}.recalibration"))
        if "rule" in r:
            r["rule"] = RuleConfig(**_build(RuleConfig, r["rule"], f"{path}.recalibration.rule"))
        if "kernel" in r:
            r["kernel"] = KernelConfig(**_build(KernelConfig, r["kernel"], f"{path}.recalibration.kernel"))
        data["recalibration"] = RecalConfig(**r)
    if data.get("csv") is not None:
        data["csv"] = CsvConfig(**_build(CsvConfig, data["csv"], f"{path}.csv"))
    cfg = RunConfig(**data)
    validate_config(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return raw


def validate_config(cfg):
    """Reject internally inconsistent configs before any work starts."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    if cfg.experiment == "csv":
        if cfg.csv is None or not cfg.csv.path or not cfg.csv.response:
            raise ConfigError("csv experiment requires csv.path and csv.response")
    elif cfg.n < 3:
        raise ConfigError("n must be >= 3")
    s = cfg.split
    for name in ("train", "validation", "test"):
        if getattr(s, name) <= 0.0:
            raise ConfigError(f"split.{name} must be > 0")
    if abs(s.train + s.validation + s.test - 1.0) > 1e-12:
        raise ConfigError("split fractions must sum to 1")

    m = cfg.model
    if m.loss not in ("mse", "gaussian_nll", "gamma_nll"):
        raise ConfigError(f"unknown loss {m.loss!r}")
    for i, h in enumerate(m.hidden):
        if not isinstance(h, dict) or "width" not in h or h["width"] < 1:
            raise ConfigError(f"model.hidden[{i}] must be an object with width >= 1")
        unknown = set(h) - {"width", "activation", "dropout"}
        if unknown:
            raise ConfigError(f"model.hidden[{i}]: unknown keys {sorted(unknown)}")
    t = m.train
    if t.learning_rate <= 0 or t.batch_size < 1 or t.max_epochs < 1 or t.patience < 1:
        raise ConfigError("model.train values out of range")

    p = cfg.predictive
    if p.method not in PREDICTIVE_METHODS:
        raise ConfigError(f"unknown predictive method {p.method!r}")
    if p.method == "gamma_heads" and m.loss != "gamma_nll":
        raise ConfigError("gamma_heads predictions require the gamma_nll loss")
    if p.method == "mc_dropout":
        if p.T < 2:
            raise ConfigError("mc_dropout requires T >= 2")
        if not any(h.get("dropout", 0.0) > 0.0 for h in m.hidden):
            raise ConfigError("mc_dropout requires at least one hidden layer with dropout > 0")
    if m.loss == "gamma_nll" and m.log_response:
        raise ConfigError("gamma_nll operates on the raw positive response, not its log")
    if m.loss == "gamma_nll" and m.standardize_y:
        raise ConfigError("gamma_nll requires standardize_y = false (raw positive response)")

    r = cfg.recalibration
    if r.mode not in RECAL_MODES:
        raise ConfigError(f"recalibration.mode must be one of {RECAL_MODES}")
    if r.layer < 1 or r.layer > len(m.hidden) + 2:
        raise ConfigError(f"recalibration.layer {r.layer} out of range 1..{len(m.hidden) + 2}")
    if r.rule.type not in ("knearest", "radius"):
        raise ConfigError("recalibration.rule.type must be 'knearest' or 'radius'")
    if r.rule.type == "knearest" and (r.rule.k < 1 or r.rule.eps < 0):
        raise ConfigError("recalibration.rule requires k >= 1 and eps >= 0")
    if r.rule.type == "radius" and r.rule.r <= 0:
        raise ConfigError("recalibration.rule.r must be > 0")
    if r.kernel.family not in ("epanechnikov", "uniform"):
        raise ConfigError("kernel.family must be 'epanechnikov' or 'uniform'")
    if r.kernel.bandwidth not in ("kth_neighbor", "fixed_radius"):
        raise ConfigError("kernel.bandwidth must be 'kth_neighbor' or 'fixed_radius'")
    if r.kernel.bandwidth == "fixed_radius" and not (r.kernel.radius and r.kernel.radius > 0):
        raise ConfigError("kernel.bandwidth 'fixed_radius' requires kernel.radius > 0")
    if r.leaf_size < 1:
        raise ConfigError("recalibration.leaf_size must be >= 1")

    if not cfg.levels:
        raise ConfigError("levels must be nonempty")
    for level in cfg.levels:
        if not 0.0 < level < 1.0:
            raise ConfigError(f"levels entries must lie in (0, 1), got {level}")
    return cfg


def override_path(cfg_dict, dotted, value):
    """Set a dotted path like ``recalibration.rule.k`` in a config dict."""
    node = cfg_dict
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"matrix path {dotted!r}: no such key {part!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"matrix path {dotted!r}: no such key {parts[-1]!r}")
    node[parts[-1]] = copy.deepcopy(value)
