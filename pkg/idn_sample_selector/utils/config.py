"""
Module for run configuration: dataclasses, TOML loading/saving and overrides

A config file has the sections [data], [noise], [train] and an optional [sweep]
whose keys are [train] field names mapped to lists of values. Every setting is also
addressable as a dotted key such as `train.theta` or `noise.ratio`.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from idn_sample_selector.noise.injectors import NoiseSpec
from idn_sample_selector.utils.errors import ConfigError

SECTIONS = ("data", "noise", "train")
SWEEPABLE = ("theta", "theta_agg", "lambda_min", "lambda_max", "n_max")


@dataclass
class DatasetSpec:
    n_per_class: int = 500
    class_count: int = 4
    dim: int = 8
    center_spread: float = 1.5
    cluster_std: float = 1.0
    imbalance_ratios: List[float] = field(default_factory=list)
    n_test_per_class: int = 250

    def validate(self):
        if self.class_count < 2:
            raise ConfigError("must be at least 2", field="data.class_count")
        if self.dim < 1:
            raise ConfigError("must be positive", field="data.dim")
        if self.n_per_class < 1:
            raise ConfigError("must be positive", field="data.n_per_class")
        if self.n_test_per_class < 1:
            raise ConfigError("must be positive", field="data.n_test_per_class")
        if self.center_spread <= 0:
            raise ConfigError("must be positive", field="data.center_spread")
        if self.cluster_std < 0:
            raise ConfigError("must be non-negative", field="data.cluster_std")
        if self.imbalance_ratios and len(self.imbalance_ratios) != self.class_count:
            raise ConfigError(f"need {self.class_count} ratios", field="data.imbalance_ratios")
        return self


@dataclass
class TrainConfig:
    """
    Every knob of a training run. Defaults are the desk-scale settings; the learning
    rate drops by `lr_decay_factor` at `lr_decay_epoch`.
    """

    epochs: int = 60
    warmup_epochs: int = 5
    learning_rate: float = 0.02
    lr_decay_epoch: int = 30
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    seed: int = 0
    hidden_sizes: List[int] = field(default_factory=lambda: [32, 32])
    feature_dim: int = 16
    # stage 1
    theta: float = 0.5
    theta_agg: float = 0.4
    center_source: str = "noisy-label"
    # stage 2
    lambda_min: float = 1.0
    n_max: int = 50
    stage2_score: str = "raw"
    stage2_per_class: bool = False
    stage2_supervised: bool = False
    # 0 uses the current train.learning_rate
    stage2_learning_rate: float = 0.0
    stage2_agreement_drop: float = 0.1
    # step 4
    lambda_max: float = 0.1
    lambda_u: float = 25.0
    lambda_u_rampup: int = 10
    temperature: float = 0.5
    mixup_alpha: float = 4.0
    n_augment: int = 2
    jitter_std: float = 0.05
    # ablation switches
    use_stage1: bool = True
    use_stage2: bool = True
    data: DatasetSpec = field(default_factory=DatasetSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sweep: Dict[str, List[float]] = field(default_factory=dict)

    def validate(self):
        def positive(name):
            if not getattr(self, name) > 0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", field=f"train.{name}")

        def non_negative(name):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"must be non-negative, got {getattr(self, name)}", field=f"train.{name}")

        for name in ("epochs", "learning_rate", "batch_size", "feature_dim", "temperature",
                     "mixup_alpha", "lr_decay_factor"):
            positive(name)
        for name in ("warmup_epochs", "weight_decay", "lambda_min", "lambda_max", "lambda_u",
                     "lambda_u_rampup", "n_max", "jitter_std", "seed", "lr_decay_epoch",
                     "stage2_learning_rate"):
            non_negative(name)
        if self.warmup_epochs >= self.epochs:
            raise ConfigError("must be smaller than train.epochs", field="train.warmup_epochs")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must be in [0, 1)", field="train.momentum")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("must be in (0, 1)", field="train.theta")
        positive("theta_agg")
        if self.n_augment < 1:
            raise ConfigError("must be at least 1", field="train.n_augment")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("need one or more positive widths", field="train.hidden_sizes")
        if self.center_source not in ("noisy-label", "predicted-label"):
            raise ConfigError(f"unknown value {self.center_source!r}", field="train.center_source")
        if self.stage2_score not in ("raw", "weighted"):
            raise ConfigError(f"unknown value {self.stage2_score!r}", field="train.stage2_score")
        if not 0.0 <= self.stage2_agreement_drop <= 1.0:
            raise ConfigError("must be in [0, 1]", field="train.stage2_agreement_drop")
        for key, values in self.sweep.items():
            if key not in SWEEPABLE:
                raise ConfigError(f"not sweepable; choose from {', '.join(SWEEPABLE)}", field=f"sweep.{key}")
            if not isinstance(values, list) or not values:
                raise ConfigError("must be a non-empty list", field=f"sweep.{key}")
        self.data.validate()
        self.noise.validate()
        return self


def _coerce(value, default, key):
    """Bring a parsed value to the type of the field's default"""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", field=key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", field=key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", field=key)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", field=key)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", field=key)
        if default:
            return [_coerce(v, default[0], key) for v in value]
        return [float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in value]
    return value


def _fill(instance, values, section):
    defaults = {f.name: getattr(instance, f.name) for f in dataclasses.fields(instance)}
    for key, value in values.items():
        dotted = f"{section}.{key}"
        if key not in defaults or isinstance(defaults[key], (DatasetSpec, NoiseSpec, dict)):
            raise ConfigError("unknown setting", field=dotted)
        setattr(instance, key, _coerce(value, defaults[key], dotted))
    return instance


def config_from_dict(data):
    """
    Build and validate a TrainConfig from nested sections

    Raises:
        ConfigError: naming the first unknown or malformed key
    """
    unknown = set(data) - set(SECTIONS) - {"sweep"}
    if unknown:
        raise ConfigError("unknown section", field=sorted(unknown)[0])
    config = TrainConfig()
    _fill(config.data, data.get("data", {}), "data")
    _fill(config.noise, data.get("noise", {}), "noise")
    _fill(config, data.get("train", {}), "train")
    sweep = data.get("sweep", {})
    config.sweep = {}
    for key, values in sweep.items():
        if not isinstance(values, list):
            raise ConfigError("must be a list", field=f"sweep.{key}")
        default = getattr(TrainConfig(), key, None)
        config.sweep[key] = [_coerce(v, default, f"sweep.{key}") for v in values]
    return config.validate()


def config_to_dict(config):
    """Nested plain-data form of a config; inverse of config_from_dict"""
    train = {}
    for f in dataclasses.fields(config):
        if f.name in ("data", "noise", "sweep"):
            continue
        value = getattr(config, f.name)
        train[f.name] = list(value) if isinstance(value, (list, tuple)) else value
    data = dataclasses.asdict(config.data)
    data["imbalance_ratios"] = list(config.data.imbalance_ratios)
    out = {"data": data, "noise": dataclasses.asdict(config.noise), "train": train}
    if config.sweep:
        out["sweep"] = {k: list(v) for k, v in config.sweep.items()}
    return out


def load_config(path):
    """
    Read a TOML config file

    Raises:
        ConfigError: if the file is missing, is not valid TOML or has bad settings
    """
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="config")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}", field="config")
    return config_from_dict(data)


def dumps_config(config):
    return tomli_w.dumps(config_to_dict(config))


def dump_config(config, path):
    with open(path, "wb") as f:
        tomli_w.dump(config_to_dict(config), f)
    return path


def parse_value(text):
    """Interpret a command-line value as a TOML value, falling back to a bare string"""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(config, overrides):
    """
    Return a new config with dotted-key overrides applied

    Args:
        config: TrainConfig
        overrides: Mapping such as {"train.theta": 0.6, "noise.kind": "symmetric"};
            string values are parsed as TOML values

    Returns:
        Validated TrainConfig
    """
    data = config_to_dict(config)
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError("expected <section>.<key>", field=dotted)
        if isinstance(value, str):
            value = parse_value(value)
        data[section][key] = value
    return config_from_dict(data)
