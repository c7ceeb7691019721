"""Strict experiment config parsing: flat dotted-key text files, every
unknown key rejected with its line number."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .ensemble import EnsembleConfig

MODELS = ("dcgan", "vaegan", "maven")
DATASET_KINDS = ("ring", "glyphs", "image_folder", "cifar10", "svhn")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _parse_bool(s):
    if s.lower() in ("true", "yes", "1"):
        return True
    if s.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _parse_int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


# key -> (parser, default); None default means "unset"
_SCHEMA = {
    "model": (str, None),
    "dataset.kind": (str, "glyphs"),
    "dataset.path": (str, None),
    "dataset.image_size": (int, 32),
    "dataset.channels": (int, 3),
    "dataset.modes": (int, 8),
    "dataset.samples_per_mode": (int, 250),
    "dataset.radius": (float, 0.7),
    "dataset.sigma": (float, 0.035),
    "dataset.n_per_class": (int, 200),
    "dataset.n_classes": (int, 10),
    "dataset.seed": (int, 1234),
    "network.latent_dim": (int, 100),
    "network.channels": (_parse_int_list, None),
    "network.batchnorm": (_parse_bool, True),
    "ensemble.k": (int, 1),
    "ensemble.mode": (str, "mean"),
    "ensemble.weights": (_parse_float_list, None),
    "train.epochs": (int, 1),
    "train.batch_size": (int, 64),
    "train.m": (int, 0),  # 0 = full training-set size
    "train.labeled_fraction": (float, 0.10),
    "train.lr_g": (float, 2e-4),
    "train.lr_d": (float, 2e-4),
    "train.lr_e": (float, 1e-5),
    "train.adam_beta1": (float, 0.5),
    "train.seed": (int, 0),
    "train.checkpoint_interval": (int, 0),
    "eval.sample_count": (int, 0),  # 0 = training-set size
    "eval.fid_repeats": (int, 20),
    "eval.ddd_weights": (_parse_float_list, (0.4, 0.3, 0.2, 0.1)),
    "output.dir": (str, None),
    "repeats": (int, 10),
}

_ENCODER_KEYS = ("train.lr_e",)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def model(self) -> str:
        return self.values["model"]

    @property
    def with_encoder(self) -> bool:
        return self.model in ("vaegan", "maven")

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(k=self.values["ensemble.k"],
                              weights=self.values["ensemble.weights"],
                              mode=self.values["ensemble.mode"])


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    errors = []
    values = {}
    set_keys = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            errors.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in set_keys:
            errors.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(value)
        except (ValueError, TypeError) as exc:
            errors.append(f"{source}:{lineno}: bad value for {key!r}: {exc}")
            continue
        set_keys.add(key)
    for key, (_, default) in _SCHEMA.items():
        values.setdefault(key, default)

    # cross-key validation
    if values["model"] is None:
        errors.append(f"{source}: missing required key 'model'")
    elif values["model"] not in MODELS:
        errors.append(f"{source}: model must be one of {MODELS}, got {values['model']!r}")
    else:
        if values["model"] == "dcgan":
            for key in _ENCODER_KEYS:
                if key in set_keys:
                    errors.append(
                        f"{source}: key {key!r} is not allowed with model=dcgan "
                        f"(no encoder in this model)")
        if values["model"] != "maven" and values["ensemble.k"] > 1:
            errors.append(
                f"{source}: ensemble.k={values['ensemble.k']} requires model=maven")
    if values["dataset.kind"] not in DATASET_KINDS:
        errors.append(
            f"{source}: dataset.kind must be one of {DATASET_KINDS}, "
            f"got {values['dataset.kind']!r}")
    if values["dataset.kind"] in ("image_folder", "cifar10", "svhn"):
        path = values["dataset.path"]
        if path is None:
            errors.append(f"{source}: dataset.kind={values['dataset.kind']} needs dataset.path")
        elif not Path(path).exists():
            errors.append(f"{source}: dataset.path does not exist: {path}")
    if values["ensemble.mode"] not in ("mean", "random"):
        errors.append(f"{source}: ensemble.mode must be mean|random, "
                      f"got {values['ensemble.mode']!r}")
    if values["ensemble.weights"] is not None and \
            len(values["ensemble.weights"]) != values["ensemble.k"]:
        errors.append(f"{source}: ensemble.weights needs {values['ensemble.k']} entries, "
                      f"got {len(values['ensemble.weights'])}")
    if values["repeats"] < 1:
        errors.append(f"{source}: repeats must be >= 1")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(values=values)


def validate_config(path) -> ExperimentConfig:
    """Parses, defaults, and cross-validates a config file; raises ConfigError
    with one message per problem (with line numbers)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    return parse_config_text(path.read_text(), source=str(path))
