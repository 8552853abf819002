"""Experiment configuration: dataclasses, JSON round-trip, dotted overrides."""

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigurationError, UsageError
from .losses import LossSpec
from .nn import MlpConfig


@dataclass
class RegularizerSpec:
    """``kind`` is "sn", "gp" or "none"; only the matching fields are used."""

    kind: str = "sn"
    k_sn: float = 1.0
    power_iters: int = 1
    lam: float = 10.0
    k_gp: float = 1.0

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("sn", "gp", "none"):
            raise ConfigurationError(f"unknown regularizer {self.kind!r}")
        if self.kind == "sn" and self.k_sn <= 0:
            raise ConfigurationError("k_sn must be positive")
        if self.kind == "gp" and (self.lam < 0 or self.k_gp < 0):
            raise ConfigurationError("gradient-penalty lam and k_gp must be >= 0")


@dataclass
class OptimConfig:
    lr: float = 5e-5
    rho: float = 0.9
    eps: float = 1e-8


@dataclass
class DataConfig:
    """A toy distribution (gaussian-ring, grid, point-mass) or "mnist"."""

    kind: str = "gaussian-ring"
    modes: int = 8
    radius: float = 0.75
    std: float = 0.05
    location: list = field(default_factory=lambda: [0.0, 0.0])
    clip: list = field(default_factory=lambda: [-1.0, 1.0])
    path: str = None
    labels_path: str = None
    value_range: list = field(default_factory=lambda: [-1.0, 1.0])

    def __post_init__(self):
        if self.kind not in ("gaussian-ring", "grid", "point-mass", "mnist"):
            raise ConfigurationError(f"unknown data source {self.kind!r}")
        if self.kind == "mnist" and not self.path:
            raise ConfigurationError("mnist data needs an images path")

    @property
    def is_toy(self):
        return self.kind != "mnist"

    def toy(self):
        from .data import ToyDistribution

        return ToyDistribution(self.kind, self.modes, self.radius, self.std,
                               tuple(self.location), tuple(self.clip) if self.clip else None)


def _default_gen():
    return MlpConfig([4, 64, 64, 64, 2], "leaky_relu", 0.2, "tanh")


def _default_disc():
    return MlpConfig([2, 64, 64, 64, 1], "leaky_relu", 0.2, "identity")


@dataclass
class ExperimentConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    gen: MlpConfig = field(default_factory=_default_gen)
    disc: MlpConfig = field(default_factory=_default_disc)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    batch: int = 64
    n_dis: int = 1
    iterations: int = 20000
    seed: int = 0
    eval_every: int = 1000
    eval_samples: int = 2048
    coverage_radius: float = None
    check_bounds: bool = True

    def __post_init__(self):
        if self.batch < 1 or self.n_dis < 1 or self.iterations < 1:
            raise ConfigurationError("batch, n_dis and iterations must all be >= 1")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        self.disc.check_discriminator()

    @property
    def latent_dim(self):
        return self.gen.widths[0]

    def to_dict(self):
        d = asdict(self)
        d["loss"] = {"kind": self.loss.kind, "alpha": self.loss.alpha}
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        sub = {"loss": LossSpec, "regularizer": RegularizerSpec, "gen": MlpConfig,
               "disc": MlpConfig, "optim": OptimConfig, "data": DataConfig}
        kw = {}
        for k, v in d.items():
            if k in sub and isinstance(v, dict):
                allowed = {f.name for f in fields(sub[k])}
                bad = set(v) - allowed
                if bad:
                    raise ConfigurationError(f"unknown keys under {k!r}: {sorted(bad)}")
                kw[k] = sub[k](**v)
            else:
                kw[k] = v
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def replace(self, **overrides):
        """Copy with dotted-path overrides, e.g. ``{"loss.alpha": 1e-9}``."""
        d = apply_overrides(self.to_dict(), overrides)
        return ExperimentConfig.from_dict(d)


def parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(d, overrides):
    """Set dotted keys in a nested dict; every key must already exist."""
    d = copy.deepcopy(d)
    for path, value in overrides.items():
        keys = path.split(".")
        node = d
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise UsageError(f"unknown config key {path!r}")
            node = node[k]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise UsageError(f"unknown config key {path!r}")
        node[keys[-1]] = value
    return d


def parse_set_args(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out
