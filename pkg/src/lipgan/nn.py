"""Dense generator/discriminator networks and their parameter storage."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, FormatError

ACTIVATIONS = ("leaky_relu", "tanh", "relu")
OUTPUTS = ("identity", "tanh")


@dataclass
class MlpConfig:
    widths: list
    hidden_activation: str = "leaky_relu"
    slope: float = 0.2
    output_activation: str = "identity"

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2:
            raise ConfigurationError("an MLP needs at least input and output widths")
        if any(w <= 0 for w in self.widths):
            raise ConfigurationError(f"layer widths must be positive, got {self.widths}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUTS:
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")
        if self.hidden_activation == "leaky_relu" and not 0 < self.slope <= 1:
            raise ConfigurationError("leaky-relu slope must lie in (0, 1]")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def check_discriminator(self):
        if self.widths[-1] != 1:
            raise ConfigurationError("discriminator must end in a single raw score")
        if self.output_activation != "identity":
            raise ConfigurationError("discriminator output takes no activation")
        return self

    def activation_lipschitz(self):
        """Lipschitz constants of every activation applied, in order."""
        return [1.0] * (self.n_layers - 1) + [1.0]

    def to_dict(self):
        return asdict(self)


@dataclass
class ParamStore:
    """Per-layer weights W (shape [in, out]) and biases b (shape [out])."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ConfigurationError("weights and biases differ in layer count")
        for l in range(1, len(self.weights)):
            if np.shape(self.weights[l - 1])[1] != np.shape(self.weights[l])[0]:
                raise ConfigurationError(f"layer {l} does not chain onto layer {l - 1}")

    @property
    def n_layers(self):
        return len(self.weights)

    def tensors(self):
        return list(self.weights) + list(self.biases)

    @classmethod
    def from_tensors(cls, flat):
        n = len(flat) // 2
        return cls(list(flat[:n]), list(flat[n:]))

    def watch(self, tape):
        """A ParamStore of leaf Tensors registered on ``tape``."""
        return ParamStore([tape.watch(w) for w in self.weights], [tape.watch(b) for b in self.biases])

    def copy(self):
        return ParamStore([np.array(w, dtype=np.float64) for w in self.weights],
                          [np.array(b, dtype=np.float64) for b in self.biases])

    def flat(self):
        return np.concatenate([np.ravel(a) for a in self.tensors()])

    def shapes(self):
        return [list(np.shape(a)) for a in self.tensors()]

    def equals(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors()))


def init_params(cfg, seed):
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(cfg.widths[:-1], cfg.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ParamStore(weights, biases)


def forward(params, cfg, batch, weights=None):
    """Run the MLP on ``batch`` [B, in].

    ``weights`` overrides the stored weight matrices (spectral-normalized
    views are passed this way); biases always come from ``params``.
    """
    ws = params.weights if weights is None else weights
    h = ad.as_tensor(batch)
    if h.value.ndim != 2 or h.shape[1] != cfg.widths[0]:
        raise ConfigurationError(f"batch of shape {h.shape} does not fit input width {cfg.widths[0]}")
    last = len(ws) - 1
    for l, (w, b) in enumerate(zip(ws, params.biases)):
        h = ad.affine(h, w, b)
        if l < last:
            if cfg.hidden_activation == "tanh":
                h = ad.tanh(h)
            elif cfg.hidden_activation == "relu":
                h = ad.relu(h)
            else:
                h = ad.leaky_relu(h, cfg.slope)
        elif cfg.output_activation == "tanh":
            h = ad.tanh(h)
    return h


def scores(params, cfg, batch, weights=None):
    """Raw discriminator scores as a flat [B] tensor."""
    out = forward(params, cfg, batch, weights)
    return ad.reshape(out, (out.shape[0],))


# checkpoint layout: one line of JSON header, then little-endian float64 data
def save_checkpoint(path, params, cfg, seed=None, iteration=None):
    header = {
        "widths": cfg.widths,
        "activation": cfg.hidden_activation,
        "slope": cfg.slope,
        "output_activation": cfg.output_activation,
        "seed": seed,
        "iteration": iteration,
        "shapes": params.shapes(),
    }
    data = params.flat().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(data.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        head = fh.readline()
        body = fh.read()
    try:
        header = json.loads(head)
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable checkpoint header") from exc
    shapes = [tuple(s) for s in header["shapes"]]
    expected = 8 * sum(int(np.prod(s)) for s in shapes)
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    arrays, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(flat[off:off + n].reshape(s).copy())
        off += n
    cfg = MlpConfig(header["widths"], header["activation"], header["slope"], header["output_activation"])
    return ParamStore.from_tensors(arrays), cfg, header
