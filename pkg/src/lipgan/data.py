"""Toy 2-D distributions, latent noise and an MNIST IDX reader."""

import gzip
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, FormatError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class ToyDistribution:
    """gaussian-ring: ``modes`` Gaussians on a circle of ``radius``.
    grid: ``modes`` x ``modes`` Gaussians on a square lattice spanning
    [-radius, radius]^2.  point-mass: every sample at ``location``.

    ``clip`` optionally bounds every coordinate (keeps real samples inside
    the box the domain bound assumes).
    """

    kind: str = "gaussian-ring"
    modes: int = 8
    radius: float = 2.0
    std: float = 0.05
    location: tuple = (0.0, 0.0)
    clip: tuple = None

    def __post_init__(self):
        if self.kind not in ("gaussian-ring", "grid", "point-mass"):
            raise ConfigurationError(f"unknown toy distribution {self.kind!r}")
        if self.kind != "point-mass":
            if self.modes < 1:
                raise ConfigurationError("need at least one mode")
            if self.std <= 0:
                raise ConfigurationError("std must be positive")
        self.location = tuple(float(v) for v in self.location)
        if self.clip is not None:
            self.clip = (float(self.clip[0]), float(self.clip[1]))

    def centers(self):
        if self.kind == "point-mass":
            return np.array([self.location])
        if self.kind == "grid":
            ticks = np.linspace(-self.radius, self.radius, self.modes) if self.modes > 1 else np.zeros(1)
            return np.array([(x, y) for x in ticks for y in ticks])
        angles = 2.0 * np.pi * np.arange(self.modes) / self.modes
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def to_dict(self):
        return asdict(self)


def sample_real(dist, n, rng):
    """``n`` i.i.d. draws as an [n, 2] array."""
    if n < 1:
        raise ConfigurationError("sample count must be >= 1")
    centers = dist.centers()
    if dist.kind == "point-mass":
        x = np.repeat(centers, n, axis=0)
    else:
        pick = rng.integers(0, len(centers), size=n)
        x = centers[pick] + dist.std * rng.standard_normal((n, 2))
    if dist.clip is not None:
        x = np.clip(x, dist.clip[0], dist.clip[1])
    return x


def sample_noise(dim, n, rng):
    if dim < 1:
        raise ConfigurationError("latent dimension must be >= 1")
    return rng.standard_normal((n, dim))


@dataclass
class ImageDataset:
    images: np.ndarray  # [N, rows*cols*channels], values in [-1, 1]
    dims: tuple
    labels: np.ndarray = None

    def __len__(self):
        return self.images.shape[0]

    def sample(self, n, rng):
        return self.images[rng.integers(0, len(self), size=n)]


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, path, magic, ndims):
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header (expected at least 4 bytes, got {len(raw)})")
    (seen,) = struct.unpack(">I", raw[:4])
    if seen != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{seen:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * ndims
    if len(raw) < head:
        raise FormatError(f"{path}: truncated IDX header (expected {head} bytes, got {len(raw)})")
    dims = struct.unpack(">" + "I" * ndims, raw[4:head])
    expected = head + int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for dims {list(dims)}, got {len(raw)}")
    return dims, np.frombuffer(raw, dtype=np.uint8, offset=head)


def load_mnist_idx(images_path, labels_path=None):
    """Read an IDX image file (optionally gzipped) into [-1, 1] floats."""
    (n, rows, cols), pix = _parse_idx(_read(images_path), images_path, IDX_IMAGES, 3)
    images = pix.reshape(n, rows * cols).astype(np.float64) / 127.5 - 1.0
    labels = None
    if labels_path is not None:
        (nl,), lab = _parse_idx(_read(labels_path), labels_path, IDX_LABELS, 1)
        if nl != n:
            raise FormatError(f"{labels_path}: {nl} labels for {n} images")
        labels = lab.astype(np.int64)
    return ImageDataset(images, (rows, cols, 1), labels)
