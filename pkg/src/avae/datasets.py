"""Synthetic datasets and an IDX (MNIST-style) reader/writer."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxElementTypeError",
    "gaussian_mixture",
    "mixture_means",
    "ring",
    "load_idx",
    "write_idx",
    "make_dataset",
]

IDX_UBYTE = 0x08
_IDX_TYPES = {0x08: "ubyte", 0x09: "byte", 0x0B: "short", 0x0C: "int", 0x0D: "float", 0x0E: "double"}


@dataclass
class Dataset:
    data: np.ndarray
    name: str
    seed: int | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] == 0:
            raise ValueError(f"dataset must be a non-empty n x d matrix, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def mixture_means(k: int, d: int, radius: float = 1.0) -> np.ndarray:
    """Deterministic component means.

    One component sits at the origin; for d == 1 the means are evenly spaced
    on [-radius, radius]; for d == 2 they sit at equal angles on a circle; for
    d > 2 they are the signed coordinate axes +e_0, +e_1, ..., -e_0, ...
    """
    if k == 1:
        return np.zeros((1, d))
    if d == 1:
        return np.linspace(-radius, radius, k)[:, None]
    if d == 2:
        ang = 2.0 * math.pi * np.arange(k) / k
        return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if k > 2 * d:
        raise ValueError(f"at most {2 * d} axis-aligned components fit in d={d}")
    means = np.zeros((k, d))
    for j in range(k):
        means[j, j % d] = radius if j < d else -radius
    return means


def gaussian_mixture(n: int, k: int, d: int, spread: float, seed: int,
                     radius: float = 1.0) -> Dataset:
    """Balanced isotropic Gaussian mixture; ``labels`` holds the component of each row."""
    if not (n >= k >= 1) or d < 1:
        raise ValueError(f"need n >= k >= 1 and d >= 1 (n={n}, k={k}, d={d})")
    if not spread > 0:
        raise ValueError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    means = mixture_means(k, d, radius)
    labels = rng.permutation(np.arange(n) % k)
    data = means[labels] + spread * rng.standard_normal((n, d))
    return Dataset(data, name=f"mixture-k{k}-d{d}", seed=seed, labels=labels)


def ring(n: int, d: int, radius: float, noise: float, seed: int) -> Dataset:
    """Points on a circle in the first two coordinates, Gaussian noise everywhere."""
    if d < 2:
        raise ValueError(f"ring needs d >= 2, got {d}")
    if n < 1 or noise < 0:
        raise ValueError("need n >= 1 and noise >= 0")
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
    data = noise * rng.standard_normal((n, d))
    data[:, 0] += radius * np.cos(ang)
    data[:, 1] += radius * np.sin(ang)
    return Dataset(data, name=f"ring-d{d}", seed=seed)


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"IDX file truncated: expected {expected} bytes, found {actual}")


class IdxElementTypeError(IdxError):
    pass


def _parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise IdxTruncatedError(4, len(buf))
    if buf[0] != 0 or buf[1] != 0:
        raise IdxMagicError(f"bad IDX magic {buf[:4].hex()}: first two bytes must be zero")
    dtype, ndim = buf[2], buf[3]
    if dtype not in _IDX_TYPES:
        raise IdxMagicError(f"bad IDX magic {buf[:4].hex()}: unknown element type 0x{dtype:02x}")
    if dtype != IDX_UBYTE:
        raise IdxElementTypeError(f"unsupported IDX element type {_IDX_TYPES[dtype]} "
                                  f"(0x{dtype:02x}); only unsigned bytes are read")
    if ndim == 0:
        raise IdxMagicError("IDX file declares zero dimensions")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxTruncatedError(header, len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = header + math.prod(dims)
    if len(buf) < expected:
        raise IdxTruncatedError(expected, len(buf))
    arr = np.frombuffer(buf, dtype=np.uint8, count=math.prod(dims), offset=header)
    return arr.reshape(dims)


def load_idx(path) -> Dataset:
    """Read an unsigned-byte IDX tensor as an n x prod(rest) matrix scaled to [0, 1]."""
    path = Path(path)
    raw = _parse_idx(path.read_bytes())
    n = raw.shape[0]
    if n == 0:
        raise IdxError("IDX file holds no items")
    flat = raw.reshape(n, -1).astype(np.float64) / 255.0
    return Dataset(flat, name=path.stem)


def write_idx(path, array) -> None:
    """Write an unsigned-byte array in IDX format."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise IdxElementTypeError(f"only uint8 arrays can be written, got {a.dtype}")
    if a.ndim == 0 or a.ndim > 255:
        raise IdxError("array must have between 1 and 255 dimensions")
    header = bytes([0, 0, IDX_UBYTE, a.ndim]) + struct.pack(f">{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(a).tobytes())


def read_idx_raw(path) -> np.ndarray:
    """The raw byte tensor with its original shape."""
    return _parse_idx(Path(path).read_bytes()).copy()


_DATASET_KEYS = {
    "mixture": ({"kind", "n", "k", "d", "spread", "seed"}, {"radius"}),
    "ring": ({"kind", "n", "d", "radius", "noise", "seed"}, set()),
    "idx": ({"kind", "path"}, {"limit"}),
}


def make_dataset(spec: dict) -> Dataset:
    """Build a dataset from a JSON-style spec; unknown or missing keys are errors."""
    if not isinstance(spec, dict) or spec.get("kind") not in _DATASET_KEYS:
        raise ValueError(f"dataset kind must be one of {sorted(_DATASET_KEYS)}")
    kind = spec["kind"]
    required, optional = _DATASET_KEYS[kind]
    missing = required - spec.keys()
    unknown = spec.keys() - required - optional
    if missing:
        raise ValueError(f"dataset spec for {kind!r} is missing {sorted(missing)}")
    if unknown:
        raise ValueError(f"dataset spec for {kind!r} has unknown keys {sorted(unknown)}")
    if kind == "mixture":
        return gaussian_mixture(int(spec["n"]), int(spec["k"]), int(spec["d"]),
                                float(spec["spread"]), int(spec["seed"]),
                                float(spec.get("radius", 1.0)))
    if kind == "ring":
        return ring(int(spec["n"]), int(spec["d"]), float(spec["radius"]),
                    float(spec["noise"]), int(spec["seed"]))
    ds = load_idx(spec["path"])
    if "limit" in spec:
        ds = Dataset(ds.data[:int(spec["limit"])], name=ds.name)
    return ds
