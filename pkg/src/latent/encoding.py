"""Z-score normalization and fixed-point sign/whole/fraction bit encoding.

A value is written as ``l = n + m + 1`` bits, most significant first: one
sign bit (1 for negative), ``n`` whole-number bits and ``m`` fraction bits.
Magnitudes are truncated toward zero on the ``2^-m`` grid and saturate at
``2^n - 2^-m``.  A feature vector of ``r`` values is merged into a single
string of ``r * l`` bits, which is the only thing ever randomized.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "EncodingSpec",
    "NormStats",
    "MergedString",
    "fit_zscore",
    "encode_value",
    "decode_value",
    "encode_vector",
    "encode_matrix",
    "decode_matrix",
    "sensitivity_of",
]


@dataclass(frozen=True)
class EncodingSpec:
    whole_bits: int
    frac_bits: int

    def __post_init__(self):
        n, m = self.whole_bits, self.frac_bits
        if int(n) != n or int(m) != m or n < 0 or m < 0:
            raise ValueError("whole_bits and frac_bits must be non-negative integers")
        if n + m < 1:
            raise ValueError("need at least one magnitude bit")
        # magnitudes are handled as int64
        if n + m > 62:
            raise ValueError("at most 62 magnitude bits are supported")

    @property
    def length(self) -> int:
        return self.whole_bits + self.frac_bits + 1

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_magnitude(self) -> float:
        return 2.0 ** self.whole_bits - self.resolution

    @property
    def _max_code(self) -> int:
        return (1 << (self.whole_bits + self.frac_bits)) - 1


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        std = np.asarray(self.std, dtype=np.float64).ravel()
        if mean.shape != std.shape:
            raise ValueError("mean and std must have the same length")
        if not (std > 0).all():
            raise ValueError("every std must be positive")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def n_features(self) -> int:
        return self.mean.size

    def transform(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        if data.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {data.shape[-1]}")
        return (data - self.mean) / self.std

    def to_dict(self) -> dict:
        return {str(i): {"mean": float(mu), "std": float(sd)} for i, (mu, sd) in enumerate(zip(self.mean, self.std))}

    @classmethod
    def from_dict(cls, doc: dict) -> "NormStats":
        keys = sorted(doc, key=int)
        if [int(k) for k in keys] != list(range(len(keys))):
            raise ValueError("feature indices must be 0..r-1")
        return cls([doc[k]["mean"] for k in keys], [doc[k]["std"] for k in keys])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NormStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MergedString:
    payload: np.ndarray
    r: int
    spec: EncodingSpec

    def __post_init__(self):
        if self.payload.size != self.r * self.spec.length:
            raise ValueError("payload length must equal r * l")


def fit_zscore(dataset) -> NormStats:
    """Column means and population standard deviations.

    Zero-variance columns get ``std = 1`` (and a warning) so they normalize
    to a constant instead of dividing by zero.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise ValueError("dataset must be a non-empty records x features matrix")
    if data.shape[0] < 2:
        raise ValueError("need at least two records to estimate a spread")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    flat = ~(std > 0)
    if flat.any():
        warnings.warn(f"{int(flat.sum())} zero-variance feature(s); std clamped to 1", RuntimeWarning, stacklevel=2)
        std = np.where(flat, 1.0, std)
    return NormStats(mean, std)


def encode_matrix(values, spec: EncodingSpec) -> np.ndarray:
    """Encode an array of shape ``(..., r)`` into bits of shape ``(..., r*l)``."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 0:
        raise ValueError("expected at least a 1-D array of values")
    if not np.isfinite(x).all():
        raise ValueError("cannot encode NaN or infinite values")
    sign = np.signbit(x)
    # floor(|x| * 2^m) is exact in float64 for every on-grid value
    scaled = np.floor(np.ldexp(np.abs(x), spec.frac_bits))
    code = np.minimum(scaled, float(spec._max_code)).astype(np.int64)
    shifts = np.arange(spec.whole_bits + spec.frac_bits - 1, -1, -1, dtype=np.int64)
    magnitude = (code[..., None] >> shifts) & 1
    bits = np.concatenate([sign[..., None].astype(np.int64), magnitude], axis=-1).astype(np.uint8)
    return bits.reshape(*x.shape[:-1], x.shape[-1] * spec.length)


def decode_matrix(bits, spec: EncodingSpec) -> np.ndarray:
    """Inverse of :func:`encode_matrix` on the ``2^-m`` grid."""
    b = np.asarray(bits, dtype=np.int64)
    l = spec.length
    if b.shape[-1] % l:
        raise ValueError(f"bit length {b.shape[-1]} is not a multiple of l={l}")
    b = b.reshape(*b.shape[:-1], b.shape[-1] // l, l)
    weights = np.left_shift(1, np.arange(l - 2, -1, -1, dtype=np.int64))
    code = (b[..., 1:] * weights).sum(axis=-1)
    magnitude = np.ldexp(code.astype(np.float64), -spec.frac_bits)
    # copysign keeps the sign bit of an encoded zero, so decode -> encode is exact
    return np.copysign(magnitude, np.where(b[..., 0] == 1, -1.0, 1.0))


def encode_value(x: float, spec: EncodingSpec) -> np.ndarray:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x}")
    out = encode_matrix(np.array([x]), spec)
    out.flags.writeable = False
    return out


def decode_value(bits, spec: EncodingSpec) -> float:
    b = np.asarray(bits)
    if b.ndim != 1 or b.size != spec.length:
        raise ValueError(f"expected {spec.length} bits, got {b.size}")
    return float(decode_matrix(b, spec)[0])


def encode_vector(v, spec: EncodingSpec) -> MergedString:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty 1-D feature vector")
    payload = encode_matrix(v, spec)
    payload.flags.writeable = False
    return MergedString(payload, v.size, spec)


def sensitivity_of(spec: EncodingSpec, r: int) -> int:
    """Bits in which two merged strings of ``r`` features can differ: ``r * l``."""
    if int(r) != r or r < 1:
        raise ValueError("r must be a positive integer")
    return int(r) * spec.length
