"""Processing that happens on the data owner's device.

An :class:`OwnerDevice` turns raw images into randomized merged strings
(extract, normalize, encode, randomize) and only ever hands out the
randomized result.
"""

from __future__ import annotations

import time
from typing import List

import numpy as np

from .encoding import EncodingSpec, NormStats, encode_matrix
from .features import ConvModule, extract_batch
from .ldp import ProtocolProbs, RngStream, _randomize_with_uniforms

__all__ = ["OwnerDevice"]


class OwnerDevice:
    """Per-owner perturbation pipeline.

    Record ``i`` is randomized with ``rng.child(i)``, so a batch call and a
    sequence of single-record calls give identical strings.
    """

    def __init__(self, module: ConvModule, stats: NormStats, spec: EncodingSpec, probs: ProtocolProbs, rng: RngStream):
        if stats.n_features != module.output_length:
            raise ValueError(f"normalization covers {stats.n_features} features, module emits {module.output_length}")
        self._module = module
        self._stats = stats
        self._spec = spec
        self._probs = probs
        self._rng = rng
        self.latencies: List[float] = []

    @property
    def bit_count(self) -> int:
        return self._module.output_length * self._spec.length

    def perturb(self, image, index: int) -> np.ndarray:
        """Randomized merged string of one image (read-only uint8 array)."""
        t0 = time.perf_counter()
        features = extract_batch(self._module, np.asarray(image, dtype=np.float64)[None])
        bits = encode_matrix(self._stats.transform(features), self._spec)[0]
        out = _randomize_with_uniforms(bits, self._probs, self._rng.child(index).uniform(bits.size))
        del bits
        self.latencies.append(time.perf_counter() - t0)
        out.flags.writeable = False
        return out

    def perturb_batch(self, images, start: int = 0, chunk: int = 256) -> np.ndarray:
        """Randomized strings for a batch; row ``j`` uses stream ``start + j``."""
        images = np.asarray(images, dtype=np.float64)
        out = np.empty((images.shape[0], self.bit_count), dtype=np.uint8)
        for lo in range(0, images.shape[0], chunk):
            feats = extract_batch(self._module, images[lo : lo + chunk])
            bits = encode_matrix(self._stats.transform(feats), self._spec)
            for j, row in enumerate(bits):
                u = self._rng.child(start + lo + j).uniform(row.size)
                out[lo + j] = _randomize_with_uniforms(row, self._probs, u)
        out.flags.writeable = False
        return out

    @property
    def mean_latency(self) -> float:
        return float(np.mean(self.latencies)) if self.latencies else 0.0
