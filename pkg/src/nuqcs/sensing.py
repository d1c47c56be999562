"""Signals, sensing matrices, noise and the quantized measurement pipeline.

Every generator takes an explicit seed. Random streams come from numpy's
counter-based Philox bit generator keyed by a ``SeedSequence`` built from the
master seed and any stream indices, so a trial's draws depend only on
``(seed, indices)`` and not on the order in which trials run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .compander import QuantizerModel
from .plevels import PLevelTable


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the substream ``(seed, *stream)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))


def gaussian_matrix(M: int, N: int, seed: int) -> np.ndarray:
    if M < 1 or N < 1:
        raise ValueError("M and N must be positive")
    return make_rng(seed, 1).standard_normal((M, N))


@dataclass(frozen=True)
class SparseSignalSpec:
    N: int
    K: int
    seed: int
    amp_sigma: float | None = None
    normalize: bool = True

    def __post_init__(self):
        if not 1 <= self.K <= self.N:
            raise ValueError(f"need 1 <= K <= N, got K={self.K}, N={self.N}")


def sparse_signal(spec: SparseSignalSpec) -> np.ndarray:
    """K-sparse vector with uniformly drawn support and Gaussian amplitudes."""
    rng = make_rng(spec.seed, 2)
    support = rng.choice(spec.N, size=spec.K, replace=False)
    sigma = spec.amp_sigma if spec.amp_sigma is not None else 1.0 / math.sqrt(spec.K)
    amps = rng.standard_normal(spec.K) * sigma
    # a zero amplitude would break the exact-K contract
    while np.any(amps == 0):
        amps[amps == 0] = rng.standard_normal(int(np.sum(amps == 0))) * sigma
    x = np.zeros(spec.N)
    x[support] = amps
    if spec.normalize:
        x /= np.linalg.norm(x)
    return x


@dataclass(frozen=True)
class GGDNoiseSpec:
    shape_p: float
    scales: np.ndarray
    seed: int

    def __post_init__(self):
        if not self.shape_p > 0:
            raise ValueError("shape_p must be positive")
        scales = np.asarray(self.scales, dtype=float)
        if np.any(scales <= 0):
            raise ValueError("scales must be positive")
        object.__setattr__(self, "scales", scales)


def ggd_noise(spec: GGDNoiseSpec) -> np.ndarray:
    """Draws with density proportional to ``exp(-|t / alpha_i|^p)``.

    ``|e| = alpha G^{1/p}`` with ``G ~ Gamma(1/p, 1)`` and an independent sign.
    """
    rng = make_rng(spec.seed, 3)
    M = spec.scales.shape[0]
    g = rng.gamma(1.0 / spec.shape_p, 1.0, size=M)
    sign = np.where(rng.random(M) < 0.5, -1.0, 1.0)
    return sign * spec.scales * g ** (1.0 / spec.shape_p)


class QCSMeasurement(NamedTuple):
    bins: np.ndarray
    levels: np.ndarray
    plevels: np.ndarray


def qcs_measure(x, sensing, q: QuantizerModel, table: PLevelTable) -> QCSMeasurement:
    """Quantize ``Phi x``; returns 1-based bins, compander levels and table levels."""
    x = np.asarray(x, dtype=float)
    Phi = np.asarray(sensing, dtype=float)
    if Phi.ndim != 2 or Phi.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: Phi {Phi.shape} vs x {x.shape}")
    if table.q is not q and table.q.B != q.B:
        raise ValueError("level table was built for a different quantizer")
    bins = q.bin_index(Phi @ x)
    return QCSMeasurement(bins, q.levels[bins - 1], table.plevels[bins - 1])


def uniform_step(z, B: int) -> float:
    return 2.0 * float(np.max(np.abs(z))) / 2 ** B


def uniform_quantize_baseline(z, B: int) -> np.ndarray:
    """Midpoint uniform quantizer of ``[-||z||_inf, ||z||_inf]`` with ``2^B`` bins."""
    z = np.asarray(z, dtype=float)
    step = uniform_step(z, B)
    if step == 0:
        raise ValueError("uniform baseline needs a nonzero input")
    half = 2 ** (B - 1)
    # the value +||z||_inf itself is folded into the top bin
    j = np.clip(np.floor(z / step), -half, half - 1)
    return step * j + step / 2
