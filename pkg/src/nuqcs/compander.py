"""Compander description of the optimal B-bit quantizer for a Gaussian source.

Under the high-resolution regime the optimal compressor of a N(0, sigma0^2)
source is the CDF of N(0, 3 sigma0^2), so thresholds and levels are images
of a regular grid of [0, 1] under its inverse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

MAX_BITS = 16


@dataclass(frozen=True)
class GaussianSource:
    """Zero-mean Gaussian measurement source with standard deviation ``sigma0``."""

    sigma0: float = 1.0

    def __post_init__(self):
        if not (self.sigma0 > 0 and math.isfinite(self.sigma0)):
            raise ValueError(f"sigma0 must be positive and finite, got {self.sigma0}")

    def pdf(self, t):
        s = self.sigma0
        return np.exp(-0.5 * (np.asarray(t, dtype=float) / s) ** 2) / (math.sqrt(2 * math.pi) * s)

    @property
    def compander_scale(self) -> float:
        # standard deviation of the Gaussian whose CDF is the compressor
        return math.sqrt(3.0) * self.sigma0


def compress(lam, src: GaussianSource):
    """Compressor G: the CDF of N(0, 3 sigma0^2). Total on the extended reals."""
    return special.ndtr(np.asarray(lam, dtype=float) / src.compander_scale)


def expand(u, src: GaussianSource):
    """Expander G^{-1} on the open interval (0, 1).

    Raises ``ValueError`` for arguments outside (0, 1); the infinite end
    thresholds are handled by the callers.
    """
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise ValueError("expand is defined on the open interval (0, 1)")
    return src.compander_scale * special.ndtri(u)


def qpdf(lam, src: GaussianSource):
    """Quantizer point density G', i.e. the N(0, 3 sigma0^2) density."""
    s = src.compander_scale
    lam = np.asarray(lam, dtype=float)
    return np.exp(-0.5 * (lam / s) ** 2) / (math.sqrt(2 * math.pi) * s)


@dataclass(frozen=True, eq=False)
class QuantizerModel:
    """Thresholds ``t_1 < ... < t_{2^B+1}`` and compander levels of a B-bit quantizer.

    Indices exposed by :meth:`quantize` are 1-based to match the usual
    bin numbering ``R_k = [t_k, t_{k+1})``; the arrays themselves are
    0-based numpy arrays.
    """

    B: int
    sigma0: float
    thresholds: np.ndarray
    levels: np.ndarray

    @property
    def alpha(self) -> float:
        return 2.0 ** -self.B

    @property
    def n_bins(self) -> int:
        return 2 ** self.B

    @property
    def source(self) -> GaussianSource:
        return GaussianSource(self.sigma0)

    def bin_edges(self, k: int) -> tuple[float, float]:
        """Edges ``(t_k, t_{k+1})`` of the 1-based bin ``k``."""
        return float(self.thresholds[k - 1]), float(self.thresholds[k])

    def bin_index(self, z) -> np.ndarray:
        """1-based bin indices of ``z`` under the half-open convention."""
        # interior thresholds only; side="right" puts t_k itself into bin k
        return np.searchsorted(self.thresholds[1:-1], np.asarray(z, dtype=float), side="right") + 1

    def quantize(self, z):
        """Return ``(k, omega_k)`` for scalar or array ``z``."""
        k = self.bin_index(z)
        return k, self.levels[k - 1]

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "sigma0": self.sigma0,
            "thresholds": [_encode_float(t) for t in self.thresholds],
            "levels": [float(w) for w in self.levels],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerModel":
        thresholds = np.array([_decode_float(t) for t in d["thresholds"]])
        levels = np.array(d["levels"], dtype=float)
        thresholds.setflags(write=False)
        levels.setflags(write=False)
        return cls(int(d["B"]), float(d["sigma0"]), thresholds, levels)


def _encode_float(x: float):
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return float(x)


def _decode_float(x) -> float:
    if isinstance(x, str):
        return float(x.replace("+", ""))
    return float(x)


def design_quantizer(B: int, src: GaussianSource) -> QuantizerModel:
    """Build the compander quantizer ``t_k = G^{-1}((k-1) a)``, ``w_k = G^{-1}((k-1/2) a)``."""
    if not (isinstance(B, (int, np.integer)) and 1 <= B <= MAX_BITS):
        raise ValueError(f"B must be an integer in [1, {MAX_BITS}], got {B!r}")
    n = 2 ** B
    alpha = 2.0 ** -B
    inner = expand(np.arange(1, n) * alpha, src)
    thresholds = np.concatenate(([-np.inf], inner, [np.inf]))
    levels = expand((np.arange(1, n + 1) - 0.5) * alpha, src)
    # the inverse CDF is antisymmetric only up to round-off; enforce it exactly
    thresholds = 0.5 * (thresholds - thresholds[::-1])
    levels = 0.5 * (levels - levels[::-1])
    thresholds.setflags(write=False)
    levels.setflags(write=False)
    return QuantizerModel(int(B), src.sigma0, thresholds, levels)


def quantize(z, q: QuantizerModel):
    return q.quantize(z)


def panter_dite_mse(q: QuantizerModel) -> float:
    """High-resolution MSE prediction ``(sqrt(3) pi / 2) sigma0^2 2^{-2B}``."""
    return math.sqrt(3.0) * math.pi / 2.0 * q.sigma0 ** 2 * 2.0 ** (-2 * q.B)


def one_third_norm(src: GaussianSource) -> float:
    """``(int phi0^{1/3})^3 = 2 pi sigma0^2 3^{3/2}``."""
    return 2.0 * math.pi * src.sigma0 ** 2 * 3.0 ** 1.5
