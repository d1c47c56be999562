"""Weighted lp distortion model of the quantizer.

Weighted norms use the convention ``||v||_{p,w} = ||diag(w) v||_p``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .compander import GaussianSource, QuantizerModel, compress, one_third_norm, qpdf
from .plevels import INF, DEFAULT_NQUAD, PLevelTable, plevel_table

QC = "QC"
DC = "DC"
DPC = "DpC"


def weighted_lp_norm(v, w, p) -> float:
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape:
        raise ValueError(f"dimension mismatch: v{v.shape} vs w{w.shape}")
    if p < 1:
        raise ValueError("p must be >= 1")
    u = np.abs(w * v)
    if p == INF:
        return float(u.max(initial=0.0))
    # rescale by the max entry so large p does not overflow
    m = u.max(initial=0.0)
    if m == 0:
        return 0.0
    return float(m * np.sum((u / m) ** p) ** (1.0 / p))


def dpc_weights(levels, p, src: GaussianSource) -> np.ndarray:
    """``w_i = G'(level_i)^{(p-2)/p}``; the exponent tends to 1 when ``p = inf``."""
    if p < 2:
        raise ValueError("p must be >= 2")
    levels = np.asarray(levels, dtype=float)
    if p == 2:
        return np.ones_like(levels)
    expo = 1.0 if p == INF else (p - 2.0) / p
    return qpdf(levels, src) ** expo


def epsilon_p(M: int, B: int, p, src: GaussianSource) -> float:
    """Asymptotic radius of the weighted quantization distortion.

    ``eps_p^p = M 2^{-Bp} / ((p+1) 2^p) * ||phi0||_{1/3}``; for ``p = inf``
    this tends to ``2^{-(B+1)}``.
    """
    if p == INF:
        return 2.0 ** -(B + 1)
    if p < 2:
        raise ValueError("p must be >= 2")
    log_eps_p = (
        math.log(M) - B * p * math.log(2.0) - math.log(p + 1.0) - p * math.log(2.0) + math.log(one_third_norm(src))
    )
    return math.exp(log_eps_p / p)


def epsilon_dc(M: int, B: int, src: GaussianSource) -> float:
    """Panter-Dite l2 radius ``sqrt(M (sqrt(3) pi / 2) sigma0^2 2^{-2B})``."""
    return math.sqrt(M * math.sqrt(3.0) * math.pi / 2.0 * src.sigma0 ** 2 * 2.0 ** (-2 * B))


def transition_threshold(B: int, src: GaussianSource, beta: float = 0.5) -> float:
    """Boundary ``T(B) = sqrt(6 sigma0^2 log(2^beta) B)`` between vanishing-bin and tail regimes."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return math.sqrt(6.0 * src.sigma0 ** 2 * beta * math.log(2.0) * B)


def dpc_table(p, q: QuantizerModel, n_quad: int = DEFAULT_NQUAD) -> PLevelTable:
    """Levels used to dequantize for the p-distortion constraint.

    At ``p = 2`` the quantizer's own compander levels are used (``Q_2 = Q``);
    otherwise the p-optimal levels.
    """
    if p == 2:
        iters = np.zeros(q.n_bins, dtype=int)
        iters.setflags(write=False)
        return PLevelTable(2, q, q.levels, iters, 0)
    return plevel_table(p, q, n_quad=n_quad)


@dataclass(frozen=True)
class WeightedConstraint:
    """Fidelity ball ``||Phi x - center||_{p,w} <= radius``."""

    p: float
    weights: np.ndarray
    radius: float
    center: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        c = np.asarray(self.center, dtype=float)
        if w.shape != c.shape or w.ndim != 1:
            raise ValueError("weights and center must be 1-D vectors of equal length")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise ValueError("radius must be finite and non-negative")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "center", c)

    @property
    def M(self) -> int:
        return len(self.center)

    def residual(self, z) -> float:
        return weighted_lp_norm(np.asarray(z) - self.center, self.weights, self.p)

    def contains(self, z, slack: float = 0.0) -> bool:
        return self.residual(z) <= self.radius * (1.0 + slack)


def dpc_constraint(bins, table: PLevelTable, M: int | None = None) -> WeightedConstraint:
    """D_pC ball built from observed 1-based bins, using the closed-form radius."""
    q = table.q
    src = q.source
    center = table.levels_for_bins(bins)
    w = dpc_weights(center, table.p, src)
    # tail levels can drive G' below the smallest double; keep weights positive
    w = np.maximum(w, np.finfo(float).tiny)
    M = len(center) if M is None else M
    return WeightedConstraint(table.p, w, epsilon_p(M, q.B, table.p, src), center)


class Consistency(NamedTuple):
    ok: bool
    residual: float
    radius: float


def check_consistency(x_est, sensing, y_levels, kind: str, q: QuantizerModel, table: PLevelTable | None = None):
    """Test an estimate against QC, DC or D_pC for the observed levels ``y_levels``.

    ``kind`` is ``"QC"``, ``"DC"`` or ``"DpC"``; the D_pC exponent is read
    from ``table``. QC membership is decided bin-exactly; its residual is
    ``||G(Phi x) - G(y)||_inf`` in compressed units.
    """
    z = np.asarray(sensing, dtype=float) @ np.asarray(x_est, dtype=float)
    y_levels = np.asarray(y_levels, dtype=float)
    if z.shape != y_levels.shape:
        raise ValueError(f"shape mismatch: Phi x has shape {z.shape}, y has {y_levels.shape}")
    src = q.source
    bins = q.bin_index(y_levels)
    if kind == QC:
        resid = float(np.max(np.abs(compress(z, src) - compress(y_levels, src)), initial=0.0))
        ok = bool(np.all(q.bin_index(z) == bins))
        return Consistency(ok, resid, q.alpha / 2)
    if kind == DC:
        resid = float(np.linalg.norm(z - y_levels))
        eps = epsilon_dc(len(z), q.B, src)
        return Consistency(resid <= eps, resid, eps)
    if kind == DPC:
        if table is None:
            raise ValueError("D_pC check needs a level table")
        c = dpc_constraint(bins, table)
        resid = c.residual(z)
        return Consistency(resid <= c.radius, resid, c.radius)
    raise ValueError(f"unknown consistency kind {kind!r}")


def nu_p(p) -> float:
    """``(E|Z|^p)^{1/p}`` for a standard normal ``Z``."""
    log_moment = 0.5 * p * math.log(2.0) - 0.5 * math.log(math.pi) + special.gammaln((p + 1) / 2.0)
    return math.exp(log_moment / p)


def gaussian_lpw_expectation(w, p) -> float:
    """Estimate ``nu_p ||w||_p`` of ``E||xi||_{p,w}`` for ``xi ~ N(0, I)``."""
    if not (1 <= p < INF):
        raise ValueError("p must be finite and >= 1")
    w = np.asarray(w, dtype=float)
    return nu_p(p) * weighted_lp_norm(np.ones_like(w), w, p)


def weighting_dynamic(w, p) -> float:
    """Empirical ``theta_p = (max w / (M^{-1/p} ||w||_p))^2``."""
    w = np.asarray(w, dtype=float)
    rho_min = len(w) ** (-1.0 / p) * weighted_lp_norm(np.ones_like(w), w, p)
    return float((w.max() / rho_min) ** 2)


def hra_weighting_dynamic(p) -> float:
    """High-resolution estimate ``theta_p = ((p+1)/3)^{1/p}``."""
    return ((p + 1.0) / 3.0) ** (1.0 / p)


def lpw_expectation_bounds(w, p, theta: float | None = None) -> tuple[float, float]:
    """Lower and upper bounds on ``E||xi||_{p,w}``.

    The upper bound is ``nu_p ||w||_p``; the lower one multiplies it by
    ``(1 + 2^{p+1} theta^p / M)^{1/p - 1}``. ``theta`` defaults to the
    empirical weighting dynamic of ``w``.
    """
    w = np.asarray(w, dtype=float)
    upper = gaussian_lpw_expectation(w, p)
    if theta is None:
        theta = weighting_dynamic(w, p)
    factor = (1.0 + 2.0 ** (p + 1) * theta ** p / len(w)) ** (1.0 / p - 1.0)
    return factor * upper, upper


@dataclass(frozen=True)
class ErrorRatio:
    M: int
    B: int
    p: int
    eps: float
    mu: float
    ratio: float
    asymptotic: float
    bound: float

    def to_dict(self) -> dict:
        return asdict(self)


PROP4_CONSTANT = 9.0 / 8.0 * math.sqrt(math.e * math.pi / 3.0)


def error_ratio_diagnostic(M: int, B: int, p, src: GaussianSource, n_quad: int = DEFAULT_NQUAD) -> ErrorRatio:
    """``eps_p / mu`` with ``mu`` computed from the expected D_pC weights.

    ``||w||_p^p`` is replaced by its expectation ``M sum_k p_k G'(w_{k,p})^{p-2}``
    over the bin probabilities ``p_k``. Also reports the high-resolution
    asymptote ``2^{-(B+1)} sqrt(6 pi) sigma0 (p+1)^{-1/(2p)} / nu_p`` and the
    published bound ``c' 2^{-B} (p+1)^{-1/(2p)} / sqrt(p+1)``.
    """
    if p == INF or p < 2:
        raise ValueError("p must be finite and >= 2")
    from .compander import design_quantizer

    q = design_quantizer(B, src)
    table = dpc_table(p, q, n_quad=n_quad)
    probs = np.diff(special.ndtr(q.thresholds / src.sigma0))
    g = qpdf(table.plevels, src)
    mean_wp = float(np.sum(probs * g ** (p - 2)))
    mu = nu_p(p) * (M * mean_wp) ** (1.0 / p)
    eps = epsilon_p(M, B, p, src)
    asym = 2.0 ** -(B + 1) * math.sqrt(6 * math.pi) * src.sigma0 * (p + 1.0) ** (-1.0 / (2 * p)) / nu_p(p)
    bound = PROP4_CONSTANT * src.sigma0 * 2.0 ** -B * (p + 1.0) ** (-1.0 / (2 * p)) / math.sqrt(p + 1.0)
    return ErrorRatio(M, B, int(p), eps, mu, eps / mu, asym, bound)
