"""p-optimal quantizer levels.

For a bin ``R_k = [t_k, t_{k+1})`` and integer ``p >= 2`` the p-optimal level
minimizes ``E_{k,p}(lam) = int_{R_k} |t - lam|^p phi0(t) dt``. The integral
and its two derivatives are approximated with a composite Simpson rule and
the minimizer is found by a safeguarded Newton iteration. ``p = inf`` gives
the bin midpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .compander import QuantizerModel

INF = math.inf

# Infinite bin edges are replaced by +/- CLIP * sigma0 (the unit Gaussian
# density underflows to 0 in double precision at 39).
CLIP = 39.0
DEFAULT_NQUAD = 10001
NEWTON_MAX_ITER = 100
NEWTON_RTOL = 1e-15


class PLevelConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BinMoment:
    k: int
    p: int
    value: float
    d1: float
    d2: float


def _check_p(p):
    if p == INF:
        return
    if not (float(p).is_integer() and p >= 2):
        raise ValueError(f"p must be an integer >= 2 or INF, got {p!r}")


def clipped_edges(q: QuantizerModel) -> np.ndarray:
    """Thresholds with the two infinite ends replaced by ``-/+ CLIP sigma0``."""
    t = np.array(q.thresholds, dtype=float)
    t[0] = -CLIP * q.sigma0
    t[-1] = CLIP * q.sigma0
    return t


def simpson_weights(n_quad: int) -> np.ndarray:
    if n_quad < 3 or n_quad % 2 == 0:
        raise ValueError(f"n_quad must be odd and >= 3, got {n_quad}")
    c = np.ones(n_quad)
    c[1:-1:2] = 4.0
    c[2:-1:2] = 2.0
    return c / 3.0


class _BinQuadrature:
    """Simpson nodes and density-weighted coefficients for a batch of bins."""

    def __init__(self, a: np.ndarray, b: np.ndarray, sigma0: float, n_quad: int):
        c = simpson_weights(n_quad)
        s = np.linspace(0.0, 1.0, n_quad)
        self.a = a
        self.b = b
        self.x = a[:, None] + (b - a)[:, None] * s[None, :]
        dx = (b - a) / (n_quad - 1)
        pdf = np.exp(-0.5 * (self.x / sigma0) ** 2) / (math.sqrt(2 * math.pi) * sigma0)
        self.cw = c[None, :] * dx[:, None] * pdf

    def moments(self, lam: np.ndarray, p: int, rows=slice(None)):
        """Return ``(E, E', E'')`` at ``lam`` for the selected rows."""
        d = self.x[rows] - lam[:, None]
        ad = np.abs(d)
        cw = self.cw[rows]
        pm2 = ad ** (p - 2) if p > 2 else np.ones_like(ad)
        e2 = p * (p - 1) * np.sum(cw * pm2, axis=1)
        pm1 = pm2 * d  # |d|^{p-2} d = |d|^{p-1} sign(d)
        e1 = -p * np.sum(cw * pm1, axis=1)
        e0 = np.sum(cw * pm1 * d, axis=1)
        return e0, e1, e2


def bin_moment(k: int, p: int, lam: float, q: QuantizerModel, n_quad: int = DEFAULT_NQUAD) -> BinMoment:
    """Simpson approximation of ``E_{k,p}`` and its first two derivatives at ``lam``."""
    _check_p(p)
    if p == INF:
        raise ValueError("bin moments are defined for finite p only")
    t = clipped_edges(q)
    quad = _BinQuadrature(t[k - 1 : k], t[k : k + 1], q.sigma0, n_quad)
    e0, e1, e2 = quad.moments(np.array([float(lam)]), int(p))
    return BinMoment(k, int(p), float(e0[0]), float(e1[0]), float(e2[0]))


def _newton_batch(q: QuantizerModel, ks: np.ndarray, p: int, n_quad: int):
    """Solve ``E'_{k,p} = 0`` for every 1-based bin in ``ks``."""
    t = clipped_edges(q)
    nb = q.n_bins
    a = t[ks - 1]
    b = t[ks]
    quad = _BinQuadrature(a, b, q.sigma0, n_quad)

    lam = 0.5 * (a + b)
    # semi-infinite bins start from their finite edge
    lam = np.where(ks == 1, b, lam)
    lam = np.where(ks == nb, a, lam)

    lo = a.copy()
    hi = b.copy()
    iters = np.zeros(len(ks), dtype=int)
    active = np.ones(len(ks), dtype=bool)
    abs_tol = NEWTON_RTOL * q.sigma0

    for it in range(1, NEWTON_MAX_ITER + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        lam_i = lam[idx]
        _, e1, e2 = quad.moments(lam_i, p, rows=idx)
        # E' is increasing, so its sign narrows the bracket around the root
        lo[idx] = np.where(e1 <= 0, np.maximum(lo[idx], lam_i), lo[idx])
        hi[idx] = np.where(e1 >= 0, np.minimum(hi[idx], lam_i), hi[idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            new = lam_i - e1 / e2
        outside = ~np.isfinite(new) | (new < lo[idx]) | (new > hi[idx])
        new = np.where(outside, 0.5 * (lo[idx] + hi[idx]), new)
        step = np.abs(new - lam_i)
        done = (e1 == 0) | (step <= np.maximum(NEWTON_RTOL * np.abs(new), abs_tol)) | (hi[idx] <= lo[idx])
        lam[idx] = np.where(e1 == 0, lam_i, new)
        iters[idx] = it
        active[idx[done]] = False

    if np.any(active):
        bad = ks[active]
        raise PLevelConvergenceError(
            f"Newton did not converge for p={p}, bins {bad.tolist()} after {NEWTON_MAX_ITER} iterations; "
            f"brackets {list(zip(lo[active].tolist(), hi[active].tolist()))}"
        )
    return lam, iters


def newton_plevel(k: int, p: int, q: QuantizerModel, n_quad: int = DEFAULT_NQUAD) -> float:
    """p-optimal level of the 1-based bin ``k``."""
    _check_p(p)
    if p == INF:
        t = clipped_edges(q)
        return 0.5 * (t[k - 1] + t[k])
    lam, _ = _newton_batch(q, np.array([k]), int(p), n_quad)
    return float(lam[0])


@dataclass(frozen=True, eq=False)
class PLevelTable:
    p: float
    q: QuantizerModel
    plevels: np.ndarray
    newton_iters: np.ndarray
    quadrature_points: int

    def quantize_p(self, z):
        k = self.q.bin_index(z)
        return k, self.plevels[k - 1]

    def levels_for_bins(self, k) -> np.ndarray:
        return self.plevels[np.asarray(k) - 1]

    def to_dict(self) -> dict:
        return {
            "p": "inf" if self.p == INF else int(self.p),
            "quantizer": self.q.to_dict(),
            "plevels": [float(w) for w in self.plevels],
            "newton_iters": [int(i) for i in self.newton_iters],
            "quadrature_points": self.quadrature_points,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def plevel_table(p, q: QuantizerModel, n_quad: int = DEFAULT_NQUAD, chunk: int = 64) -> PLevelTable:
    """p-optimal levels for every bin of ``q``.

    Bins are solved in batches of ``chunk`` to bound the size of the
    quadrature arrays. The returned levels are made exactly antisymmetric.
    """
    _check_p(p)
    if p == INF:
        t = clipped_edges(q)
        levels = 0.5 * (t[:-1] + t[1:])
        iters = np.zeros(q.n_bins, dtype=int)
    else:
        p = int(p)
        # only the non-negative half is solved, the rest follows by symmetry
        half = q.n_bins // 2
        ks = np.arange(half + 1, q.n_bins + 1)
        upper = np.empty(len(ks))
        up_iters = np.empty(len(ks), dtype=int)
        for start in range(0, len(ks), chunk):
            sl = slice(start, start + chunk)
            upper[sl], up_iters[sl] = _newton_batch(q, ks[sl], p, n_quad)
        levels = np.concatenate((-upper[::-1], upper))
        iters = np.concatenate((up_iters[::-1], up_iters))
    levels.setflags(write=False)
    iters.setflags(write=False)
    return PLevelTable(p, q, levels, iters, int(n_quad))


def quantize_p(z, table: PLevelTable):
    return table.quantize_p(z)
