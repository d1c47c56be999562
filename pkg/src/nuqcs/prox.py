"""GBPDN solver: l1 minimization inside a weighted lp fidelity ball.

The program ``min ||u||_1 s.t. ||y - Phi u||_{p,w} <= eps`` is rewritten with
``L = diag(w) Phi`` and ``y' = diag(w) y`` and solved with the relaxed
Arrow-Hurwicz (Chambolle-Pock) primal-dual iteration::

    v    <- prox_{sigma g*}(v + sigma L ubar)
    u'   <- soft(u - tau L^T v, tau)
    ubar <- u' + theta (u' - u)
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import TextIO

import numpy as np

from .plevels import INF
from .wnorm import WeightedConstraint, weighted_lp_norm

AUTO = "auto"


class ProjectionError(RuntimeError):
    pass


def soft_threshold(u, tau):
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)


def _lp_norm(u, p) -> float:
    return weighted_lp_norm(u, np.ones_like(u), p)


def _shrink_magnitudes(a: np.ndarray, c: float, p: float) -> np.ndarray:
    """Solve ``s + c s^{p-1} = a`` for ``s >= 0`` elementwise (``a >= 0``, ``c > 0``).

    The left side is convex and increasing, so Newton started above the root
    decreases monotonically onto it.
    """
    s = np.minimum(a, (a / c) ** (1.0 / (p - 1.0)))
    for _ in range(100):
        f = s + c * s ** (p - 1.0) - a
        df = 1.0 + c * (p - 1.0) * s ** (p - 2.0)
        step = f / df
        s_new = np.maximum(s - step, 0.0)
        if np.all(np.abs(s_new - s) <= 1e-15 * np.maximum(s_new, 1e-300)):
            return s_new
        s = s_new
    return s


def _unit_ball_multiplier(a: np.ndarray, p: float, tol: float, max_newton: int) -> float:
    """KKT multiplier ``lam`` so that ``sum s_i(lam)^p = 1`` for the magnitudes ``a``.

    ``s_i(lam)`` solves ``s + lam p s^{p-1} = a_i``. For large ``lam`` the sum
    behaves like a power of ``lam``, so Newton runs on ``log sum s^p`` as a
    function of ``log lam``; a bracket on ``lam`` guards every step and
    bisection takes over if Newton stalls.
    """

    def h(lam):
        s = _shrink_magnitudes(a, lam * p, p)
        sp1 = s ** (p - 1.0)
        total = float(np.sum(sp1 * s))
        ds = -p * sp1 / (1.0 + lam * p * (p - 1.0) * s ** (p - 2.0))
        # d log(total) / d log(lam)
        slope = lam * float(np.sum(p * sp1 * ds)) / total if total > 0 else -np.inf
        return total, slope

    lo = 0.0
    # at this multiplier s_i <= (a_i / (lam p))^{1/(p-1)} already lies in the ball
    hi = float(np.sum(a ** (p / (p - 1.0)))) ** ((p - 1.0) / p) / p
    lam = hi
    total, slope = h(lam)
    for _ in range(max_newton):
        if abs(total - 1.0) <= tol:
            return lam
        if total > 1.0:
            lo = lam
        else:
            hi = lam
        if np.isfinite(slope) and slope < 0:
            new = lam * math.exp(-math.log(total) / slope)
        else:
            new = 0.5 * (lo + hi)
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if new == lam:
            return lam
        lam = new
        total, slope = h(lam)

    for _ in range(200):
        if abs(total - 1.0) <= tol or hi - lo <= 4 * np.finfo(float).eps * hi:
            return lam
        if total > 1.0:
            lo = lam
        else:
            hi = lam
        lam = 0.5 * (lo + hi)
        total, _ = h(lam)
    if abs(total - 1.0) > math.sqrt(tol):
        raise ProjectionError(f"lp-ball projection stagnated (p={p}, |h|={abs(total - 1.0):.3e})")
    return lam


def project_lp_ball(v, p, radius: float, tol: float = 1e-10, max_newton: int = 200) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{z : ||z||_p <= radius}``, ``2 <= p <= inf``."""
    v = np.asarray(v, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if p == INF:
        return np.clip(v, -radius, radius)
    nrm = _lp_norm(v, p)
    # a point already on the sphere can have a recomputed norm a few ulp above the radius
    if nrm <= radius * (1.0 + 8.0 * np.finfo(float).eps):
        return v.copy()
    if p == 2:
        return v * (radius / nrm)
    if p < 2:
        raise ValueError("p must be >= 2")
    a = np.abs(v) / radius
    lam = _unit_ball_multiplier(a, float(p), tol, max_newton)
    s = _shrink_magnitudes(a, lam * p, float(p))
    # final radial correction to land on the sphere up to round-off
    sn = _lp_norm(s, p)
    if sn > 1.0:
        s = s / sn
    return np.sign(v) * s * radius


def prox_dual_fidelity(v, sigma: float, y_center, p, radius: float, tol: float = 1e-10, max_newton: int = 200):
    """``prox_{sigma g*}(v) = v - sigma y - proj_{B_p(sigma eps)}(v - sigma y)`` (Moreau)."""
    shifted = np.asarray(v, dtype=float) - sigma * np.asarray(y_center, dtype=float)
    return shifted - project_lp_ball(shifted, p, sigma * radius, tol=tol, max_newton=max_newton)


def operator_norm(mat, tol: float = 1e-10, max_iter: int = 5000, seed: int = 0) -> float:
    """Spectral norm of ``mat`` by power iteration on ``mat^T mat``."""
    A = np.asarray(mat, dtype=float)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[1])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = A.T @ (A @ x)
        ny = np.linalg.norm(y)
        if ny == 0:
            # start vector orthogonal to the row space: restart
            x = rng.standard_normal(A.shape[1])
            x /= np.linalg.norm(x)
            continue
        new = float(x @ y)
        x = y / ny
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return math.sqrt(lam)


@dataclass
class SolverConfig:
    max_iters: int = 2000
    rel_change_tol: float = 1e-6
    # convergence also requires ||y - Phi u||_{p,w} <= (1 + feasibility_tol) eps
    feasibility_tol: float = 1e-5
    theta: float = 1.0
    step_sigma: float | str = AUTO
    step_tau: float | str = AUTO
    projection_tol: float = 1e-10
    projection_max_newton: int = 200

    def __post_init__(self):
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if (self.step_sigma == AUTO) != (self.step_tau == AUTO):
            raise ValueError("step_sigma and step_tau must both be set or both be AUTO")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)


@dataclass
class SolveReport:
    estimate: np.ndarray
    iterations: int
    final_rel_change: float
    fidelity_residual: float
    objective: float
    converged: bool
    status: str = "converged"
    step_sigma: float = float("nan")
    step_tau: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimate"] = [float(x) for x in self.estimate]
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _rel_change(new, old, new_norm: float) -> float:
    d = float(np.linalg.norm(new - old))
    if new_norm > 0:
        return d / new_norm
    return 0.0 if d == 0 else float("inf")


def gbpdn_solve(
    y_center,
    sensing,
    constraint: WeightedConstraint,
    cfg: SolverConfig | None = None,
    *,
    phi_norm: float | None = None,
    trace: TextIO | None = None,
) -> SolveReport:
    """Solve ``min ||u||_1 s.t. ||y - Phi u||_{p,w} <= eps``.

    ``y_center`` is the center of the fidelity ball; ``constraint`` supplies
    ``p``, the weights and the radius. ``phi_norm`` can pass a precomputed
    spectral norm of ``sensing``. With ``trace`` set, one CSV row
    ``iter,rel_change,fidelity_residual,objective`` is written per iteration.
    """
    cfg = cfg or SolverConfig()
    Phi = np.asarray(sensing, dtype=float)
    y = np.asarray(y_center, dtype=float)
    M, N = Phi.shape
    if y.shape != (M,) or len(constraint.weights) != M:
        raise ValueError(f"shape mismatch: Phi is {Phi.shape}, y has {y.shape}, constraint has M={constraint.M}")
    w = constraint.weights
    p = constraint.p
    L = w[:, None] * Phi
    yw = w * y
    eps = constraint.radius
    if eps <= 0:
        eps = 1e-12 * float(np.linalg.norm(yw))

    if cfg.step_sigma == AUTO:
        nphi = operator_norm(Phi) if phi_norm is None else phi_norm
        sigma = tau = 0.99 / (float(w.max()) * nphi)
    else:
        sigma, tau = float(cfg.step_sigma), float(cfg.step_tau)
        nphi = operator_norm(Phi) if phi_norm is None else phi_norm
        if not (sigma > 0 and tau > 0 and sigma * tau * float(w.max()) ** 2 * nphi ** 2 < 1):
            raise ValueError("step sizes must satisfy sigma tau ||w||_inf^2 ||Phi||^2 < 1")

    u = np.zeros(N)
    ubar = np.zeros(N)
    v = np.zeros(M)
    zero_feasible = _lp_norm(yw, p) <= eps
    blowup = 1e6 * max(float(np.linalg.norm(yw)), 1.0) / max(float(w.min()), 1e-300)
    writer = csv.writer(trace) if trace is not None else None
    if writer is not None:
        writer.writerow(["iter", "rel_change", "fidelity_residual", "objective"])

    rel = float("inf")
    status = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        v_new = prox_dual_fidelity(
            v + sigma * (L @ ubar), sigma, yw, p, eps, tol=cfg.projection_tol, max_newton=cfg.projection_max_newton
        )
        u_new = soft_threshold(u - tau * (L.T @ v_new), tau)
        ubar = u_new + cfg.theta * (u_new - u)
        un = float(np.linalg.norm(u_new))
        rel = _rel_change(u_new, u, un)
        # the primal iterate can stall for a step while the dual one still moves
        rel_dual = _rel_change(v_new, v, float(np.linalg.norm(v_new)))
        u, v = u_new, v_new
        if not np.all(np.isfinite(u)) or un > blowup:
            status = "diverged"
            break
        # the residual is only needed once the iterates have settled
        settled = rel < cfg.rel_change_tol and rel_dual < cfg.rel_change_tol
        if writer is not None or settled:
            resid = _lp_norm(yw - L @ u, p) - eps
            if writer is not None:
                writer.writerow([it, repr(rel), repr(resid), repr(float(np.abs(u).sum()))])
            # u stays at 0 for a few iterations while the dual variable builds up
            if settled and (un > 0 or zero_feasible) and resid <= cfg.feasibility_tol * eps:
                status = "converged"
                break

    resid = _lp_norm(yw - L @ u, p) - eps
    return SolveReport(
        estimate=u,
        iterations=it,
        final_rel_change=rel,
        fidelity_residual=float(resid),
        objective=float(np.abs(u).sum()),
        converged=status == "converged",
        status=status,
        step_sigma=sigma,
        step_tau=tau,
    )
