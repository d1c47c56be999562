"""Monte-Carlo experiments: radius validation, QCS sweeps, noise stabilization,
consistency histograms and the uniform-quantizer comparison.

Each experiment is described by an :class:`ExperimentSpec` and returns an
:class:`ExperimentResult` holding named tables (lists of row dicts) that are
written as CSV files. Trials draw from independent Philox substreams keyed
by ``(master_seed, trial, M)``, so results do not depend on the number of
workers or on scheduling order.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .compander import GaussianSource, compress, design_quantizer
from .plevels import DEFAULT_NQUAD, INF
from .prox import SolverConfig, gbpdn_solve, operator_norm
from .sensing import (
    GGDNoiseSpec,
    SparseSignalSpec,
    gaussian_matrix,
    ggd_noise,
    make_rng,
    sparse_signal,
    uniform_quantize_baseline,
    uniform_step,
)
from .wnorm import WeightedConstraint, dpc_constraint, dpc_table, dpc_weights, epsilon_p, weighted_lp_norm

EPS_VALIDATE = "EPS_VALIDATE"
GGD_STAB = "GGD_STAB"
QCS_SWEEP = "QCS_SWEEP"
QC_HIST = "QC_HIST"
UNIFORM_COMPARE = "UNIFORM_COMPARE"
KINDS = (EPS_VALIDATE, GGD_STAB, QCS_SWEEP, QC_HIST, UNIFORM_COMPARE)

LEMMA3 = "LEMMA3"
ORACLE = "ORACLE"

HIST_BINS = 40
HIST_RANGE = (-2.0, 2.0)

TRIAL_FIELDS = [
    "trial_index",
    "seed",
    "M",
    "p",
    "B",
    "decoder",
    "snr_db",
    "iterations",
    "fidelity_residual",
    "qc_rate",
    "status",
    "predicted_gain_db",
    "wallclock_ms",
]


@dataclass
class ExperimentSpec:
    kind: str
    N: int = 256
    K: int = 8
    B: int = 4
    oversampling_list: list = field(default_factory=lambda: [10, 25, 40])
    p_list: list = field(default_factory=lambda: [2, 4, 10])
    trials: int = 10
    master_seed: int = 2012
    radius_mode: str = LEMMA3
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_path: str | None = None
    # radius validation
    M: int = 1024
    B_list: list = field(default_factory=lambda: [3, 4, 5])
    # heteroscedastic noise: sigma_i ~ U[noise_sigma - noise_delta, noise_sigma + noise_delta]
    noise_sigma: float = 0.1
    noise_delta: float = 0.06
    uniform_baseline: bool = False
    n_quad: int = DEFAULT_NQUAD
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.radius_mode not in (LEMMA3, ORACLE):
            raise ValueError(f"unknown radius mode {self.radius_mode!r}")
        if isinstance(self.solver, dict):
            self.solver = SolverConfig.from_dict(self.solver)
        self.oversampling_list = list(self.oversampling_list)
        self.p_list = [INF if str(p).lower() in ("inf", "infinity") else p for p in self.p_list]
        self.B_list = list(self.B_list)
        if not (self.oversampling_list and self.p_list and self.B_list):
            raise ValueError("parameter lists must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["p_list"] = ["inf" if p == INF else p for p in self.p_list]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)


def default_spec(kind: str, paper_scale: bool = False, **overrides) -> ExperimentSpec:
    """Desk-scale defaults per experiment; ``paper_scale`` restores the full grids."""
    base: dict = {"kind": kind}
    if kind == EPS_VALIDATE:
        base.update(M=1024, B_list=[3, 4, 5], p_list=list(range(2, 16)), trials=1000)
    elif kind == QCS_SWEEP:
        base.update(oversampling_list=[10, 25, 40], p_list=[2, 4, 10], trials=10)
    elif kind == GGD_STAB:
        base.update(oversampling_list=[20, 50], p_list=[2], trials=20)
    elif kind == QC_HIST:
        base.update(oversampling_list=[40], p_list=[2, 10], trials=20)
    elif kind == UNIFORM_COMPARE:
        base.update(oversampling_list=[10, 25, 40], p_list=[2, 4, 10], trials=10)
    if paper_scale and kind != EPS_VALIDATE:
        base.update(N=1024, K=16, trials=50)
        if kind in (QCS_SWEEP, UNIFORM_COMPARE):
            base.update(oversampling_list=list(range(10, 50, 5)), p_list=[2, 4, 6, 8, 10])
        elif kind == GGD_STAB:
            base.update(oversampling_list=list(range(5, 55, 5)))
        elif kind == QC_HIST:
            base.update(trials=100)
    base.update(overrides)
    return ExperimentSpec(**base)


@dataclass
class TrialRecord:
    trial_index: int
    seed: int
    M: int
    p: float
    B: int
    decoder: str
    snr_db: float
    iterations: int
    fidelity_residual: float
    qc_rate: float
    status: str
    predicted_gain_db: float = float("nan")
    wallclock_ms: float = 0.0

    def row(self) -> dict:
        d = dataclasses.asdict(self)
        d["p"] = _fmt_p(self.p)
        return d


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    tables: dict  # name -> (fieldnames, rows)

    def table(self, name: str) -> list[dict]:
        return self.tables[name][1]


def _fmt_p(p):
    return "inf" if p == INF else int(p)


def snr_db(x, x_est) -> float:
    """Reconstruction SNR ``20 log10(||x|| / ||x - x_est||)``."""
    x = np.asarray(x, dtype=float)
    err = float(np.linalg.norm(x - np.asarray(x_est, dtype=float)))
    if err == 0:
        return float("inf")
    return 20.0 * math.log10(float(np.linalg.norm(x)) / err)


def trial_seed(master_seed: int, *index: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), *(int(i) for i in index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _stats(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    mean = float(np.sum(a) / a.size)
    se = float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return mean, se


@functools.lru_cache(maxsize=64)
def _tables(B: int, sigma0: float, p, n_quad: int):
    q = design_quantizer(B, GaussianSource(sigma0))
    return q, dpc_table(p, q, n_quad=n_quad)


# ---------------------------------------------------------------- radius validation


def run_eps_validation(spec: ExperimentSpec) -> ExperimentResult:
    """Mean of ``||Q_p[z] - z||_{p,w} / eps_p`` over Gaussian vectors ``z ~ N(0, I_M)``."""
    src = GaussianSource(1.0)
    rows = []
    chunk = 100
    for B in spec.B_list:
        q = design_quantizer(B, src)
        zs = []
        for start in range(0, spec.trials, chunk):
            stop = min(start + chunk, spec.trials)
            zs.append(np.stack([make_rng(spec.master_seed, t).standard_normal(spec.M) for t in range(start, stop)]))
        Z = np.concatenate(zs)
        bins = q.bin_index(Z)
        for p in spec.p_list:
            _, table = _tables(B, 1.0, p, spec.n_quad)
            lev = table.plevels[bins - 1]
            w = dpc_weights(lev, p, src)
            err = w * np.abs(lev - Z)
            if p == INF:
                norms = err.max(axis=1)
            else:
                m = err.max(axis=1, keepdims=True)
                norms = m[:, 0] * np.sum((err / m) ** p, axis=1) ** (1.0 / p)
            ratio = norms / epsilon_p(spec.M, B, p, src)
            mean, se = _stats(ratio)
            rows.append({"B": B, "p": _fmt_p(p), "ratio": mean, "stderr": se})
    return ExperimentResult(spec, {"eps_validate": (["B", "p", "ratio", "stderr"], rows)})


# ---------------------------------------------------------------- QCS trials


def _signal(spec: ExperimentSpec, trial: int):
    seed = trial_seed(spec.master_seed, trial)
    return seed, sparse_signal(SparseSignalSpec(spec.N, spec.K, seed))


def _dpc_ball(spec, bins, table, z):
    c = dpc_constraint(bins, table)
    if spec.radius_mode == ORACLE:
        c = WeightedConstraint(c.p, c.weights, c.residual(z), c.center)
    return c


def _uniform_ball(spec, y_unif, step, p, z):
    M = len(y_unif)
    if spec.radius_mode == ORACLE:
        radius = weighted_lp_norm(z - y_unif, np.ones(M), p)
    elif p == INF:
        radius = step / 2
    else:
        # E|U|^p = (step/2)^p / (p+1) for U uniform on a bin
        radius = step / 2 * (M / (p + 1.0)) ** (1.0 / p)
    return WeightedConstraint(p, np.ones(M), radius, y_unif)


def _solve_record(spec, trial, seed, M, p, decoder, x, Phi, nphi, ball, requantize, bins_ref):
    t0 = time.perf_counter()
    try:
        rep = gbpdn_solve(ball.center, Phi, ball, spec.solver, phi_norm=nphi)
    except Exception:  # noqa: BLE001 - recorded as a failed trial
        ms = (time.perf_counter() - t0) * 1e3
        rec = TrialRecord(trial, seed, M, p, spec.B, decoder, float("nan"), 0, float("nan"), float("nan"), "error")
        rec.wallclock_ms = ms
        return rec, None
    ms = (time.perf_counter() - t0) * 1e3
    zhat = Phi @ rep.estimate
    qc_rate = float(np.mean(requantize(zhat) == bins_ref))
    rec = TrialRecord(
        trial,
        seed,
        M,
        p,
        spec.B,
        decoder,
        snr_db(x, rep.estimate),
        rep.iterations,
        rep.fidelity_residual,
        qc_rate,
        rep.status,
        wallclock_ms=ms,
    )
    return rec, rep


def _qcs_task(spec: ExperimentSpec, trial: int, ratio: int, uniform: bool, want_residuals: bool):
    """All decoders for one (trial, M): shares the signal, matrix and its norm."""
    seed, x = _signal(spec, trial)
    M = ratio * spec.K
    Phi = gaussian_matrix(M, spec.N, trial_seed(spec.master_seed, trial, M))
    nphi = operator_norm(Phi)
    z = Phi @ x
    sigma0 = float(np.linalg.norm(x))
    out = []
    residuals = {}
    for p in spec.p_list:
        q, table = _tables(spec.B, sigma0, p, spec.n_quad)
        bins = q.bin_index(z)
        ball = _dpc_ball(spec, bins, table, z)
        rec, rep = _solve_record(spec, trial, seed, M, p, "nonuniform", x, Phi, nphi, ball, q.bin_index, bins)
        out.append(rec)
        if want_residuals and rep is not None:
            src = q.source
            residuals[p] = (compress(Phi @ rep.estimate, src) - compress(q.levels[bins - 1], src)) / q.alpha
    if uniform:
        y_unif = uniform_quantize_baseline(z, spec.B)
        step = uniform_step(z, spec.B)
        ps = spec.p_list if spec.kind == UNIFORM_COMPARE else [2]

        def requant(v):
            return np.clip(np.floor(v / step), -(2 ** (spec.B - 1)), 2 ** (spec.B - 1) - 1)

        ref = requant(z)
        for p in ps:
            ball = _uniform_ball(spec, y_unif, step, p, z)
            rec, _ = _solve_record(spec, trial, seed, M, p, "uniform", x, Phi, nphi, ball, requant, ref)
            out.append(rec)
    return out, residuals


def _ggd_task(spec: ExperimentSpec, trial: int, ratio: int, uniform: bool, want_residuals: bool):
    seed, x = _signal(spec, trial)
    M = ratio * spec.K
    mseed = trial_seed(spec.master_seed, trial, M)
    Phi = gaussian_matrix(M, spec.N, mseed)
    nphi = operator_norm(Phi)
    z = Phi @ x
    rng = make_rng(mseed, 4)
    sig = rng.uniform(spec.noise_sigma - spec.noise_delta, spec.noise_sigma + spec.noise_delta, size=M)
    # GGD with shape 2 and scale sqrt(2) sigma is N(0, sigma^2)
    noise = ggd_noise(GGDNoiseSpec(2.0, math.sqrt(2.0) * sig, mseed))
    y = z + noise
    ones = np.ones(M)
    w = 1.0 / sig
    eps = weighted_lp_norm(y - z, ones, 2)
    eps_st = weighted_lp_norm(y - z, w, 2)
    predicted = 20.0 * math.log10(eps * float(np.linalg.norm(w)) / (eps_st * math.sqrt(M)))
    out = []
    for name, weights, radius in (("unstabilized", ones, eps), ("stabilized", w, eps_st)):
        ball = WeightedConstraint(2, weights, radius, y)
        rec, _ = _solve_record(spec, trial, seed, M, 2, name, x, Phi, nphi, ball, lambda v: v, z)
        # there is no quantizer in this model, so the consistency rate is undefined
        rec.qc_rate = float("nan")
        rec.predicted_gain_db = predicted
        out.append(rec)
    return out, {}


def _run_trials(spec: ExperimentSpec, task, uniform=False, want_residuals=False):
    jobs = [(spec, t, r, uniform, want_residuals) for r in spec.oversampling_list for t in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as ex:
            results = list(ex.map(task, *zip(*jobs)))
    else:
        results = [task(*j) for j in jobs]
    records = [rec for recs, _ in results for rec in recs]
    residuals = [res for _, res in results]
    return records, residuals


def _aggregate(spec, records, decoders):
    rows = []
    base = {}
    for ratio in spec.oversampling_list:
        M = ratio * spec.K
        for p in spec.p_list:
            for dec in decoders:
                sel = [r for r in records if r.M == M and r.p == p and r.decoder == dec]
                if not sel:
                    continue
                ok = [r for r in sel if r.status in ("converged", "max_iters")]
                mean, se = _stats([r.snr_db for r in ok])
                it_mean, _ = _stats([r.iterations for r in ok])
                qc_mean, _ = _stats([r.qc_rate for r in ok])
                if p == 2 and dec == "nonuniform":
                    base[M] = mean
                rows.append(
                    {
                        "M_over_K": ratio,
                        "M": M,
                        "p": _fmt_p(p),
                        "decoder": dec,
                        "mean_snr_db": mean,
                        "stderr_snr_db": se,
                        "mean_iterations": it_mean,
                        "mean_qc_rate": qc_mean,
                        "n_trials": len(ok),
                        "failures": len(sel) - len(ok),
                    }
                )
    for row in rows:
        row["gain_vs_p2_db"] = row["mean_snr_db"] - base[row["M"]] if row["M"] in base else float("nan")
    return rows


SUMMARY_FIELDS = [
    "M_over_K",
    "M",
    "p",
    "decoder",
    "mean_snr_db",
    "stderr_snr_db",
    "gain_vs_p2_db",
    "mean_iterations",
    "mean_qc_rate",
    "n_trials",
    "failures",
]


def run_qcs_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """Reconstruct from non-uniformly quantized measurements for every (M/K, p, trial)."""
    records, _ = _run_trials(spec, _qcs_task, uniform=spec.uniform_baseline)
    decoders = ["nonuniform", "uniform"] if spec.uniform_baseline else ["nonuniform"]
    summary = _aggregate(spec, records, decoders)
    return ExperimentResult(
        spec,
        {
            "qcs_sweep_trials": (TRIAL_FIELDS, [r.row() for r in records]),
            "qcs_sweep_summary": (SUMMARY_FIELDS, summary),
        },
    )


def run_uniform_compare(spec: ExperimentSpec) -> ExperimentResult:
    """SNR gain of the non-uniform quantizer + GBPDN over uniform quantization + BPDQ at equal p."""
    records, _ = _run_trials(spec, _qcs_task, uniform=True)
    summary = _aggregate(spec, records, ["nonuniform", "uniform"])
    gains = []
    for ratio in spec.oversampling_list:
        for p in spec.p_list:
            cell = {r["decoder"]: r for r in summary if r["M_over_K"] == ratio and r["p"] == _fmt_p(p)}
            nu, un = cell["nonuniform"], cell["uniform"]
            gains.append(
                {
                    "M_over_K": ratio,
                    "p": _fmt_p(p),
                    "snr_nonuniform_db": nu["mean_snr_db"],
                    "snr_uniform_db": un["mean_snr_db"],
                    "gain_db": nu["mean_snr_db"] - un["mean_snr_db"],
                    "failures": nu["failures"] + un["failures"],
                }
            )
    fields = ["M_over_K", "p", "snr_nonuniform_db", "snr_uniform_db", "gain_db", "failures"]
    return ExperimentResult(
        spec,
        {
            "uniform_compare_trials": (TRIAL_FIELDS, [r.row() for r in records]),
            "uniform_compare_summary": (SUMMARY_FIELDS, summary),
            "uniform_compare_gain": (fields, gains),
        },
    )


def run_ggd_stabilization(spec: ExperimentSpec) -> ExperimentResult:
    """Weighted (w = 1/sigma_i) versus unweighted BPDN under heteroscedastic Gaussian noise."""
    records, _ = _run_trials(spec, _ggd_task)
    rows = []
    for ratio in spec.oversampling_list:
        M = ratio * spec.K
        sel = {d: [r for r in records if r.M == M and r.decoder == d] for d in ("unstabilized", "stabilized")}
        ok = {d: [r for r in v if r.status in ("converged", "max_iters")] for d, v in sel.items()}
        un, un_se = _stats([r.snr_db for r in ok["unstabilized"]])
        st, st_se = _stats([r.snr_db for r in ok["stabilized"]])
        pred, _ = _stats([r.predicted_gain_db for r in sel["stabilized"]])
        rows.append(
            {
                "M_over_K": ratio,
                "M": M,
                "snr_unstabilized_db": un,
                "stderr_unstabilized_db": un_se,
                "snr_stabilized_db": st,
                "stderr_stabilized_db": st_se,
                "gain_db": st - un,
                "predicted_gain_db": pred,
                "failures": sum(len(sel[d]) - len(ok[d]) for d in sel),
            }
        )
    fields = list(rows[0])
    return ExperimentResult(
        spec,
        {"ggd_stab_trials": (TRIAL_FIELDS, [r.row() for r in records]), "ggd_stab_summary": (fields, rows)},
    )


def qc_histogram(residuals) -> tuple[np.ndarray, np.ndarray]:
    """Counts of compressed-domain residuals on ``HIST_BINS`` bins over ``HIST_RANGE``.

    Values outside the range are counted in the end bins so the total mass
    equals the number of residuals.
    """
    r = np.clip(np.asarray(residuals, dtype=float), HIST_RANGE[0], HIST_RANGE[1])
    edges = np.linspace(HIST_RANGE[0], HIST_RANGE[1], HIST_BINS + 1)
    counts, _ = np.histogram(r, bins=edges)
    return counts, edges


def qc_violation_fraction(residuals) -> float:
    r = np.asarray(residuals, dtype=float)
    return float(np.mean(np.abs(r) > 0.5))


def run_qc_histogram(spec: ExperimentSpec) -> ExperimentResult:
    """Histogram of ``(G(Phi x*) - G(y)) / alpha`` pooled over trials, per (M/K, p)."""
    records, residuals = _run_trials(spec, _qcs_task, want_residuals=True)
    hist_rows = []
    summary = []
    jobs = [(r, t) for r in spec.oversampling_list for t in range(spec.trials)]
    for ratio in spec.oversampling_list:
        for p in spec.p_list:
            pooled = [res[p] for (r, _), res in zip(jobs, residuals) if r == ratio and p in res]
            pooled = np.concatenate(pooled) if pooled else np.zeros(0)
            counts, edges = qc_histogram(pooled)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                hist_rows.append({"M_over_K": ratio, "p": _fmt_p(p), "bin_lo": lo, "bin_hi": hi, "count": int(c)})
            summary.append(
                {
                    "M_over_K": ratio,
                    "p": _fmt_p(p),
                    "violation_fraction": qc_violation_fraction(pooled),
                    "total": int(counts.sum()),
                }
            )
    return ExperimentResult(
        spec,
        {
            "qc_hist_trials": (TRIAL_FIELDS, [r.row() for r in records]),
            "qc_hist": (["M_over_K", "p", "bin_lo", "bin_hi", "count"], hist_rows),
            "qc_hist_summary": (["M_over_K", "p", "violation_fraction", "total"], summary),
        },
    )


RUNNERS = {
    EPS_VALIDATE: run_eps_validation,
    QCS_SWEEP: run_qcs_sweep,
    GGD_STAB: run_ggd_stabilization,
    QC_HIST: run_qc_histogram,
    UNIFORM_COMPARE: run_uniform_compare,
}


def run(spec: ExperimentSpec) -> ExperimentResult:
    return RUNNERS[spec.kind](spec)


# ---------------------------------------------------------------- output


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            check=True,
            cwd=Path(__file__).resolve().parent,
        )
        return out.stdout.strip()
    except (OSError, subprocess.CalledProcessError):
        return "unknown"


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path: Path, fields: list, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\r\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row[k]) for k in fields})


def write_result(result: ExperimentResult, out_dir) -> list[Path]:
    """Write every table as ``<name>.csv`` plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (fields, rows) in result.tables.items():
        path = out / f"{name}.csv"
        write_csv(path, fields, rows)
        paths.append(path)
    manifest = {
        "spec": result.spec.to_dict(),
        "seed": result.spec.master_seed,
        "git_describe": git_describe(),
        "version": __version__,
        "outputs": [p.name for p in paths],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return paths
