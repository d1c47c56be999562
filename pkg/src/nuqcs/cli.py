"""Command-line entry point.

Experiment subcommands accept the fields of ``ExperimentSpec`` as flags or a
complete spec through ``--config spec.json``; flags given explicitly override
the file. Tables are written as CSV into ``--out`` (default ``results/<cmd>``)
together with ``manifest.json``, which can be passed back to ``--config`` to
repeat a run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import harness
from .compander import GaussianSource, design_quantizer, panter_dite_mse
from .plevels import DEFAULT_NQUAD, INF
from .prox import SolverConfig, project_lp_ball
from .sensing import make_rng
from .wnorm import dpc_table, weighted_lp_norm

EXPERIMENTS = {
    "eps-validate": harness.EPS_VALIDATE,
    "qcs-sweep": harness.QCS_SWEEP,
    "ggd-stab": harness.GGD_STAB,
    "qc-hist": harness.QC_HIST,
    "uniform-compare": harness.UNIFORM_COMPARE,
}


def _p_value(s: str):
    return INF if s.lower() in ("inf", "infinity") else int(s)


def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v]


def _p_list(s: str) -> list:
    return [_p_value(v) for v in s.split(",") if v]


def _add_experiment_args(sp: argparse.ArgumentParser) -> None:
    # defaults are None so that only explicit flags override --config and the per-kind defaults
    sp.add_argument("--config", help="JSON spec or run manifest")
    sp.add_argument("--N", type=int)
    sp.add_argument("--K", type=int)
    sp.add_argument("--B", type=int)
    sp.add_argument("--M", type=int, help="measurements for eps-validate")
    sp.add_argument("--B-list", dest="B_list", type=_int_list, help="comma list, eps-validate")
    sp.add_argument("--oversampling", dest="oversampling_list", type=_int_list, help="comma list of M/K")
    sp.add_argument("--p-list", dest="p_list", type=_p_list, help="comma list, 'inf' allowed")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", dest="master_seed", type=int)
    sp.add_argument("--radius-mode", dest="radius_mode", choices=[harness.LEMMA3, harness.ORACLE])
    sp.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    sp.add_argument("--noise-delta", dest="noise_delta", type=float)
    sp.add_argument("--uniform-baseline", dest="uniform_baseline", action="store_true", default=None)
    sp.add_argument("--n-quad", dest="n_quad", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--max-iters", type=int)
    sp.add_argument("--rel-tol", type=float)
    sp.add_argument("--paper-scale", action="store_true")
    sp.add_argument("--out", help="output directory")


SPEC_FLAGS = (
    "N",
    "K",
    "B",
    "M",
    "B_list",
    "oversampling_list",
    "p_list",
    "trials",
    "master_seed",
    "radius_mode",
    "noise_sigma",
    "noise_delta",
    "uniform_baseline",
    "n_quad",
    "workers",
)


def spec_from_args(kind: str, args: argparse.Namespace) -> harness.ExperimentSpec:
    fields: dict = {}
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        # a run manifest nests the spec
        fields = dict(loaded.get("spec", loaded))
        if fields.get("kind", kind) != kind:
            raise SystemExit(f"config is for {fields['kind']}, not {kind}")
        fields.pop("kind", None)
    for name in SPEC_FLAGS:
        val = getattr(args, name)
        if val is not None:
            fields[name] = val
    solver = fields.get("solver", {})
    if isinstance(solver, SolverConfig):
        solver = solver.__dict__.copy()
    if args.max_iters is not None:
        solver["max_iters"] = args.max_iters
    if args.rel_tol is not None:
        solver["rel_change_tol"] = args.rel_tol
    fields["solver"] = SolverConfig.from_dict(solver)
    if args.config:
        return harness.ExperimentSpec(kind=kind, **fields)
    return harness.default_spec(kind, paper_scale=args.paper_scale, **fields)


def _cmd_experiment(args) -> int:
    kind = EXPERIMENTS[args.command]
    spec = spec_from_args(kind, args)
    out = args.out or spec.output_path or f"results/{args.command}"
    spec.output_path = out
    result = harness.run(spec)
    for path in harness.write_result(result, out):
        print(path)
    return 0


def _cmd_design(args) -> int:
    q = design_quantizer(args.B, GaussianSource(args.sigma0))
    if args.json:
        print(q.to_json(indent=2))
        return 0
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "t_lo", "t_hi", "level"])
    for k in range(1, q.n_bins + 1):
        lo, hi = q.bin_edges(k)
        w.writerow([k, repr(float(lo)), repr(float(hi)), repr(float(q.levels[k - 1]))])
    print(f"# predicted MSE {panter_dite_mse(q)!r}", file=sys.stderr)
    return 0


def _cmd_plevels(args) -> int:
    q = design_quantizer(args.B, GaussianSource(args.sigma0))
    table = dpc_table(args.p, q, n_quad=args.n_quad)
    if args.json:
        print(table.to_json(indent=2))
        return 0
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "level", "newton_iters"])
    for k in range(1, q.n_bins + 1):
        w.writerow([k, repr(float(table.plevels[k - 1])), int(table.newton_iters[k - 1])])
    return 0


def _cmd_project_test(args) -> int:
    """Project random vectors and report sphere error, KKT residual and idempotence."""
    rng = make_rng(args.seed, 5)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["instance", "M", "p", "input_norm", "norm_error", "kkt_residual", "idempotence"])
    worst = 0.0
    for i in range(args.instances):
        v = rng.standard_normal(args.M) * rng.uniform(0.5, 5.0)
        ones = np.ones(args.M)
        z = project_lp_ball(v, args.p, args.radius)
        nz = weighted_lp_norm(z, ones, args.p)
        kkt = 0.0
        if weighted_lp_norm(v, ones, args.p) > args.radius and args.p != INF:
            # v - z must be parallel to the gradient of ||.||_p^p at z
            g = np.abs(z) ** (args.p - 1) * np.sign(z)
            mu = float((v - z) @ g) / float(g @ g)
            kkt = float(np.linalg.norm(v - z - mu * g)) / float(np.linalg.norm(v))
        idem = float(np.max(np.abs(project_lp_ball(z, args.p, args.radius) - z)))
        worst = max(worst, kkt)
        w.writerow([i, args.M, args.p, repr(weighted_lp_norm(v, ones, args.p)), repr(max(nz - args.radius, 0.0)), repr(kkt), repr(idem)])
    print(f"# worst KKT residual {worst!r}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nuqcs", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("design", help="compander thresholds and levels")
    sp.add_argument("--B", type=int, required=True)
    sp.add_argument("--sigma0", type=float, default=1.0)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=_cmd_design)

    sp = sub.add_parser("plevels", help="p-optimal dequantization levels")
    sp.add_argument("--B", type=int, required=True)
    sp.add_argument("--p", type=_p_value, required=True)
    sp.add_argument("--sigma0", type=float, default=1.0)
    sp.add_argument("--n-quad", type=int, default=DEFAULT_NQUAD)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=_cmd_plevels)

    sp = sub.add_parser("project-test", help="self-check of the lp-ball projection")
    sp.add_argument("--M", type=int, default=20)
    sp.add_argument("--p", type=_p_value, default=4)
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_project_test)

    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        _add_experiment_args(sp)
        sp.set_defaults(func=_cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
