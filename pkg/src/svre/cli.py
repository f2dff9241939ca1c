"""Command-line interface.

Exit codes: 0 success (run converged), 1 usage, config or check failure,
2 run aborted, 3 iteration limit reached.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from .bench import resolve_threads, run_benchmark, runs_to_csv
from .config import PROBLEMS, ConfigError, load_config, make_problem
from .estimator import ABORTED, CONVERGED, run_svre
from .oracle import BenchmarkDegenerate, crude_mc, pinned_entry, reference_probability, rrmse
from .problems import fourbranch_branches, gradient_check

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORTED = 2
EXIT_MAX_ITER = 3

log = logging.getLogger("svre")


def _emit(payload: dict, out: str | None):
    text = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    report = run_svre(cfg.make_problem(), cfg.svre)
    payload = report.to_dict()
    payload["problem"] = {"id": cfg.problem_id, "params": cfg.problem_params}
    payload["seed"] = cfg.svre.seed
    _emit(payload, args.out)
    if args.dump_samples and report.final_positions is not None:
        weights = report.weights if report.weights is not None else np.full(len(report.final_positions), np.nan)
        table = np.column_stack([report.final_positions, weights])
        header = ",".join([f"x{i}" for i in range(table.shape[1] - 1)] + ["weight"])
        np.savetxt(args.dump_samples, table, delimiter=",", header=header, comments="")
    if report.termination == CONVERGED:
        return EXIT_OK
    return EXIT_ABORTED if report.termination == ABORTED else EXIT_MAX_ITER


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.svre.seed
    runs = args.runs if args.runs is not None else cfg.runs
    if runs < 2:
        raise ConfigError("--runs must be >= 2")
    p_ref = args.p_ref if args.p_ref is not None else reference_probability(cfg.problem_id, cfg.problem_params)
    if p_ref is None:
        raise ConfigError(f"no reference probability for {cfg.problem_id!r}; pass --p-ref")
    threads = resolve_threads(args.threads)
    results = run_benchmark(cfg.make_problem, cfg.svre, runs, seed=seed, threads=threads)
    table = runs_to_csv(results)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(table)
    try:
        summary = rrmse([r for _, r in results], p_ref).to_dict()
        status = EXIT_OK
    except BenchmarkDegenerate as exc:
        log.error("%s", exc)
        summary = {"schema_version": "1.0", "p_ref": p_ref, "runs": runs, "excluded_runs": runs,
                   "rrmse": None, "rel_bias": None, "rel_std": None,
                   "mean_gradient_calls": float(np.mean([r.gradient_calls for _, r in results])),
                   "mean_model_calls": float(np.mean([r.model_calls for _, r in results]))}
        status = EXIT_ERROR
    summary["problem"] = {"id": cfg.problem_id, "params": cfg.problem_params}
    summary["master_seed"] = seed
    _emit({k: _clean(v) for k, v in summary.items()}, args.out)
    return status


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    name, params = cfg.problem_id, cfg.problem_params
    payload = {"schema_version": "1.0", "problem": {"id": name, "params": params}}
    if args.samples is None and name in ("linear", "quadratic"):
        payload.update(p_ref=reference_probability(name, params),
                       method="analytic" if name == "linear" else "quadrature",
                       n_samples=None, cov=0.0)
    elif args.samples is None and (entry := pinned_entry(name, params)) is not None:
        payload.update(p_ref=entry["p_ref"], method="pinned_" + entry["method"],
                       n_samples=entry["n_samples"], cov=entry["cov"])
    else:
        n = args.samples or 10**6
        seed = args.seed if args.seed is not None else cfg.svre.seed
        p, cov = crude_mc(cfg.make_problem(), n, seed=seed)
        payload.update(p_ref=p, method="crude_mc", n_samples=n, cov=_clean(cov))
    _emit(payload, args.out)
    return EXIT_OK


def _gradcheck_points(problem, name: str, count: int, rng: np.random.Generator) -> np.ndarray:
    pts = rng.standard_normal((4 * count, problem.dim))
    if name == "fourbranch":
        # keep away from branch ties where the gradient jumps
        b = np.sort(fourbranch_branches(pts), axis=1)
        pts = pts[b[:, 1] - b[:, 0] > 1e-3]
    return pts[:count]


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if args.config:
        cfg = load_config(args.config)
        cases = [(cfg.problem_id, cfg.problem_params)]
    else:
        cases = [(name, {}) for name in PROBLEMS]
    failed = False
    rows = []
    for name, params in cases:
        problem = make_problem(name, params)
        tol = args.tol if args.tol is not None else (1e-4 if name == "darcy" else 1e-5)
        errs = [gradient_check(problem, x, h=args.h) for x in _gradcheck_points(problem, name, args.points, rng)]
        worst = max(errs)
        ok = worst < tol
        failed |= not ok
        rows.append({"problem": name, "points": len(errs), "max_error": worst, "tol": tol, "ok": ok})
    _emit({"schema_version": "1.0", "checks": rows}, args.out)
    return EXIT_ERROR if failed else EXIT_OK


def cmd_list_problems(args) -> int:
    for name, spec in PROBLEMS.items():
        params = ", ".join(f"{k}={v}" for k, v in spec.defaults.items())
        print(f"{name}: {params}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svre", description="Stein variational rare event estimation.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--out", help="write JSON here instead of stdout")
        p.add_argument("--seed", type=int, help="overrides svre.seed from the config")

    p = sub.add_parser("run", help="single estimator run")
    common(p)
    p.add_argument("--dump-samples", metavar="CSV", help="write final estimation samples and weights")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="repeated runs with rRMSE summary")
    common(p)
    p.add_argument("--runs", type=int, help="overrides bench.runs")
    p.add_argument("--p-ref", type=float, help="reference probability; overrides the built-in one")
    p.add_argument("--csv", help="per-run table")
    p.add_argument("--threads", type=int, help="worker threads (default: $SVRE_THREADS or 1)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="reference probability for the configured problem")
    common(p)
    p.add_argument("--samples", type=int, help="force crude Monte Carlo with this many samples")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p, config_required=False)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("list-problems", help="registered problems and their default parameters")
    p.set_defaults(func=cmd_list_problems)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
