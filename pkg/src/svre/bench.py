"""Repeated seeded runs of the estimator."""

from __future__ import annotations

import csv
import dataclasses
import io
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .estimator import EstimateReport, SvreConfig, run_svre
from .problems import LimitStateProblem

__all__ = ["derive_seed", "run_benchmark", "runs_to_csv", "resolve_threads"]

CSV_COLUMNS = ("run", "seed", "p_hat", "delta_hat", "iterations", "gradient_calls", "model_calls", "termination")


def derive_seed(master: int, index: int) -> int:
    """Seed of run ``index``; independent of how runs are scheduled."""
    state = np.random.SeedSequence([master, index]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("SVRE_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def run_benchmark(
    make_problem: Callable[[], LimitStateProblem],
    config: SvreConfig,
    runs: int,
    seed: int = 0,
    threads: int | None = None,
    seeds: list[int] | None = None,
) -> list[tuple[int, EstimateReport]]:
    """Run the estimator ``runs`` times with derived seeds.

    Each run gets its own problem instance, so call counters stay per run.
    Results come back in run order whatever the thread count.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if seeds is None:
        seeds = [derive_seed(seed, i) for i in range(runs)]
    elif len(seeds) != runs:
        raise ValueError("need one seed per run")

    def one(s: int):
        return s, run_svre(make_problem(), dataclasses.replace(config, seed=s))

    n_threads = resolve_threads(threads)
    if n_threads == 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(one, seeds))


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def runs_to_csv(results: list[tuple[int, EstimateReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for i, (s, r) in enumerate(results):
        writer.writerow(
            [i, s, _num(r.p_hat), _num(r.delta_hat), r.iterations, r.gradient_calls, r.model_calls, r.termination]
        )
    return buf.getvalue()
