"""Regenerate the pinned reference values used by tests and benchmarks.

Usage: python3 scripts/pin_oracles.py [--out pinned.json] [--darcy-samples N]

Runtime is dominated by the Darcy crude Monte Carlo run (about three
minutes for 1e7 samples on one core).
"""

from __future__ import annotations

import argparse
import json
import math
import time

import numpy as np
from scipy.optimize import brentq

from svre.darcy import DarcyConfig, darcy_lsf, kl_decompose
from svre.oracle import crude_mc, fourbranch_reference, quadratic_reference
from svre.problems import fourbranch_lsf


def exponential_kernel_lambda1(corr_len: float) -> float:
    """Leading eigenvalue of exp(-|s - t| / corr_len) on an interval of length 1.

    On [-1/2, 1/2] the even eigenfunctions are cos(w s) with
    ``c - w tan(w / 2) = 0``, ``c = 1 / corr_len``, and ``lambda = 2 c / (w^2 + c^2)``.
    """
    c = 1.0 / corr_len
    w = brentq(lambda w: c - w * math.tan(w / 2.0), 1e-12, math.pi - 1e-12, xtol=1e-15)
    return 2.0 * c / (w * w + c * c)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="pinned_oracles.json")
    ap.add_argument("--darcy-samples", type=int, default=10**7)
    ap.add_argument("--fourbranch-samples", type=int, default=10**8)
    ap.add_argument("--darcy-long-samples", type=int, default=0,
                    help="extra independent Darcy run (1e8 takes about half an hour)")
    args = ap.parse_args()
    out: dict = {}

    t = time.time()
    out["kl_lambda1"] = {
        "grid_4097": float(kl_decompose(0.1, 4097, 1).eigenvalues[0]),
        "grid_513": float(kl_decompose(0.1, 513, 1).eigenvalues[0]),
        "analytic": exponential_kernel_lambda1(0.1),
    }
    out["quadratic_beta4_kappa10"] = quadratic_reference(4.0, 10.0)
    print(json.dumps(out, indent=2), flush=True)

    p, cov = crude_mc(fourbranch_lsf(0.0), args.fourbranch_samples, seed=20240601, batch=1_000_000)
    out["fourbranch_gamma0_mc"] = {"p_ref": p, "cov": cov, "n_samples": args.fourbranch_samples, "seed": 20240601}
    for gamma in (0.0, 2.0, 4.0):
        p, cov = fourbranch_reference(gamma, 10**7, seed=7)
        out[f"fourbranch_gamma{gamma:g}_mixture_is"] = {"p_ref": p, "cov": cov, "n_samples": 10**7, "seed": 7}
    print(json.dumps(out, indent=2), flush=True)

    problem = darcy_lsf(DarcyConfig(d=10))
    out["darcy_d10_g_at_origin"] = float(problem.eval(np.zeros(10)))
    p, cov = crude_mc(problem, args.darcy_samples, seed=20240602, batch=20_000)
    out["darcy_d10_mc"] = {"p_ref": p, "cov": cov, "n_samples": args.darcy_samples, "seed": 20240602}
    if args.darcy_long_samples:
        p, cov = crude_mc(problem, args.darcy_long_samples, seed=20240603, batch=20_000)
        out["darcy_d10_mc_long"] = {"p_ref": p, "cov": cov, "n_samples": args.darcy_long_samples, "seed": 20240603}
    out["elapsed_s"] = time.time() - t
    print(json.dumps(out, indent=2), flush=True)
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)


if __name__ == "__main__":
    main()
