"""Plane-wave error and projection error for p = 1..4 on a fixed box mesh.

    python3 scripts/p_convergence.py --n 2
"""
import argparse
import csv
import os

import numpy as np

from chdg.benchmarks import BenchmarkSpec, build_problem, run_problem
from chdg.solvers import SolverConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--degrees", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--kappa", type=float, default=2.1 * np.pi)
    ap.add_argument("--rtol", type=float, default=1e-10)
    ap.add_argument("--out", default="results/p_convergence.csv")
    args = ap.parse_args(argv)

    rows = []
    for p in args.degrees:
        problem = build_problem(BenchmarkSpec("plane_wave", args.kappa, f"box:{args.n}", p=p))
        res = run_problem(problem, SolverConfig("gmres_nodal", rtol=args.rtol, maxit=20000), 0)
        rows.append(dict(p=p, dofs=problem.system.n_dof, iterations=res.report.iterations,
                         rel_error=res.relative_error, projection_error=res.projection_error,
                         ratio=res.relative_error / res.projection_error))
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in rows[-1].items()))
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
