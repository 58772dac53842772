"""Run all five solvers on one benchmark and write a history per solver.

    python3 scripts/compare_solvers.py --benchmark cavity --n 2 --p 3 --out results/cavity
"""
import argparse
import json
import os

import numpy as np

from chdg.benchmarks import BenchmarkSpec, build_problem, run_problem, write_history
from chdg.solvers import METHODS, SolverConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--benchmark", choices=["plane_wave", "cavity"], default="plane_wave")
    ap.add_argument("--n", type=int, default=2, help="box subdivisions per axis")
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--kappa", type=float, default=2.1 * np.pi)
    ap.add_argument("--rtol", type=float, default=1e-6)
    ap.add_argument("--maxit", type=int, default=20000)
    ap.add_argument("--restart", type=int, default=30)
    ap.add_argument("--log-error-every", type=int, default=10)
    ap.add_argument("--out", default="results/compare")
    args = ap.parse_args(argv)

    spec = BenchmarkSpec(args.benchmark, args.kappa, f"box:{args.n}", p=args.p)
    problem = build_problem(spec)
    print(f"{args.benchmark} n={args.n} p={args.p}: {problem.system.n_dof} skeleton unknowns")
    summary = {}
    for method in METHODS:
        cfg = SolverConfig(method, restart=args.restart, rtol=args.rtol, maxit=args.maxit)
        res = run_problem(problem, cfg, args.log_error_every)
        rep = res.report
        write_history(os.path.join(args.out, method), rep, {"benchmark": vars(args), "method": method})
        summary[method] = dict(status=rep.status, iterations=rep.iterations, residual=rep.final_residual,
                               error=res.relative_error, projection=res.projection_error, seconds=rep.wall_time)
        print(f"{method:12s} {rep.status:10s} it={rep.iterations:6d} res={rep.final_residual:.2e} "
              f"err={res.relative_error:.4e} proj={res.projection_error:.4e} t={rep.wall_time:.1f}s")
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
