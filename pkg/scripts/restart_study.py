"""Iterations of restarted GMRES against the restart length.

    python3 scripts/restart_study.py --benchmark plane_wave --n 2 --p 3 --restarts 5 10 30 0
"""
import argparse

import numpy as np

from chdg.benchmarks import BenchmarkSpec, build_problem, run_problem
from chdg.solvers import SolverConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--benchmark", choices=["plane_wave", "cavity"], default="plane_wave")
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--kappa", type=float, default=2.1 * np.pi)
    ap.add_argument("--rtol", type=float, default=1e-6)
    ap.add_argument("--restarts", type=int, nargs="+", default=[5, 10, 30, 0], help="0 = unrestarted")
    args = ap.parse_args(argv)

    problem = build_problem(BenchmarkSpec(args.benchmark, args.kappa, f"box:{args.n}", p=args.p))
    for method in ("gmres_nodal", "gmres_modal"):
        for m in args.restarts:
            rep = run_problem(problem, SolverConfig(method, restart=m, rtol=args.rtol, maxit=20000), 0).report
            print(f"{method:12s} restart={m or 'none':>4}  {rep.status:10s} it={rep.iterations:6d} "
                  f"t={rep.wall_time:.2f}s")


if __name__ == "__main__":
    main()
