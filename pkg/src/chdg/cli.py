"""``chdg run``: solve a benchmark problem and write its iteration history."""
from __future__ import annotations

import argparse
import logging
import re
import sys

import numpy as np

from .benchmarks import BenchmarkSpec, ConfigurationError, run_benchmark
from .mesh import BoundaryKind, MeshError
from .solvers import SolverConfig

SOLVERS = {
    "fp": "fixed_point",
    "cgnr-nodal": "cgnr_nodal",
    "cgnr-modal": "cgnr_modal",
    "gmres-nodal": "gmres_nodal",
    "gmres-modal": "gmres_modal",
}
BENCHMARKS = {"plane-wave": "plane_wave", "cavity": "cavity", "custom": "custom"}

log = logging.getLogger("chdg")


def parse_kappa(text: str) -> float:
    """Float or multiple of pi, e.g. ``6.597``, ``2.1pi``, ``2.1*pi``, ``pi``."""
    m = re.fullmatch(r"\s*([0-9.eE+-]*)\s*\*?\s*pi\s*", text)
    try:
        if m:
            return (float(m.group(1)) if m.group(1) else 1.0) * np.pi
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad wavenumber {text!r}") from None


def parse_boundary(text: str) -> tuple[str, BoundaryKind]:
    name, sep, kind = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=KIND, got {text!r}")
    try:
        return name, BoundaryKind.parse(kind)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chdg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one benchmark with one solver")
    run.add_argument("--benchmark", choices=sorted(BENCHMARKS), default="plane-wave")
    run.add_argument("--mesh", default="box:2", help="box:N or path to an MSH 4.1 ASCII file")
    run.add_argument("--boundary", type=parse_boundary, action="append", default=[],
                     metavar="NAME=KIND", help="boundary kind (E, H or I) for a physical name; 'all' for every tag")
    run.add_argument("--p", type=int, default=1, help="polynomial degree")
    run.add_argument("--kappa", type=parse_kappa, default=2.1 * np.pi, help="wavenumber, e.g. 6.6 or 2.1pi")
    run.add_argument("--kmax", type=int, default=25, help="cavity series truncation (odd)")
    run.add_argument("--solver", choices=sorted(SOLVERS), default="gmres-nodal")
    run.add_argument("--restart", type=int, default=30, help="GMRES restart length, 0 = none")
    run.add_argument("--rtol", type=float, default=1e-6)
    run.add_argument("--maxit", type=int, default=20000)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--out", default="chdg_out")
    run.add_argument("--strict", action="store_true", help="exit nonzero if the solver does not converge")
    run.add_argument("--log-error-every", type=int, default=10, metavar="K",
                     help="log the field error every K iterations (0 = final only)")
    run.add_argument("--export-vtk", action="store_true")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        spec = BenchmarkSpec(kind=BENCHMARKS[args.benchmark], kappa=args.kappa, mesh=args.mesh,
                             boundary=dict(args.boundary), p=args.p, kmax=args.kmax, threads=args.threads)
        cfg = SolverConfig(method=SOLVERS[args.solver], restart=args.restart, rtol=args.rtol,
                           maxit=args.maxit, kappa=args.kappa)
        code, res = run_benchmark(spec, cfg, args.out, log_error_every=args.log_error_every,
                                  export_vtk=args.export_vtk, strict=args.strict)
    except (ConfigurationError, MeshError, ValueError, OSError) as exc:
        print(f"chdg: error: {exc}", file=sys.stderr)
        return 1
    rep = res.report
    print(f"{rep.method}: {rep.status} after {rep.iterations} iterations, "
          f"rel. residual {rep.final_residual:.3e}, rel. error {res.relative_error:.4e} "
          f"(projection {res.projection_error:.4e}), {rep.wall_time:.2f} s")
    return code


if __name__ == "__main__":
    sys.exit(main())
