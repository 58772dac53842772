"""Reference solutions, error metrics, field export and the benchmark driver."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .local import cross, tangential_project
from .mesh import (BOX_FACES, BoundaryKind, Mesh, MeshError, RawMesh, build_box_mesh,
                   build_connectivity, parse_msh)
from .reference import reference_element, tet_quadrature
from .solvers import IterationReport, SolverConfig, solve
from .transmission import BoundarySources, TransmissionSystem, VolumeSource

DEFAULT_DIRECTION = np.ones(3) / np.sqrt(3.0)
DEFAULT_POLARIZATION = np.array([0.0, 1.0, -1.0]) / np.sqrt(2.0)
KINDS = ("plane_wave", "cavity", "custom")

Field = Callable[[np.ndarray], np.ndarray]  # (n, 3) points -> (n, 3) complex


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceSolution:
    e: Field
    h: Field
    name: str = ""


# ---------------------------------------------------------------------------
# reference fields


def plane_wave_reference(kappa: float, d=DEFAULT_DIRECTION, e0=DEFAULT_POLARIZATION) -> ReferenceSolution:
    """e = e0 exp(i kappa d.x), h = -d x e."""
    d = np.asarray(d, dtype=float)
    e0 = np.asarray(e0, dtype=complex)
    if kappa <= 0:
        raise ValueError(f"wavenumber must be positive, got {kappa}")
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if abs(np.dot(d, e0)) > 1e-12 * max(1.0, np.linalg.norm(e0)):
        raise ValueError("polarization must be orthogonal to the direction")
    dxe0 = np.cross(d, e0)

    def e(x):
        phase = np.exp(1j * kappa * (np.asarray(x) @ d))
        return phase[:, None] * e0[None, :]

    def h(x):
        phase = np.exp(1j * kappa * (np.asarray(x) @ d))
        return -phase[:, None] * dxe0[None, :]

    return ReferenceSolution(e, h, "plane_wave")


def cavity_coefficients(kappa: float, kmax: int = 25):
    """Odd mode numbers and the series coefficients c[k2, k3]."""
    if kmax < 1 or kmax % 2 == 0:
        raise ValueError(f"kmax must be a positive odd integer, got {kmax}")
    k = np.arange(1, kmax + 1, 2, dtype=float)
    lam = np.pi ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)
    gap = lam - kappa ** 2
    bad = np.argwhere(np.abs(gap) <= 1e-10 * lam)
    if len(bad):
        i, j = bad[0]
        raise ValueError(f"wavenumber {kappa} resonates with cavity mode (k2, k3) = ({int(k[i])}, {int(k[j])})")
    c = 16.0 / (np.pi ** 2 * k[:, None] * k[None, :] * gap)
    return k, c


def cavity_reference(kappa: float, kmax: int = 25):
    """PEC unit-cube cavity driven by the constant current J = (-i/kappa, 0, 0).

    Returns (ReferenceSolution, J) with ``J(x) -> (n, 3)``.  e has only an
    x-component, a double sine series over odd modes; h = i curl(e) / kappa
    term by term.
    """
    if kappa <= 0:
        raise ValueError(f"wavenumber must be positive, got {kappa}")
    k, c = cavity_coefficients(kappa, kmax)
    kp = np.pi * k

    def parts(x):
        x = np.asarray(x, dtype=float)
        y, z = x[:, 1:2], x[:, 2:3]
        return np.sin(kp * y), np.cos(kp * y), np.sin(kp * z), np.cos(kp * z)

    def e(x):
        sy, _, sz, _ = parts(x)
        out = np.zeros((len(sy), 3), dtype=complex)
        out[:, 0] = np.einsum("na,ab,nb->n", sy, c, sz)
        return out

    def h(x):
        sy, cy, sz, cz = parts(x)
        # curl (u, 0, 0) = (0, du/dz, -du/dy)
        dz = np.einsum("na,ab,nb->n", sy, c, cz * kp)
        dy = np.einsum("na,ab,nb->n", cy * kp, c, sz)
        out = np.zeros((len(sy), 3), dtype=complex)
        out[:, 1] = 1j * dz / kappa
        out[:, 2] = -1j * dy / kappa
        return out

    def current(x):
        out = np.zeros((len(np.asarray(x)), 3), dtype=complex)
        out[:, 0] = -1j / kappa
        return out

    return ReferenceSolution(e, h, "cavity"), current


def boundary_data(ref: ReferenceSolution) -> BoundarySources:
    """Boundary sources that make ``ref`` the exact solution on any tag mix."""
    return BoundarySources(
        s_E=lambda x, n: cross(n, ref.e(x)),
        s_H=lambda x, n: cross(n, ref.h(x)),
        s_I=lambda x, n: tangential_project(n, ref.e(x)) + cross(n, ref.h(x)),
    )


# ---------------------------------------------------------------------------
# error metrics


def _volume_rule(mesh: Mesh, p: int):
    ref = reference_element(p)
    q, w = tet_quadrature(2 * p + 2)
    x = mesh.physical_points(q)  # (nK, nq, 3)
    W = mesh.det[:, None] * w[None, :]
    return ref.interpolation_matrix(q), x, W


def _relative(W, e_h, h_h, e_r, h_r) -> float:
    num = np.sum(W[..., None] * (np.abs(e_h - e_r) ** 2 + np.abs(h_h - h_r) ** 2))
    den = np.sum(W[..., None] * (np.abs(e_r) ** 2 + np.abs(h_r) ** 2))
    return float(np.sqrt(num / den))


def _ref_at(ref: ReferenceSolution, x):
    nK, nq, _ = x.shape
    flat = x.reshape(-1, 3)
    return ref.e(flat).reshape(nK, nq, 3), ref.h(flat).reshape(nK, nq, 3)


def l2_relative_error(mesh: Mesh, p: int, e: np.ndarray, h: np.ndarray, ref: ReferenceSolution) -> float:
    """Relative L2 error of nodal fields ``e, h`` (nK, 3, Np) against ``ref``."""
    I, x, W = _volume_rule(mesh, p)
    e_q = np.einsum("qj,kdj->kqd", I, e)
    h_q = np.einsum("qj,kdj->kqd", I, h)
    e_r, h_r = _ref_at(ref, x)
    return _relative(W, e_q, h_q, e_r, h_r)


def l2_projection(mesh: Mesh, p: int, fn: Field) -> np.ndarray:
    """Element-wise L2 projection of ``fn`` as nodal values (nK, 3, Np)."""
    ref = reference_element(p)
    q, w = tet_quadrature(2 * p + 2)
    I = ref.interpolation_matrix(q)
    x = mesh.physical_points(q)
    vals = fn(x.reshape(-1, 3)).reshape(mesh.n_elements, len(w), 3)
    # MK^-1 (det I^T W f) = Mref^-1 I^T W f
    moments = np.einsum("q,qj,kqd->kdj", w, I, vals)
    return np.einsum("ij,kdj->kdi", np.linalg.inv(ref.Mref), moments)


def l2_projection_error(ref: ReferenceSolution, mesh: Mesh, p: int) -> float:
    return l2_relative_error(mesh, p, l2_projection(mesh, p, ref.e), l2_projection(mesh, p, ref.h), ref)


# ---------------------------------------------------------------------------
# VTK export


def _vtk_vectors(buf, name, arr):
    buf.write(f"VECTORS {name} double\n")
    for v in arr:
        buf.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")


def export_fields(path, mesh: Mesh, p: int, e: np.ndarray, h: np.ndarray, nodes_path=None) -> None:
    """Legacy ASCII VTK: one tetra cell per element with its vertex values.

    With ``nodes_path`` (and p > 1) every nodal value is also written as a
    point cloud of VTK_VERTEX cells.
    """
    ref = reference_element(p)
    nK = mesh.n_elements
    vid = ref.vertex_nodes if p >= 1 else np.zeros(4, dtype=int)
    pts = mesh.vertices[mesh.tetrahedra].reshape(-1, 3)
    ev = e[:, :, vid].transpose(0, 2, 1).reshape(-1, 3)
    hv = h[:, :, vid].transpose(0, 2, 1).reshape(-1, 3)
    cells = np.arange(4 * nK).reshape(nK, 4)
    _write_vtk(path, pts, cells, 10, ev, hv)
    if nodes_path is not None and p > 1:
        x = mesh.physical_points(ref.nodes).reshape(-1, 3)
        en = e.transpose(0, 2, 1).reshape(-1, 3)
        hn = h.transpose(0, 2, 1).reshape(-1, 3)
        _write_vtk(nodes_path, x, np.arange(len(x)).reshape(-1, 1), 1, en, hn)


def _write_vtk(path, pts, cells, cell_type, e, h):
    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\nCHDG fields\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {len(pts)} double\n")
    for v in pts:
        buf.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
    width = cells.shape[1]
    buf.write(f"CELLS {len(cells)} {len(cells) * (width + 1)}\n")
    for c in cells:
        buf.write(f"{width} " + " ".join(map(str, c)) + "\n")
    buf.write(f"CELL_TYPES {len(cells)}\n")
    buf.write(f"{cell_type}\n" * len(cells))
    buf.write(f"POINT_DATA {len(pts)}\n")
    for name, arr in (("Re_e", e.real), ("Im_e", e.imag), ("Re_h", h.real), ("Im_h", h.imag)):
        _vtk_vectors(buf, name, arr)
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# benchmark driver


@dataclass
class BenchmarkSpec:
    kind: str = "plane_wave"
    kappa: float = 2.1 * np.pi
    mesh: str = "box:2"  # "box:N" or a path to an MSH 4.1 file
    boundary: dict = field(default_factory=dict)  # physical name -> BoundaryKind
    p: int = 1
    kmax: int = 25
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown benchmark {self.kind!r}; expected one of {KINDS}")
        if not self.kappa > 0:
            raise ConfigurationError("kappa must be positive")
        if self.p < 1:
            raise ConfigurationError("benchmarks need p >= 1")
        self.boundary = {name: BoundaryKind.parse(k) if isinstance(k, str) else BoundaryKind(k)
                         for name, k in self.boundary.items()}


@dataclass
class Problem:
    spec: BenchmarkSpec
    mesh: Mesh
    system: TransmissionSystem
    rhs: np.ndarray
    reference: ReferenceSolution
    source: Optional[VolumeSource] = None


def load_raw_mesh(source: str, default_kind: BoundaryKind, boundary: dict) -> tuple[RawMesh, dict]:
    """Resolve ``box:N`` or an MSH path into a raw mesh and a tag map."""
    if source.startswith("box:"):
        try:
            n = int(source[4:])
        except ValueError:
            raise ConfigurationError(f"bad box mesh {source!r}, expected box:N") from None
        tags = {name: default_kind for name in BOX_FACES}
        for name, kind in boundary.items():
            if name == "all":
                tags = {nm: kind for nm in BOX_FACES}
            elif name in tags:
                tags[name] = kind
            else:
                raise ConfigurationError(f"unknown box face {name!r}; expected one of {BOX_FACES} or 'all'")
        raw = build_box_mesh(n, tags=tags)
        return raw, dict(raw.tag_kinds)
    with open(source) as fh:
        raw = parse_msh(fh.read())
    by_name = dict(boundary)
    if "all" in by_name:
        kind = by_name.pop("all")
        tag_map = {int(t): kind for t in np.unique(raw.boundary_tags)}
    else:
        tag_map = {}
    tag_map.update(raw.tag_map_from_names(by_name))
    return raw, tag_map


def build_problem(spec: BenchmarkSpec) -> Problem:
    default = BoundaryKind.E if spec.kind == "cavity" else BoundaryKind.I
    raw, tag_map = load_raw_mesh(spec.mesh, default, spec.boundary)
    try:
        mesh = build_connectivity(raw, tag_map)
    except MeshError as exc:
        raise ConfigurationError(str(exc)) from exc
    system = TransmissionSystem(mesh, spec.p, spec.kappa, threads=spec.threads)
    source = None
    if spec.kind == "cavity":
        bad = sorted({BoundaryKind(k).name for k in np.unique(mesh.kind) if k >= 0} - {"E"})
        if bad:
            raise ConfigurationError(f"cavity benchmark needs an all-E boundary, found {bad}")
        ref, current = cavity_reference(spec.kappa, spec.kmax)
        source = VolumeSource.from_function(mesh, spec.p, current)
        b = system.build_rhs(None, source)
    else:
        ref = plane_wave_reference(spec.kappa)
        b = system.build_rhs(boundary_data(ref))
    return Problem(spec, mesh, system, b, ref, source)


@dataclass
class RunResult:
    g: np.ndarray
    report: IterationReport
    relative_error: float
    projection_error: float
    e: np.ndarray
    h: np.ndarray


def run_problem(problem: Problem, cfg: SolverConfig, log_error_every: int = 10) -> RunResult:
    system, ref = problem.system, problem.reference

    def error_of(_, g):
        e, h = system.reconstruct(g, problem.source)
        return l2_relative_error(problem.mesh, system.p, e, h, ref)

    callback = error_of if log_error_every > 0 else None
    g, report = solve(system, problem.rhs, cfg, callback=callback, callback_every=max(1, log_error_every))
    e, h = system.reconstruct(g, problem.source)
    err = l2_relative_error(problem.mesh, system.p, e, h, ref)
    report.errors[report.iterations] = err
    proj = l2_projection_error(ref, problem.mesh, system.p)
    return RunResult(g, report, err, proj, e, h)


def history_rows(report: IterationReport):
    for it, r in enumerate(report.residuals):
        rm = report.residuals_M[it] if report.residuals_M is not None else None
        yield it, r, rm, report.errors.get(it)


def write_history(out_dir, report: IterationReport, metadata: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = list(history_rows(report))
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "rel_residual_2", "rel_residual_M", "rel_error"])
        for it, r, rm, err in rows:
            w.writerow([it, repr(r), "" if rm is None else repr(rm), "" if err is None else repr(err)])
    doc = dict(metadata)
    doc["history"] = [
        {"iter": it, "rel_residual_2": r, "rel_residual_M": rm, "rel_error": err} for it, r, rm, err in rows
    ]
    with open(out / "history.json", "w") as fh:
        json.dump(doc, fh, indent=1)


def run_benchmark(spec: BenchmarkSpec, cfg: SolverConfig, out_dir=None, log_error_every: int = 10,
                  export_vtk: bool = False, strict: bool = False) -> tuple[int, RunResult]:
    """Build, solve, log and export one benchmark; returns (exit code, result)."""
    problem = build_problem(spec)
    if cfg.kappa is None:
        cfg.kappa = spec.kappa
    result = run_problem(problem, cfg, log_error_every)
    rep = result.report
    if out_dir is not None:
        spec_meta = asdict(spec)
        spec_meta["boundary"] = {k: BoundaryKind(v).name for k, v in spec.boundary.items()}
        meta = {
            "benchmark": spec_meta,
            "solver": {"method": cfg.method, "restart": cfg.restart, "rtol": cfg.rtol, "maxit": cfg.maxit},
            "n_elements": problem.mesh.n_elements,
            "n_dof": problem.system.n_dof,
            "iterations": rep.iterations,
            "status": rep.status,
            "wall_time": rep.wall_time,
            "relative_error": result.relative_error,
            "projection_error": result.projection_error,
        }
        write_history(out_dir, rep, meta)
        if export_vtk:
            export_fields(os.path.join(out_dir, "fields.vtk"), problem.mesh, spec.p, result.e, result.h,
                          nodes_path=os.path.join(out_dir, "fields_nodes.vtk"))
    code = 0 if (rep.converged or not strict) else 2
    return code, result
