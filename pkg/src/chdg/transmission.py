"""Skeleton operators of the hybridized CHDG system (I - Pi S) g = b.

A transmission field is a flat complex vector of length ``n_dof`` laid out
element-major, then local face, then Cartesian component, then face node;
``TransmissionSystem.as_field`` views it as ``(nK, 4, 3, Nfp)``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .local import (ElementOperator, FieldState, assemble_element, cross, elemental_matrices,
                    tangential_project)
from .mesh import INTERIOR, BoundaryKind, Mesh
from .reference import reference_element, tri_basis, tri_quadrature, triangle_to_face

# (points (n, 3), normals (n, 3)) -> values (n, 3)
SurfaceData = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class BoundarySources:
    s_E: Optional[SurfaceData] = None
    s_H: Optional[SurfaceData] = None
    s_I: Optional[SurfaceData] = None


@dataclass
class VolumeSource:
    """Impressed current as nodal values, shape (nK, 3, Np)."""

    values: np.ndarray

    @classmethod
    def from_function(cls, mesh: Mesh, p: int, fn: Callable[[np.ndarray], np.ndarray]) -> "VolumeSource":
        ref = reference_element(p)
        x = mesh.physical_points(ref.nodes)  # (nK, Np, 3)
        vals = np.asarray(fn(x.reshape(-1, 3)), dtype=complex).reshape(mesh.n_elements, ref.Np, 3)
        return cls(vals.transpose(0, 2, 1).copy())


def shape_groups(mesh: Mesh) -> list[np.ndarray]:
    """Group elements whose affine maps differ only by a translation."""
    scale = float(np.max(np.abs(mesh.jacobian)))
    keys = np.round(mesh.jacobian.reshape(mesh.n_elements, 9) / scale, 11)
    keys[keys == 0.0] = 0.0  # fold -0.0
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    return [np.flatnonzero(inverse == g) for g in range(inverse.max() + 1)]


class TransmissionSystem:
    """Exchange, scattering and face-mass operators for one mesh, degree and wavenumber."""

    def __init__(self, mesh: Mesh, p: int, kappa: float, threads: int = 1):
        if kappa <= 0:
            raise ValueError(f"wavenumber must be positive, got {kappa}")
        self.mesh = mesh
        self.p = p
        self.kappa = float(kappa)
        self.threads = max(1, int(threads))
        self.ref = ref = reference_element(p)
        self.Np, self.Nfp = ref.Np, ref.Nfp
        nK = mesh.n_elements
        self.shape = (nK, 4, 3, self.Nfp)
        self.n_dof = nK * 12 * self.Nfp

        self.groups = shape_groups(mesh)
        self.group_of = np.empty(nK, dtype=np.int64)
        self.operators: list[ElementOperator] = []
        for gi, idx in enumerate(self.groups):
            K = idx[0]
            mats = elemental_matrices(ref, mesh.jacobian[K], mesh.face_area[K])
            self.operators.append(assemble_element(self.kappa, mats, mesh.normals[K]))
            self.group_of[idx] = gi
        self._stacked = None
        if len(self.groups) > max(8, nK // 4):
            self._stacked = np.stack([self.operators[g].scatter for g in self.group_of])

        # face mass blocks
        MF = (mesh.face_area[:, :, None, None] / 2.0) * ref.face_M2[None]
        self.face_mass = MF
        chol = np.linalg.cholesky(MF)
        linv = np.linalg.inv(chol)
        self.face_mass_inv = np.einsum("kfji,kfjl->kfil", linv, linv)

        # exchange tables
        perm = mesh.node_permutations(ref)
        src = np.arange(self.n_dof).reshape(self.shape).copy()
        sign = np.zeros(self.shape)
        K, f = np.nonzero(mesh.kind == INTERIOR)
        L, g = mesh.neighbor[K, f], mesh.neighbor_face[K, f]
        for d in range(3):
            src[K, f, d, :] = np.ravel_multi_index(
                (L[:, None], g[:, None], np.full_like(perm[K, f], d), perm[K, f]), self.shape)
        sign[K, f] = 1.0
        sign[mesh.kind == int(BoundaryKind.E)] = -1.0
        sign[mesh.kind == int(BoundaryKind.H)] = 1.0
        self._src = src.ravel()
        self._sign = sign.ravel()

    # -- layout helpers -------------------------------------------------------

    def as_field(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(g).reshape(self.shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_dof, dtype=complex)

    def project_tangential(self, g: np.ndarray) -> np.ndarray:
        gf = self.as_field(g)
        n = self.mesh.normals[:, :, :, None]
        return (gf - n * np.sum(n * gf, axis=2, keepdims=True)).ravel()

    def tangency_defect(self, g: np.ndarray) -> float:
        """max |n.g| over all nodes, relative to max |g|."""
        gf = self.as_field(g)
        top = np.max(np.abs(gf), initial=0.0)
        if top == 0:
            return 0.0
        return float(np.max(np.abs(np.einsum("kfd,kfdi->kfi", self.mesh.normals, gf))) / top)

    def random_field(self, rng: np.random.Generator) -> np.ndarray:
        g = rng.standard_normal(self.n_dof) + 1j * rng.standard_normal(self.n_dof)
        return self.project_tangential(g)

    # -- operators ------------------------------------------------------------

    def apply_exchange(self, g: np.ndarray) -> np.ndarray:
        return self._sign * np.asarray(g)[self._src]

    def apply_exchange_adjoint(self, g: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_dof, dtype=np.result_type(g, complex))
        out[self._src] = self._sign * np.asarray(g)
        return out

    def _blockwise(self, g: np.ndarray, adjoint: bool) -> np.ndarray:
        gl = np.asarray(g).reshape(self.mesh.n_elements, -1)
        out = np.empty(gl.shape, dtype=complex)
        if self._stacked is not None:
            mats = self._stacked
            if adjoint:
                out[:] = np.einsum("kji,kj->ki", mats.conj(), gl)
            else:
                out[:] = np.einsum("kij,kj->ki", mats, gl)
            return out.ravel()

        def work(gi):
            idx = self.groups[gi]
            S = self.operators[gi].scatter
            out[idx] = gl[idx] @ (S.conj() if adjoint else S.T)

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                list(pool.map(work, range(len(self.groups))))
        else:
            for gi in range(len(self.groups)):
                work(gi)
        return out.ravel()

    def apply_scattering(self, g: np.ndarray, source: VolumeSource | None = None) -> np.ndarray:
        out = self._blockwise(g, adjoint=False)
        if source is not None:
            out = out + self.source_traces(source)
        return out

    def apply_scattering_adjoint(self, g: np.ndarray) -> np.ndarray:
        return self._blockwise(g, adjoint=True)

    def apply_PiS(self, g: np.ndarray) -> np.ndarray:
        return self.apply_exchange(self.apply_scattering(g))

    def apply_A(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(g) - self.apply_exchange(self.apply_scattering(g))

    def apply_A_adjoint(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(g) - self.apply_scattering_adjoint(self.apply_exchange_adjoint(g))

    # -- face mass ------------------------------------------------------------

    def mass_apply(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("kfij,kfdj->kfdi", self.face_mass, self.as_field(g)).ravel()

    def mass_solve(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("kfij,kfdj->kfdi", self.face_mass_inv, self.as_field(g)).ravel()

    def inner_M(self, g1: np.ndarray, g2: np.ndarray) -> complex:
        """<g1, g2> on the element boundaries: sum of conj(g2) . M g1."""
        return complex(np.vdot(g2, self.mass_apply(g1)))

    def norm_M(self, g: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner_M(g, g).real, 0.0)))

    # -- fields and sources ---------------------------------------------------

    def _local_solves(self, g: np.ndarray | None, source: VolumeSource | None) -> np.ndarray:
        """Solve all local problems; returns stacked unknown vectors (nK, 6Np)."""
        nK, Np = self.mesh.n_elements, self.Np
        u = np.empty((nK, 6 * Np), dtype=complex)
        gl = None if g is None else np.asarray(g).reshape(nK, -1)
        for gi, idx in enumerate(self.groups):
            op = self.operators[gi]
            rhs = np.zeros((6 * Np, len(idx)), dtype=complex)
            if gl is not None:
                rhs += op.injection @ gl[idx].T
            if source is not None:
                J = source.values[idx]  # (m, 3, Np)
                rhs[: 3 * Np] += np.einsum("ij,mdj->dim", op.matrices.MK, J).reshape(3 * Np, len(idx))
            u[idx] = op.solve(rhs).T
        return u

    def reconstruct(self, g: np.ndarray, source: VolumeSource | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Element fields (e, h), each (nK, 3, Np), for incoming data ``g``."""
        u = self._local_solves(g, source)
        nK, Np = self.mesh.n_elements, self.Np
        return u[:, : 3 * Np].reshape(nK, 3, Np), u[:, 3 * Np:].reshape(nK, 3, Np)

    def field_states(self, g: np.ndarray, source: VolumeSource | None = None) -> list[FieldState]:
        e, h = self.reconstruct(g, source)
        return [FieldState(e[K], h[K]) for K in range(self.mesh.n_elements)]

    def source_traces(self, source: VolumeSource) -> np.ndarray:
        """Outgoing traces of the source-only local responses (g = 0)."""
        u = self._local_solves(None, source)
        out = np.empty((self.mesh.n_elements, 12 * self.Nfp), dtype=complex)
        for gi, idx in enumerate(self.groups):
            out[idx] = u[idx] @ self.operators[gi].trace.T
        return out.ravel()

    def face_quadrature(self):
        """Physical quadrature points, weights and Lagrange values on every face.

        Returns (points (nK, 4, nq, 3), weights (nK, 4, nq), basis (4, nq, Nfp)).
        """
        q2, w2 = tri_quadrature(2 * self.p + 2)
        nq = len(w2)
        pts = np.empty((self.mesh.n_elements, 4, nq, 3))
        basis = np.empty((4, nq, self.Nfp))
        for f in range(4):
            pts[:, f] = self.mesh.physical_points(triangle_to_face(f, q2))
            basis[f] = np.linalg.solve(self.ref.face_V2[f].T, tri_basis(self.p, q2).T).T
        weights = (self.mesh.face_area[:, :, None] / 2.0) * w2[None, None, :]
        return pts, weights, basis

    def project_face_data(self, fn, faces=None) -> np.ndarray:
        """L2 projection of ``fn(points, normals)`` onto the face polynomial space.

        ``faces`` is an optional boolean mask (nK, 4); other slots are zero.
        """
        pts, w, basis = self.face_quadrature()
        nK = self.mesh.n_elements
        mask = np.ones((nK, 4), dtype=bool) if faces is None else faces
        out = np.zeros(self.shape, dtype=complex)
        K, f = np.nonzero(mask)
        if len(K) == 0:
            return out.ravel()
        nq = pts.shape[2]
        x = pts[K, f].reshape(-1, 3)
        n = np.repeat(self.mesh.normals[K, f], nq, axis=0)
        vals = np.asarray(fn(x, n), dtype=complex).reshape(len(K), nq, 3)
        moments = np.einsum("sq,sqd,sqi->sdi", w[K, f], vals, basis[f])
        out[K, f] = np.einsum("sij,sdj->sdi", self.face_mass_inv[K, f], moments)
        return out.ravel()

    def build_rhs(self, sources: BoundarySources | None = None, source: VolumeSource | None = None) -> np.ndarray:
        b = self.zeros()
        kind = self.mesh.kind
        if sources is not None:
            if sources.s_E is not None:
                b += self.project_face_data(lambda x, n: -2.0 * cross(n, sources.s_E(x, n)),
                                            kind == int(BoundaryKind.E))
            if sources.s_H is not None:
                b += self.project_face_data(lambda x, n: 2.0 * tangential_project(n, sources.s_H(x, n)),
                                            kind == int(BoundaryKind.H))
            if sources.s_I is not None:
                b += self.project_face_data(lambda x, n: tangential_project(n, sources.s_I(x, n)),
                                            kind == int(BoundaryKind.I))
        if source is not None:
            b += self.apply_exchange(self.source_traces(source))
        return b

    # -- dense probing (tests and small oracles only) -------------------------

    def dense(self, apply: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
        """Dense matrix of ``apply`` (default: A) on the full nodal space."""
        apply = self.apply_A if apply is None else apply
        out = np.empty((self.n_dof, self.n_dof), dtype=complex)
        e = np.zeros(self.n_dof, dtype=complex)
        for j in range(self.n_dof):
            e[j] = 1.0
            out[:, j] = apply(e)
            e[j] = 0.0
        return out


def dense_solve(system: TransmissionSystem, b: np.ndarray) -> np.ndarray:
    """Direct solve of A g = b by dense probing and LU (small meshes only)."""
    return sla.solve(system.dense(), b)
