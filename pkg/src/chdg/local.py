"""Element-local CHDG problem: elemental matrices, local solves, outgoing traces.

Local transmission data on one element is stored as an array of shape
``(4, 3, Nfp)``: local face, Cartesian component, face node.  Fields are
``(3, Np)`` arrays of nodal values per component.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .reference import ReferenceElement

LEVI_CIVITA = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_a, _b, _c] = 1.0
    LEVI_CIVITA[_a, _c, _b] = -1.0

TANGENCY_TOL = 1e-10


class TangencyError(ValueError):
    pass


def tangential_project(n, v):
    """Tangential component v - n (n.v); broadcasts over leading axes of ``v``."""
    n = np.asarray(n)
    v = np.asarray(v)
    return v - n * np.sum(n * v, axis=-1, keepdims=True)


def cross(n, v):
    """n x v written with the Levi-Civita symbol."""
    return np.einsum("def,...e,...f->...d", LEVI_CIVITA, np.asarray(n), np.asarray(v))


def projector(n) -> np.ndarray:
    """3x3 matrix of the tangential projection I - n n^T."""
    n = np.asarray(n, dtype=float)
    return np.eye(3) - np.outer(n, n)


def cross_matrix(n) -> np.ndarray:
    """3x3 matrix X with X v = n x v."""
    return np.einsum("dec,e->dc", LEVI_CIVITA, np.asarray(n, dtype=float))


@dataclass(frozen=True)
class ElementMatrices:
    MK: np.ndarray  # (Np, Np)
    SK: np.ndarray  # (3, Np, Np), SK[d][i, j] = (d_xd l_j, l_i)_K
    B: np.ndarray  # (4, Np, Nfp)
    R: np.ndarray  # (4, Nfp, Np)
    MF: np.ndarray  # (4, Nfp, Nfp)


def elemental_matrices(ref: ReferenceElement, jacobian: np.ndarray, face_area: np.ndarray) -> ElementMatrices:
    """Physical mass, stiffness, face and restriction matrices of one affine element."""
    det = np.linalg.det(jacobian)
    if det <= 0:
        raise ValueError(f"element Jacobian determinant must be positive, got {det}")
    jinv = np.linalg.inv(jacobian)  # jinv[k, d] = d r_k / d x_d
    MK = det * ref.Mref
    Dx = np.einsum("kd,kij->dij", jinv, ref.D)
    SK = np.einsum("ij,djk->dik", MK, Dx)
    MF = (np.asarray(face_area)[:, None, None] / 2.0) * ref.face_M2
    B = np.einsum("fji,fjk->fik", ref.R, MF)
    return ElementMatrices(MK, SK, B, np.asarray(ref.R), MF)


def _levi_block(SK):
    """Block (d, c) = sum_e eps_{dec} SK[e]^T."""
    return np.einsum("dec,eji->dicj", LEVI_CIVITA, SK)


@dataclass(frozen=True, eq=False)
class ElementOperator:
    """Factorized 6Np x 6Np local system of one element shape.

    Unknown ordering: e_1, e_2, e_3, h_1, h_2, h_3 (each Np nodal values).
    ``scatter`` maps incoming local transmission data (flattened ``(4, 3, Nfp)``)
    to the outgoing traces of the source-free local solution.
    """

    kappa: float
    matrices: ElementMatrices
    normals: np.ndarray  # (4, 3)
    matrix: np.ndarray
    lu: tuple
    injection: np.ndarray  # (6Np, 12Nfp)
    trace: np.ndarray  # (12Nfp, 6Np)
    scatter: np.ndarray  # (12Nfp, 12Nfp)

    @property
    def Np(self) -> int:
        return self.matrices.MK.shape[0]

    @property
    def Nfp(self) -> int:
        return self.matrices.MF.shape[1]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self.lu, rhs)

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self.lu, rhs, trans=2)


def assemble_element(kappa: float, matrices: ElementMatrices, normals: np.ndarray) -> ElementOperator:
    if kappa <= 0:
        raise ValueError(f"wavenumber must be positive, got {kappa}")
    mk, sk, B, R = matrices.MK, matrices.SK, matrices.B, matrices.R
    Np, Nfp = mk.shape[0], R.shape[1]
    n3 = 3 * Np

    A = np.zeros((6 * Np, 6 * Np), dtype=complex)
    A[:n3, :n3] += 1j * kappa * np.kron(np.eye(3), mk)
    A[n3:, n3:] += 1j * kappa * np.kron(np.eye(3), mk)
    curl = _levi_block(sk).reshape(n3, n3)
    A[:n3, n3:] += curl
    A[n3:, :n3] -= curl

    inj = np.zeros((6 * Np, 4 * 3 * Nfp))
    tr = np.zeros((4 * 3 * Nfp, 6 * Np))
    for f in range(4):
        P, X = projector(normals[f]), cross_matrix(normals[f])
        BR = B[f] @ R[f]
        flux = np.block([[P, -X], [X, P]])
        A += 0.5 * np.kron(flux, BR)
        cols = slice(3 * Nfp * f, 3 * Nfp * (f + 1))
        inj[:n3, cols] = 0.5 * np.kron(P, B[f])
        inj[n3:, cols] = -0.5 * np.kron(X, B[f])
        tr[cols, :n3] = np.kron(P, R[f])
        tr[cols, n3:] = -np.kron(X, R[f])

    lu = sla.lu_factor(A, check_finite=True)
    if np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise RuntimeError("singular local system; assembly is inconsistent")
    scatter = tr @ sla.lu_solve(lu, inj.astype(complex))
    for arr in (A, inj, tr, scatter):
        arr.setflags(write=False)
    return ElementOperator(kappa, matrices, np.asarray(normals), A, lu, inj, tr, scatter)


@dataclass
class FieldState:
    """Nodal e and h on one element, each of shape (3, Np)."""

    e: np.ndarray
    h: np.ndarray

    @classmethod
    def from_vector(cls, u: np.ndarray) -> "FieldState":
        n3 = u.shape[0] // 2
        return cls(u[:n3].reshape(3, -1), u[n3:].reshape(3, -1))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.e.ravel(), self.h.ravel()])


def check_tangential(normals: np.ndarray, g: np.ndarray, tol: float = TANGENCY_TOL) -> None:
    """Raise TangencyError if face data (4, 3, Nfp) has a normal component."""
    g = np.asarray(g)
    scale = max(1.0, float(np.max(np.abs(g), initial=0.0)))
    defect = np.abs(np.einsum("fd,fdi->fi", normals, g))
    if defect.size and defect.max() > tol * scale:
        raise TangencyError(f"incoming data not tangential: |n.g| = {defect.max():.3e}")


def local_rhs(op: ElementOperator, g_in: np.ndarray | None, source: np.ndarray | None = None) -> np.ndarray:
    Np = op.Np
    rhs = np.zeros(6 * Np, dtype=complex)
    if g_in is not None:
        rhs += op.injection @ np.asarray(g_in).reshape(-1)
    if source is not None:
        rhs[: 3 * Np] += (op.matrices.MK @ np.asarray(source).reshape(3, Np).T).T.ravel()
    return rhs


def local_solve(op: ElementOperator, g_in: np.ndarray, source: np.ndarray | None = None,
                check: bool = True) -> FieldState:
    """Solve the local problem for incoming data ``g_in`` (4, 3, Nfp).

    ``source`` is an optional impressed current (3, Np) entering the electric
    equation as ``MK J_d`` (strong form i kappa e - curl h = J).
    """
    g_in = np.asarray(g_in)
    if check:
        check_tangential(op.normals, g_in)
    return FieldState.from_vector(op.solve(local_rhs(op, g_in, source)))


def outgoing_trace(op: ElementOperator, state: FieldState, face: int) -> np.ndarray:
    """pi_t(e) - n x h at the nodes of local ``face``, shape (3, Nfp)."""
    R = op.matrices.R[face]
    n = op.normals[face]
    e = (R @ state.e.T)  # (Nfp, 3)
    h = (R @ state.h.T)
    return (tangential_project(n, e) - cross(n, h)).T


def outgoing_traces(op: ElementOperator, state: FieldState) -> np.ndarray:
    return (op.trace @ state.vector()).reshape(4, 3, -1)


def face_norm2(op: ElementOperator, g: np.ndarray) -> float:
    """sum_F ||g_F||^2_F for local face data (4, 3, Nfp)."""
    g = np.asarray(g)
    return float(np.real(np.einsum("fdi,fij,fdj->", g.conj(), op.matrices.MF, g)))


def energy_balance(op: ElementOperator, g_in: np.ndarray):
    """Terms of the local energy identity for incoming data ``g_in``.

    Returns (outgoing, defect, incoming) where outgoing + defect = incoming
    holds for the exact local solution.
    """
    state = local_solve(op, g_in)
    g_out = outgoing_traces(op, state)
    # pi_t(e) + n x h = 2 pi_t(e) - g_out
    plus = np.stack([
        op.matrices.R[f] @ state.e.T - np.outer(op.matrices.R[f] @ state.e.T @ op.normals[f], op.normals[f])
        for f in range(4)
    ]).transpose(0, 2, 1)
    plus = 2.0 * plus - g_out
    return face_norm2(op, g_out), face_norm2(op, np.asarray(g_in) - plus), face_norm2(op, g_in)
