from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chdg.local import (FieldState, TangencyError, assemble_element, check_tangential, cross,
                        elemental_matrices, energy_balance, face_norm2, local_rhs, local_solve,
                        outgoing_trace, outgoing_traces, tangential_project)
from chdg.mesh import BoundaryKind, build_connectivity
from chdg.reference import (TET_VERTICES, reference_element, tet_basis_grad, tet_quadrature, tri_basis,
                            tri_quadrature, triangle_to_face)

from conftest import random_tet, single_tet_raw

finite = st.floats(-10, 10, allow_nan=False)


def element(vertices, p, kappa):
    mesh = build_connectivity(single_tet_raw(vertices), {1: BoundaryKind.I})
    ref = reference_element(p)
    mats = elemental_matrices(ref, mesh.jacobian[0], mesh.face_area[0])
    return mesh, ref, assemble_element(kappa, mats, mesh.normals[0])


def random_incoming(rng, normals, Nfp):
    g = rng.standard_normal((4, 3, Nfp)) + 1j * rng.standard_normal((4, 3, Nfp))
    return np.stack([tangential_project(normals[f], g[f].T).T for f in range(4)])


# -- vector helpers -----------------------------------------------------------


def test_tangential_examples():
    n = np.array([0.0, 0.0, 1.0])
    assert np.allclose(tangential_project(n, [1.0, 2.0, 3.0]), [1.0, 2.0, 0.0])
    assert np.allclose(cross(n, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0])


@given(n=arrays(float, 3, elements=finite), v=arrays(float, 3, elements=finite))
def test_cross_of_tangential_part(n, v):
    if np.linalg.norm(n) < 1e-3:
        return
    n = n / np.linalg.norm(n)
    assert np.allclose(cross(n, tangential_project(n, v)), cross(n, v), atol=1e-13)
    assert np.allclose(cross(n, v), np.cross(n, v), atol=1e-13)
    assert np.allclose(tangential_project(n, v), -np.cross(n, np.cross(n, v)), atol=1e-13)


# -- element matrices ---------------------------------------------------------


def quadrature_matrices(ref, mesh):
    """Independent assembly of MK, SK and face matrices by quadrature."""
    p = ref.p
    q, w = tet_quadrature(2 * p)
    Vinv = np.linalg.inv(ref.V3)
    L = ref.interpolation_matrix(q)
    grads = np.array([g @ Vinv for g in tet_basis_grad(p, q)])  # (3, nq, Np) reference
    jinv = np.linalg.inv(mesh.jacobian[0])
    gphys = np.einsum("kd,kqj->dqj", jinv, grads)
    det = mesh.det[0]
    MK = det * L.T @ (w[:, None] * L)
    SK = np.array([det * L.T @ (w[:, None] * gphys[d]) for d in range(3)])
    q2, w2 = tri_quadrature(2 * p)
    faces = []
    for f in range(4):
        Lvol = ref.interpolation_matrix(triangle_to_face(f, q2))
        faces.append(mesh.face_area[0, f] / 2.0 * Lvol.T @ (w2[:, None] * Lvol))
    return MK, SK, np.array(faces)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_element_matrices_match_quadrature(rng, p):
    mesh = build_connectivity(single_tet_raw(random_tet(rng)), {1: BoundaryKind.I})
    ref = reference_element(p)
    m = elemental_matrices(ref, mesh.jacobian[0], mesh.face_area[0])
    MK, SK, BR = quadrature_matrices(ref, mesh)
    assert np.allclose(m.MK, MK, atol=1e-12 * np.abs(MK).max())
    assert np.allclose(m.SK, SK, atol=1e-11 * np.abs(SK).max())
    for f in range(4):
        assert np.allclose(m.B[f] @ m.R[f], BR[f], atol=1e-12 * np.abs(BR[f]).max())
    assert np.all(np.linalg.eigvalsh(m.MK) > 0)


@settings(max_examples=20, deadline=None)
@given(p=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_integration_by_parts(p, seed):
    rng = np.random.default_rng(seed)
    mesh = build_connectivity(single_tet_raw(random_tet(rng)), {1: BoundaryKind.I})
    m = elemental_matrices(reference_element(p), mesh.jacobian[0], mesh.face_area[0])
    for d in range(3):
        boundary = sum(mesh.normals[0, f, d] * m.B[f] @ m.R[f] for f in range(4))
        resid = m.SK[d] + m.SK[d].T - boundary
        assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(m.SK[d])


def test_p0_mass_is_volume(rng):
    v = random_tet(rng)
    mesh = build_connectivity(single_tet_raw(v), {1: BoundaryKind.I})
    m = elemental_matrices(reference_element(0), mesh.jacobian[0], mesh.face_area[0])
    assert m.MK.shape == (1, 1)
    assert m.MK[0, 0] == pytest.approx(abs(np.linalg.det(v[1:] - v[0])) / 6.0)


@pytest.mark.parametrize("p", [1, 3])
def test_stiffness_rows_vanish_on_identity_map(p):
    m = elemental_matrices(reference_element(p), np.eye(3), np.ones(4))
    assert np.abs(m.SK.sum(axis=2)).max() <= 1e-10


def test_nonpositive_jacobian_rejected():
    with pytest.raises(ValueError):
        elemental_matrices(reference_element(1), -np.eye(3), np.ones(4))


# -- local problem ------------------------------------------------------------


def test_p0_system_size():
    _, _, op = element(TET_VERTICES, 0, 1.0)
    assert op.matrix.shape == (6, 6)


def test_bad_kappa():
    _, ref, op = element(TET_VERTICES, 1, 1.0)
    with pytest.raises(ValueError):
        assemble_element(0.0, op.matrices, op.normals)


def test_zero_data_zero_fields():
    _, ref, op = element(TET_VERTICES, 2, 2.1 * np.pi)
    state = local_solve(op, np.zeros((4, 3, ref.Nfp)))
    assert np.all(state.e == 0) and np.all(state.h == 0)


def test_non_tangential_rejected():
    _, ref, op = element(TET_VERTICES, 1, 1.0)
    g = np.zeros((4, 3, ref.Nfp))
    g[3, 2] = 1.0  # face 3 lies in z = -1, so this is purely normal
    with pytest.raises(TangencyError):
        local_solve(op, g)
    check_tangential(op.normals, np.zeros_like(g))


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_local_condition_and_residual(rng, p):
    _, ref, op = element(random_tet(rng), p, 2.1 * np.pi)
    assert np.isfinite(np.linalg.cond(op.matrix))
    g = random_incoming(rng, op.normals, ref.Nfp)
    rhs = local_rhs(op, g)
    u = local_solve(op, g).vector()
    assert np.linalg.norm(op.matrix @ u - rhs) <= 1e-11 * np.linalg.norm(rhs)


def test_factorization_reproduces_direct_solve(rng):
    _, ref, op = element(random_tet(rng), 3, 1.0)
    rhs = rng.standard_normal(6 * ref.Np) + 1j * rng.standard_normal(6 * ref.Np)
    direct = np.linalg.solve(op.matrix, rhs)
    assert np.linalg.norm(op.solve(rhs) - direct) <= 1e-12 * np.linalg.norm(direct)
    adj = np.linalg.solve(op.matrix.conj().T, rhs)
    assert np.linalg.norm(op.solve_adjoint(rhs) - adj) <= 1e-12 * np.linalg.norm(adj)


@pytest.mark.parametrize("p", [0, 1, 2, 3, 4])
@pytest.mark.parametrize("kappa", [1.0, 2.1 * np.pi])
def test_energy_identity(rng, p, kappa):
    for _ in range(5):
        _, ref, op = element(random_tet(rng), p, kappa)
        g = random_incoming(rng, op.normals, ref.Nfp)
        state = local_solve(op, g)
        out = outgoing_traces(op, state)
        # independent evaluation of pi_t(e) + n x h from nodal traces
        plus = np.empty_like(out)
        for f in range(4):
            e = op.matrices.R[f] @ state.e.T
            h = op.matrices.R[f] @ state.h.T
            plus[f] = (tangential_project(op.normals[f], e) + cross(op.normals[f], h)).T
        lhs = face_norm2(op, out) + face_norm2(op, g - plus)
        rhs = face_norm2(op, g)
        assert abs(lhs - rhs) <= 1e-10 * rhs
        assert face_norm2(op, out) < rhs
        assert np.allclose(energy_balance(op, g), (face_norm2(op, out), face_norm2(op, g - plus), rhs))


def test_linearity(rng):
    _, ref, op = element(random_tet(rng), 2, 3.0)
    g1 = random_incoming(rng, op.normals, ref.Nfp)
    g2 = random_incoming(rng, op.normals, ref.Nfp)
    a, b = 0.3 - 1.2j, 2.0 + 0.5j
    lhs = local_solve(op, a * g1 + b * g2).vector()
    rhs = a * local_solve(op, g1).vector() + b * local_solve(op, g2).vector()
    assert np.linalg.norm(lhs - rhs) <= 1e-11 * np.linalg.norm(rhs)


def test_outgoing_traces_tangential(rng):
    _, ref, op = element(random_tet(rng), 3, 2.0)
    out = outgoing_traces(op, local_solve(op, random_incoming(rng, op.normals, ref.Nfp)))
    assert np.abs(np.einsum("fd,fdi->fi", op.normals, out)).max() <= 1e-12 * np.abs(out).max()
    state = local_solve(op, random_incoming(rng, op.normals, ref.Nfp))
    for f in range(4):
        assert np.allclose(outgoing_trace(op, state, f), outgoing_traces(op, state)[f])


def _fake_op(n):
    R = np.ones((4, 1, 1))
    return SimpleNamespace(normals=np.tile(n, (4, 1)), matrices=SimpleNamespace(R=R))


@pytest.mark.parametrize("e, h, expected", [
    ((0, 0, 0), (0, 0, 1), (0, 0, 0)),
    ((1, 0, 0), (0, 0, 0), (1, 0, 0)),
    ((0, 0, 5), (0, 0, 0), (0, 0, 0)),
])
def test_outgoing_trace_examples(e, h, expected):
    op = _fake_op(np.array([0.0, 0.0, 1.0]))
    state = FieldState(np.array(e, dtype=float)[:, None], np.array(h, dtype=float)[:, None])
    assert np.allclose(outgoing_trace(op, state, 0)[:, 0], expected)


@pytest.mark.parametrize("p", [2, 4])
def test_plane_wave_consistency(p):
    # incoming data of an exact Maxwell solution reproduces it up to discretization error
    kappa = 2.0
    d = np.array([1.0, 2.0, 2.0]) / 3.0
    e0 = np.array([2.0, -1.0, 0.0]) / np.sqrt(5.0)
    v = 0.3 * np.array([[0, 0, 0], [1, 0.1, 0], [0.2, 1, 0], [0.1, 0.3, 1.0]])
    mesh, ref, op = element(v, p, kappa)
    e_fn = lambda x: np.exp(1j * kappa * x @ d)[:, None] * e0
    h_fn = lambda x: -np.cross(d, e_fn(x))
    xf = mesh.physical_points(ref.face_points.reshape(-1, 3))[0].reshape(4, ref.Nfp, 3)
    g = np.stack([(tangential_project(op.normals[f], e_fn(xf[f])) + cross(op.normals[f], h_fn(xf[f]))).T
                  for f in range(4)])
    state = local_solve(op, g)
    x = mesh.physical_points(ref.nodes)[0]
    err = np.abs(state.e.T - e_fn(x)).max() + np.abs(state.h.T - h_fn(x)).max()
    assert err < {2: 5e-3, 4: 1e-5}[p]
