import itertools
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chdg.reference import (FACE_VERTICES, TET_VERTICES, TRI_VERTICES, face_to_triangle, node_counts,
                            orthonormal_basis, reference_element, tet_barycentric, tet_quadrature,
                            tri_basis, tri_quadrature, triangle_to_face, triangle_warp_blend_nodes,
                            warp_blend_nodes)


def simplex_monomial_integral(exps, measure):
    # int lam_0^a0 ... lam_d^ad = measure * d! prod(a_i!) / (d + sum a)!
    d = len(exps) - 1
    num = factorial(d) * np.prod([factorial(a) for a in exps])
    return measure * num / factorial(d + sum(exps))


@pytest.mark.parametrize("p, expected", [(4, (35, 15)), (0, (1, 1)), (3, (20, 10)), (1, (4, 3))])
def test_node_counts(p, expected):
    assert node_counts(p) == expected


@pytest.mark.parametrize("order", [0, 2, 5, 8])
def test_tet_quadrature_matches_barycentric_monomials(order):
    pts, w = tet_quadrature(order)
    lam = tet_barycentric(pts)
    for exps in itertools.product(range(order + 1), repeat=4):
        if sum(exps) > order:
            continue
        got = np.sum(w * np.prod(lam ** np.array(exps), axis=1))
        assert got == pytest.approx(simplex_monomial_integral(exps, 4.0 / 3.0), rel=1e-12)


@pytest.mark.parametrize("order", [1, 4, 7])
def test_tri_quadrature_matches_barycentric_monomials(order):
    pts, w = tri_quadrature(order)
    T = np.array([TRI_VERTICES[1] - TRI_VERTICES[0], TRI_VERTICES[2] - TRI_VERTICES[0]]).T
    l12 = np.linalg.solve(T, (pts - TRI_VERTICES[0]).T).T
    lam = np.column_stack([1 - l12.sum(axis=1), l12])
    for exps in itertools.product(range(order + 1), repeat=3):
        if sum(exps) <= order:
            got = np.sum(w * np.prod(lam ** np.array(exps), axis=1))
            assert got == pytest.approx(simplex_monomial_integral(exps, 2.0), rel=1e-12)


def test_constant_mode_value():
    phi = orthonormal_basis(0, np.array([[0.1, -0.3, -0.5]]))
    assert phi[0, 0] == pytest.approx(1 / np.sqrt(4.0 / 3.0))
    assert phi[0, 0] == pytest.approx(0.86603, abs=1e-5)


@pytest.mark.parametrize("p", range(6))
def test_tet_basis_orthonormal(p):
    pts, w = tet_quadrature(2 * p)
    phi = orthonormal_basis(p, pts)
    assert np.allclose(phi.T @ (w[:, None] * phi), np.eye(phi.shape[1]), atol=1e-10)


@pytest.mark.parametrize("p", range(6))
def test_tri_basis_orthonormal(p):
    pts, w = tri_quadrature(2 * p)
    phi = orthonormal_basis(p, pts)
    assert np.allclose(phi.T @ (w[:, None] * phi), np.eye(phi.shape[1]), atol=1e-10)


def test_triangle_p1_vandermonde_invertible():
    V = tri_basis(1, TRI_VERTICES)
    assert V.shape == (3, 3)
    assert np.linalg.cond(V) < 10


def test_p1_nodes_are_vertices():
    nodes = warp_blend_nodes(1)
    assert len(nodes) == 4
    assert {tuple(v) for v in np.round(nodes, 12)} == {tuple(v) for v in TET_VERTICES}


def test_p2_nodes_are_vertices_and_midpoints():
    expected = [tuple(v) for v in TET_VERTICES]
    expected += [tuple(0.5 * (TET_VERTICES[i] + TET_VERTICES[j])) for i, j in itertools.combinations(range(4), 2)]
    got = warp_blend_nodes(2)
    assert sorted(map(tuple, np.round(got, 12))) == sorted(map(tuple, np.round(expected, 12)))


def test_p4_nodes_inside():
    lam = tet_barycentric(warp_blend_nodes(4))
    assert len(lam) == 35
    assert np.all(lam >= -1e-14) and np.all(lam <= 1 + 1e-14)


@pytest.mark.parametrize("p", [0, 11, -1])
def test_unsupported_degree(p):
    with pytest.raises(ValueError):
        warp_blend_nodes(p)


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 8), perm=st.permutations(range(4)))
def test_nodes_symmetric_under_vertex_permutations(p, perm):
    nodes = warp_blend_nodes(p)
    lam = tet_barycentric(nodes)
    mapped = lam[:, list(perm)] @ TET_VERTICES
    d = np.linalg.norm(nodes[:, None] - mapped[None], axis=2)
    assert d.min(axis=1).max() < 1e-12


@pytest.mark.parametrize("p", [1, 3, 5, 7])
def test_face_nodes_match_triangle_nodes(p):
    ref = reference_element(p)
    tri = triangle_warp_blend_nodes(p) @ TRI_VERTICES
    for f in range(4):
        on_face = ref.face_points[f]
        assert np.allclose(ref.nodes[ref.face_nodes[f]], on_face)
        lam = tet_barycentric(on_face)
        assert np.allclose(lam[:, f], 0.0, atol=1e-14)
        back = face_to_triangle(f, on_face)
        d = np.linalg.norm(back[:, None] - tri[None], axis=2)
        assert d.min(axis=1).max() < 1e-10
        assert np.allclose(triangle_to_face(f, back), on_face)


@pytest.mark.parametrize("p", range(5))
def test_mass_matrix_identity(p):
    ref = reference_element(p)
    M = np.linalg.inv(ref.V3 @ ref.V3.T)
    assert np.linalg.norm(ref.Mref - M) <= 1e-10 * np.linalg.norm(ref.Mref)
    assert np.allclose(ref.Mref, ref.Mref.T)
    assert np.all(np.linalg.eigvalsh(ref.Mref) > 0)
    assert np.sum(ref.Mref) == pytest.approx(4.0 / 3.0)


@pytest.mark.parametrize("p", range(1, 6))
def test_differentiation_of_coordinates(p):
    ref = reference_element(p)
    ones = np.ones(ref.Np)
    for k in range(3):
        assert np.abs(ref.D[k] @ ones).max() <= 1e-10
        for j in range(3):
            assert np.allclose(ref.D[k] @ ref.nodes[:, j], float(k == j) * ones, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(p=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_differentiation_exact_for_polynomials(p, seed):
    rng = np.random.default_rng(seed)
    ref = reference_element(p)
    exps = [e for e in itertools.product(range(p + 1), repeat=3) if sum(e) <= p]
    coef = rng.standard_normal(len(exps))
    x = ref.nodes

    def poly(pts):
        return sum(c * np.prod(pts ** np.array(e), axis=1) for c, e in zip(coef, exps))

    def dpoly(pts, k):
        out = np.zeros(len(pts))
        for c, e in zip(coef, exps):
            if e[k] == 0:
                continue
            e2 = list(e)
            e2[k] -= 1
            out += c * e[k] * np.prod(pts ** np.array(e2), axis=1)
        return out

    u = poly(x)
    for k in range(3):
        exact = dpoly(x, k)
        assert np.allclose(ref.D[k] @ u, exact, atol=1e-9 * max(1.0, np.abs(exact).max()))


@pytest.mark.parametrize("p", range(5))
def test_restriction_is_selection(p):
    ref = reference_element(p)
    for f in range(4):
        R = ref.R[f]
        assert set(np.unique(R)) <= {0.0, 1.0}
        assert np.all(R.sum(axis=1) == 1)


@pytest.mark.parametrize("p", range(5))
def test_face_mass_against_quadrature(p):
    ref = reference_element(p)
    q, w = tri_quadrature(2 * p)
    for f in range(4):
        # nodal Lagrange basis on the face through the face Vandermonde
        L = np.linalg.solve(ref.face_V2[f].T, tri_basis(p, q).T).T
        assert np.allclose(L.T @ (w[:, None] * L), ref.face_M2[f], atol=1e-12)


def test_face_vertex_convention():
    for f, fv in enumerate(FACE_VERTICES):
        assert f not in fv
