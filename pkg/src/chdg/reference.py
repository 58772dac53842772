"""Degree-p nodal machinery on the bi-unit reference tetrahedron and triangle.

Reference tetrahedron vertices: (-1,-1,-1), (1,-1,-1), (-1,1,-1), (-1,-1,1).
Local face ``f`` is the face opposite vertex ``f``.
Reference triangle vertices: (-1,-1), (1,-1), (-1,1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, gammaln, roots_jacobi

TET_VERTICES = np.array(
    [[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
)
TRI_VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
TET_VOLUME = 4.0 / 3.0
TRI_AREA = 2.0

# vertices of local face f (the face opposite vertex f), increasing order
FACE_VERTICES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

MAX_DEGREE = 10

# optimized warp-and-blend blending parameters, indexed by degree
_ALPHA_TET = [0.0, 0.0, 0.0, 0.0, 0.1002, 1.1332, 1.5608, 1.3413, 1.2577, 1.1603, 1.10153]


def node_counts(p: int) -> tuple[int, int]:
    """Return (Np, Nfp) for degree ``p``."""
    if p < 0:
        raise ValueError(f"degree must be non-negative, got {p}")
    return (p + 1) * (p + 2) * (p + 3) // 6, (p + 1) * (p + 2) // 2


# ---------------------------------------------------------------------------
# Jacobi polynomials and orthonormal simplex bases


def jacobi_normalized(x, alpha, beta, n):
    """Jacobi polynomial P_n^(alpha,beta) normalized to unit L2 weight norm on [-1,1]."""
    x = np.asarray(x, dtype=float)
    if n < 0:
        return np.zeros_like(x)
    log_gamma = (
        (alpha + beta + 1) * np.log(2.0)
        - np.log(2 * n + alpha + beta + 1)
        + gammaln(n + alpha + 1)
        + gammaln(n + beta + 1)
        - gammaln(n + alpha + beta + 1)
        - gammaln(n + 1)
    )
    return eval_jacobi(n, alpha, beta, x) / np.exp(0.5 * log_gamma)


def grad_jacobi_normalized(x, alpha, beta, n):
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + alpha + beta + 1)) * jacobi_normalized(x, alpha + 1, beta + 1, n - 1)


def jacobi_gauss_lobatto(n: int) -> np.ndarray:
    """Legendre-Gauss-Lobatto points on [-1, 1], ascending."""
    if n == 1:
        return np.array([-1.0, 1.0])
    inner, _ = roots_jacobi(n - 1, 1.0, 1.0)
    return np.concatenate(([-1.0], np.sort(inner), [1.0]))


def rst_to_abc(r, s, t):
    """Collapse tetrahedron coordinates to the unit cube [-1,1]^3."""
    r, s, t = (np.asarray(v, dtype=float) for v in (r, s, t))
    a = np.full_like(r, -1.0)
    b = np.full_like(r, -1.0)
    den = -s - t
    ok = np.abs(den) > 1e-14
    a[ok] = 2.0 * (1.0 + r[ok]) / den[ok] - 1.0
    ok = np.abs(1.0 - t) > 1e-14
    b[ok] = 2.0 * (1.0 + s[ok]) / (1.0 - t[ok]) - 1.0
    return a, b, t.copy()


def rs_to_ab(r, s):
    r, s = np.asarray(r, dtype=float), np.asarray(s, dtype=float)
    a = np.full_like(r, -1.0)
    ok = np.abs(1.0 - s) > 1e-14
    a[ok] = 2.0 * (1.0 + r[ok]) / (1.0 - s[ok]) - 1.0
    return a, s.copy()


def _tet_modes(p):
    return [(i, j, k) for i in range(p + 1) for j in range(p + 1 - i) for k in range(p + 1 - i - j)]


def _tri_modes(p):
    return [(i, j) for i in range(p + 1) for j in range(p + 1 - i)]


def tet_basis(p: int, points: np.ndarray) -> np.ndarray:
    """Orthonormal modal basis of degree ``p`` on the reference tetrahedron.

    Returns the (npoints, Np) matrix whose column j is mode j evaluated at ``points``.
    """
    points = np.atleast_2d(points)
    a, b, c = rst_to_abc(points[:, 0], points[:, 1], points[:, 2])
    out = np.empty((len(a), node_counts(p)[0]))
    for m, (i, j, k) in enumerate(_tet_modes(p)):
        out[:, m] = (
            2.0 * np.sqrt(2.0)
            * jacobi_normalized(a, 0, 0, i)
            * jacobi_normalized(b, 2 * i + 1, 0, j) * (1 - b) ** i
            * jacobi_normalized(c, 2 * (i + j) + 2, 0, k) * (1 - c) ** (i + j)
        )
    return out


def tet_basis_grad(p: int, points: np.ndarray):
    """Reference-coordinate gradients (dr, ds, dt) of :func:`tet_basis`."""
    points = np.atleast_2d(points)
    a, b, c = rst_to_abc(points[:, 0], points[:, 1], points[:, 2])
    n = node_counts(p)[0]
    vr, vs, vt = np.empty((len(a), n)), np.empty((len(a), n)), np.empty((len(a), n))
    for m, (i, j, k) in enumerate(_tet_modes(p)):
        fa, dfa = jacobi_normalized(a, 0, 0, i), grad_jacobi_normalized(a, 0, 0, i)
        gb, dgb = jacobi_normalized(b, 2 * i + 1, 0, j), grad_jacobi_normalized(b, 2 * i + 1, 0, j)
        hc = jacobi_normalized(c, 2 * (i + j) + 2, 0, k)
        dhc = grad_jacobi_normalized(c, 2 * (i + j) + 2, 0, k)
        hb, hcc = 0.5 * (1 - b), 0.5 * (1 - c)

        dr = dfa * gb * hc
        if i > 0:
            dr = dr * hb ** (i - 1)
        if i + j > 0:
            dr = dr * hcc ** (i + j - 1)

        ds = 0.5 * (1 + a) * dr
        tmp = dgb * hb**i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * hb ** (i - 1)
        if i + j > 0:
            tmp = tmp * hcc ** (i + j - 1)
        tmp = fa * tmp * hc
        ds = ds + tmp

        dt = 0.5 * (1 + a) * dr + 0.5 * (1 + b) * tmp
        tmp = dhc * hcc ** (i + j)
        if i + j > 0:
            tmp = tmp - 0.5 * (i + j) * hc * hcc ** (i + j - 1)
        tmp = fa * gb * tmp * hb**i
        dt = dt + tmp

        scale = 2.0 ** (2 * i + j + 1.5)
        vr[:, m], vs[:, m], vt[:, m] = dr * scale, ds * scale, dt * scale
    return vr, vs, vt


def tri_basis(p: int, points: np.ndarray) -> np.ndarray:
    """Orthonormal modal basis of degree ``p`` on the reference triangle."""
    points = np.atleast_2d(points)
    a, b = rs_to_ab(points[:, 0], points[:, 1])
    out = np.empty((len(a), node_counts(p)[1]))
    for m, (i, j) in enumerate(_tri_modes(p)):
        out[:, m] = (
            np.sqrt(2.0)
            * jacobi_normalized(a, 0, 0, i)
            * jacobi_normalized(b, 2 * i + 1, 0, j) * (1 - b) ** i
        )
    return out


def orthonormal_basis(p: int, points: np.ndarray) -> np.ndarray:
    """Modal basis values, dispatching on the point dimension (2 = triangle, 3 = tet)."""
    points = np.atleast_2d(points)
    if points.shape[1] == 3:
        return tet_basis(p, points)
    if points.shape[1] == 2:
        return tri_basis(p, points)
    raise ValueError(f"points must be 2D or 3D, got shape {points.shape}")


# ---------------------------------------------------------------------------
# Collapsed-coordinate quadrature


@lru_cache(maxsize=None)
def tet_quadrature(order: int):
    """Conical product rule exact for polynomials of total degree ``order``.

    Returns (points (n, 3), weights (n,)) on the reference tetrahedron.
    """
    q = order // 2 + 1
    xa, wa = roots_jacobi(q, 0.0, 0.0)
    xb, wb = roots_jacobi(q, 1.0, 0.0)
    xc, wc = roots_jacobi(q, 2.0, 0.0)
    A, B, C = np.meshgrid(xa, xb, xc, indexing="ij")
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :] / 8.0
    r = 0.25 * (1 + A) * (1 - B) * (1 - C) - 1
    s = 0.5 * (1 + B) * (1 - C) - 1
    pts = np.stack([r.ravel(), s.ravel(), C.ravel()], axis=1)
    return pts, W.ravel()


@lru_cache(maxsize=None)
def tri_quadrature(order: int):
    """Collapsed Gauss rule on the reference triangle exact to total degree ``order``."""
    q = order // 2 + 1
    xa, wa = roots_jacobi(q, 0.0, 0.0)
    xb, wb = roots_jacobi(q, 1.0, 0.0)
    A, B = np.meshgrid(xa, xb, indexing="ij")
    W = wa[:, None] * wb[None, :] / 2.0
    r = 0.5 * (1 + A) * (1 - B) - 1
    pts = np.stack([r.ravel(), B.ravel()], axis=1)
    return pts, W.ravel()


# ---------------------------------------------------------------------------
# Warp & blend nodes


def _equidistant_warp(p, rout):
    """1D warp from equidistant to LGL points, divided by (1 - r^2)."""
    lgl = jacobi_gauss_lobatto(p)
    req = np.linspace(-1.0, 1.0, p + 1)
    # Lagrange interpolant through equidistant points of (lgl - req)
    warp = np.zeros_like(rout)
    for i in range(p + 1):
        li = np.ones_like(rout)
        for j in range(p + 1):
            if j != i:
                li = li * (rout - req[j]) / (req[i] - req[j])
        warp = warp + li * (lgl[i] - req[i])
    interior = np.abs(rout) < 1.0 - 1e-10
    scaled = np.where(interior, warp / np.where(interior, 1.0 - rout**2, 1.0), 0.0)
    return scaled


def _triangle_shift(p, alpha, L1, L2, L3):
    """Warp-and-blend shift in the equilateral triangle frame."""
    warp1 = 4 * L2 * L3 * _equidistant_warp(p, L3 - L2) * (1 + (alpha * L1) ** 2)
    warp2 = 4 * L1 * L3 * _equidistant_warp(p, L1 - L3) * (1 + (alpha * L2) ** 2)
    warp3 = 4 * L1 * L2 * _equidistant_warp(p, L2 - L1) * (1 + (alpha * L3) ** 2)
    dx = warp1 + np.cos(2 * np.pi / 3) * warp2 + np.cos(4 * np.pi / 3) * warp3
    dy = np.sin(2 * np.pi / 3) * warp2 + np.sin(4 * np.pi / 3) * warp3
    return dx, dy


def _alpha(p):
    if not 1 <= p <= MAX_DEGREE:
        raise ValueError(f"warp-and-blend nodes supported for 1 <= p <= {MAX_DEGREE}, got {p}")
    return _ALPHA_TET[p]


def triangle_warp_blend_nodes(p: int, alpha: float | None = None) -> np.ndarray:
    """Warp-and-blend nodes on the reference triangle, as barycentric coordinates.

    Returns an (Nfp, 3) array of barycentric weights w.r.t. TRI_VERTICES.
    ``alpha`` defaults to the tetrahedral value so the set matches tet face traces.
    """
    if alpha is None:
        alpha = _alpha(p)
    L1, L3 = [], []
    for n in range(p + 1):
        for m in range(p + 1 - n):
            L1.append(n / p)
            L3.append(m / p)
    L1, L3 = np.array(L1), np.array(L3)
    L2 = 1.0 - L1 - L3
    # equilateral triangle with vertices (-1,-1/sqrt3), (1,-1/sqrt3), (0,2/sqrt3)
    x = -L2 + L3
    y = (-L2 - L3 + 2 * L1) / np.sqrt(3.0)
    dx, dy = _triangle_shift(p, alpha, L1, L2, L3)
    x, y = x + dx, y + dy
    eq = np.array([[-1.0, -1 / np.sqrt(3.0)], [1.0, -1 / np.sqrt(3.0)], [0.0, 2 / np.sqrt(3.0)]])
    return _barycentric(eq, np.stack([x, y], axis=1))


def _barycentric(verts, pts):
    d = verts.shape[1]
    T = (verts[1:] - verts[0]).T
    lam = np.linalg.solve(T, (pts - verts[0]).T).T
    return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1).reshape(-1, d + 1)


def warp_blend_nodes(p: int) -> np.ndarray:
    """Warp-and-blend interpolation nodes on the reference tetrahedron, shape (Np, 3)."""
    alpha = _alpha(p)
    tol = 1e-10
    # equidistant lattice, r fastest
    pts = []
    for n in range(p + 1):
        for m in range(p + 1 - n):
            for q in range(p + 1 - n - m):
                pts.append((-1 + 2 * q / p, -1 + 2 * m / p, -1 + 2 * n / p))
    r, s, t = np.array(pts).T
    L1 = (1 + t) / 2
    L2 = (1 + s) / 2
    L3 = -(1 + r + s + t) / 2
    L4 = (1 + r) / 2

    v1 = np.array([-1.0, -1 / np.sqrt(3.0), -1 / np.sqrt(6.0)])
    v2 = np.array([1.0, -1 / np.sqrt(3.0), -1 / np.sqrt(6.0)])
    v3 = np.array([0.0, 2 / np.sqrt(3.0), -1 / np.sqrt(6.0)])
    v4 = np.array([0.0, 0.0, 3 / np.sqrt(6.0)])
    t1 = np.array([v2 - v1, v2 - v1, v3 - v2, v3 - v1])
    t2 = np.array([v3 - 0.5 * (v1 + v2), v4 - 0.5 * (v1 + v2), v4 - 0.5 * (v2 + v3), v4 - 0.5 * (v1 + v3)])
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 /= np.linalg.norm(t2, axis=1, keepdims=True)

    xyz = np.outer(L3, v1) + np.outer(L4, v2) + np.outer(L2, v3) + np.outer(L1, v4)
    shift = np.zeros_like(xyz)
    for La, Lb, Lc, Ld, ta, tb in (
        (L1, L2, L3, L4, t1[0], t2[0]),
        (L2, L1, L3, L4, t1[1], t2[1]),
        (L3, L1, L4, L2, t1[2], t2[2]),
        (L4, L1, L3, L2, t1[3], t2[3]),
    ):
        w1, w2 = _triangle_shift(p, alpha, Lb, Lc, Ld)
        blend = Lb * Lc * Ld
        denom = (Lb + 0.5 * La) * (Lc + 0.5 * La) * (Ld + 0.5 * La)
        ok = denom > tol
        blend = np.where(ok, (1 + (alpha * La) ** 2) * blend / np.where(ok, denom, 1.0), blend)
        shift += np.outer(blend * w1, ta) + np.outer(blend * w2, tb)
        on_face = (La < tol) & (((Lb > tol).astype(int) + (Lc > tol) + (Ld > tol)) < 3)
        shift[on_face] = np.outer(w1[on_face], ta) + np.outer(w2[on_face], tb)
    xyz = xyz + shift

    lam = _barycentric(np.array([v1, v2, v3, v4]), xyz)
    nodes = lam @ TET_VERTICES
    # snap boundary coordinates exactly onto faces
    lam[np.abs(lam) < 1e-12] = 0.0
    nodes = lam @ TET_VERTICES
    return nodes


def tet_barycentric(points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of reference-tet points w.r.t. TET_VERTICES."""
    return _barycentric(TET_VERTICES, np.atleast_2d(points))


def face_to_triangle(f: int, points: np.ndarray) -> np.ndarray:
    """Map reference-tet points on face ``f`` to reference-triangle coordinates."""
    lam = tet_barycentric(points)[:, FACE_VERTICES[f]]
    return lam @ TRI_VERTICES


def triangle_to_face(f: int, points2d: np.ndarray) -> np.ndarray:
    lam = _barycentric(TRI_VERTICES, np.atleast_2d(points2d))
    return lam @ TET_VERTICES[list(FACE_VERTICES[f])]


# ---------------------------------------------------------------------------
# Reference element


@dataclass(frozen=True)
class ReferenceElement:
    p: int
    Np: int
    Nfp: int
    nodes: np.ndarray
    face_nodes: np.ndarray  # (4, Nfp) volume node indices, empty columns for p=0
    face_points: np.ndarray  # (4, Nfp, 3) reference coordinates of face nodes
    V3: np.ndarray
    D: np.ndarray  # (3, Np, Np)
    Mref: np.ndarray
    face_V2: np.ndarray  # (4, Nfp, Nfp)
    face_M2: np.ndarray  # (4, Nfp, Nfp)
    R: np.ndarray = field(repr=False)  # (4, Nfp, Np)

    @property
    def V2(self) -> np.ndarray:
        return self.face_V2[3]

    @property
    def M2ref(self) -> np.ndarray:
        return self.face_M2[3]

    def interpolation_matrix(self, points: np.ndarray) -> np.ndarray:
        """Matrix evaluating the nodal interpolant at reference ``points``."""
        return np.linalg.solve(self.V3.T, tet_basis(self.p, points).T).T

    @property
    def vertex_nodes(self) -> np.ndarray:
        """Indices of the nodes sitting at the 4 reference vertices (p >= 1)."""
        d = np.linalg.norm(self.nodes[:, None, :] - TET_VERTICES[None], axis=2)
        return np.argmin(d, axis=0)


@lru_cache(maxsize=None)
def reference_element(p: int) -> ReferenceElement:
    Np, Nfp = node_counts(p)
    if p == 0:
        nodes = np.array([[-0.5, -0.5, -0.5]])
        face_nodes = np.zeros((4, 0), dtype=int)
        face_points = np.array([[TET_VERTICES[list(FACE_VERTICES[f])].mean(axis=0)] for f in range(4)])
        R = np.ones((4, 1, 1))
    else:
        nodes = warp_blend_nodes(p)
        lam = tet_barycentric(nodes)
        face_nodes = np.array([np.flatnonzero(np.abs(lam[:, f]) < 1e-10) for f in range(4)])
        if face_nodes.shape != (4, Nfp):
            raise RuntimeError("face node extraction failed")
        face_points = nodes[face_nodes]
        R = np.zeros((4, Nfp, Np))
        for f in range(4):
            R[f, np.arange(Nfp), face_nodes[f]] = 1.0

    V3 = tet_basis(p, nodes)
    Vinv = np.linalg.inv(V3)
    D = np.array([g @ Vinv for g in tet_basis_grad(p, nodes)])
    Mref = Vinv.T @ Vinv
    Mref = 0.5 * (Mref + Mref.T)

    face_V2 = np.empty((4, Nfp, Nfp))
    face_M2 = np.empty((4, Nfp, Nfp))
    for f in range(4):
        V2 = tri_basis(p, face_to_triangle(f, face_points[f]))
        V2inv = np.linalg.inv(V2)
        face_V2[f] = V2
        M2 = V2inv.T @ V2inv
        face_M2[f] = 0.5 * (M2 + M2.T)

    for arr in (nodes, face_nodes, face_points, V3, D, Mref, face_V2, face_M2, R):
        arr.setflags(write=False)
    return ReferenceElement(p, Np, Nfp, nodes, face_nodes, face_points, V3, D, Mref, face_V2, face_M2, R)
