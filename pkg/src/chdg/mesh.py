"""Conforming tetrahedral meshes: MSH 4.1 reader, box generator, face connectivity."""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .reference import FACE_VERTICES, ReferenceElement

log = logging.getLogger(__name__)


class BoundaryKind(enum.IntEnum):
    E = 0  # tangential electric field prescribed
    H = 1  # tangential magnetic field prescribed
    I = 2  # impedance  # noqa: E741

    @classmethod
    def parse(cls, text: str) -> "BoundaryKind":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown boundary kind {text!r}; expected E, H or I") from None


class MeshError(ValueError):
    pass


class MshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedFormatError(MeshError):
    pass


@dataclass
class RawMesh:
    vertices: np.ndarray  # (nv, 3)
    tetrahedra: np.ndarray  # (nt, 4)
    boundary_triangles: np.ndarray  # (nb, 3)
    boundary_tags: np.ndarray  # (nb,)
    physical_names: dict[int, str] = field(default_factory=dict)
    tag_kinds: dict[int, BoundaryKind] = field(default_factory=dict)
    skipped_elements: int = 0

    def validate(self) -> None:
        nv = len(self.vertices)
        tets = np.asarray(self.tetrahedra)
        if tets.size and (tets.min() < 0 or tets.max() >= nv):
            raise MeshError("tetrahedron vertex index out of range")
        for k, t in enumerate(tets):
            if len(set(t.tolist())) != 4:
                raise MeshError(f"tetrahedron {k} has repeated vertices")
        faces = {tuple(sorted(t[list(fv)])) for t in tets for fv in FACE_VERTICES}
        for tri in self.boundary_triangles:
            if tuple(sorted(tri)) not in faces:
                raise MeshError(f"boundary triangle {tuple(tri)} is not a face of any tetrahedron")

    def tag_map_from_names(self, by_name: dict[str, BoundaryKind]) -> dict[int, BoundaryKind]:
        """Translate ``{physical name: kind}`` into ``{tag id: kind}``."""
        out = {}
        lookup = {name: tag for tag, name in self.physical_names.items()}
        for name, kind in by_name.items():
            if name in lookup:
                out[lookup[name]] = kind
            elif name.isdigit():
                out[int(name)] = kind
            else:
                raise MeshError(f"unknown physical name {name!r}")
        return out


# ---------------------------------------------------------------------------
# MSH 4.1 ASCII


_GMSH_NODES_PER_TYPE = {
    1: 2, 2: 3, 3: 4, 4: 4, 5: 8, 6: 6, 7: 5, 8: 3, 9: 6, 10: 9, 11: 10, 12: 27,
    13: 18, 14: 14, 15: 1, 16: 8, 17: 20, 18: 15, 19: 13, 29: 20,
}
_TRIANGLE, _TETRAHEDRON = 2, 4


class _Lines:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise MshParseError("unexpected end of file", self.pos)

    def ints(self) -> list[int]:
        line = self.next()
        try:
            return [int(v) for v in line.split()]
        except ValueError:
            raise MshParseError(f"expected integers, got {line!r}", self.pos) from None

    def floats(self) -> list[float]:
        line = self.next()
        try:
            return [float(v) for v in line.split()]
        except ValueError:
            raise MshParseError(f"expected numbers, got {line!r}", self.pos) from None

    def expect(self, tag: str) -> None:
        line = self.next()
        if line != tag:
            raise MshParseError(f"expected {tag}, got {line!r}", self.pos)


def parse_msh(text: str) -> RawMesh:
    """Read an MSH 4.1 ASCII document.

    Only 4-node tetrahedra and 3-node triangles are kept; other element types
    are counted in ``RawMesh.skipped_elements``.  Triangle physical tags are
    resolved through ``$Entities`` when present, otherwise the entity tag is used.
    """
    src = _Lines(text)
    nodes: dict[int, tuple[float, float, float]] = {}
    names: dict[int, str] = {}
    entity_phys: dict[tuple[int, int], list[int]] = {}
    tets, tris, tri_tags = [], [], []
    skipped = 0
    seen_format = False

    while True:
        try:
            header = src.next()
        except MshParseError:
            break
        if not header.startswith("$"):
            raise MshParseError(f"expected a section header, got {header!r}", src.pos)
        section = header[1:]
        if section == "MeshFormat":
            fields = src.next().split()
            if len(fields) < 3:
                raise MshParseError("malformed $MeshFormat", src.pos)
            if fields[0] not in ("4.1", "4.10"):
                raise UnsupportedFormatError(f"MSH version {fields[0]} not supported (need 4.1)")
            if fields[1] != "0":
                raise UnsupportedFormatError("binary MSH files are not supported")
            seen_format = True
            src.expect("$EndMeshFormat")
        elif section == "PhysicalNames":
            (n,) = src.ints()
            for _ in range(n):
                line = src.next()
                parts = line.split(maxsplit=2)
                if len(parts) < 3:
                    raise MshParseError(f"malformed physical name {line!r}", src.pos)
                names[int(parts[1])] = parts[2].strip().strip('"')
            src.expect("$EndPhysicalNames")
        elif section == "Entities":
            counts = src.ints()
            if len(counts) != 4:
                raise MshParseError("malformed $Entities header", src.pos)
            for dim, count in enumerate(counts):
                for _ in range(count):
                    vals = src.floats()
                    tag = int(vals[0])
                    k = 4 if dim == 0 else 7
                    nphys = int(vals[k])
                    entity_phys[(dim, tag)] = [int(v) for v in vals[k + 1:k + 1 + nphys]]
            src.expect("$EndEntities")
        elif section == "Nodes":
            head = src.ints()
            if len(head) != 4:
                raise MshParseError("malformed $Nodes header", src.pos)
            for _ in range(head[0]):
                block = src.ints()
                if len(block) != 4:
                    raise MshParseError("malformed node block header", src.pos)
                _, _, parametric, count = block
                tags = [src.ints()[0] for _ in range(count)]
                for tag in tags:
                    xyz = src.floats()
                    if len(xyz) < 3:
                        raise MshParseError("node coordinates need 3 values", src.pos)
                    nodes[tag] = (xyz[0], xyz[1], xyz[2])
            src.expect("$EndNodes")
        elif section == "Elements":
            head = src.ints()
            if len(head) != 4:
                raise MshParseError("malformed $Elements header", src.pos)
            for _ in range(head[0]):
                block = src.ints()
                if len(block) != 4:
                    raise MshParseError("malformed element block header", src.pos)
                dim, etag, etype, count = block
                for _ in range(count):
                    vals = src.ints()
                    expected = _GMSH_NODES_PER_TYPE.get(etype)
                    if expected is not None and len(vals) != expected + 1:
                        raise MshParseError(f"element type {etype} needs {expected} nodes", src.pos)
                    if etype == _TETRAHEDRON:
                        tets.append(vals[1:5])
                    elif etype == _TRIANGLE:
                        tris.append(vals[1:4])
                        phys = entity_phys.get((dim, etag))
                        tri_tags.append(phys[0] if phys else etag)
                    else:
                        skipped += 1
            src.expect("$EndElements")
        else:
            # skip unknown sections
            end = "$End" + section
            while src.next() != end:
                pass
    if not seen_format:
        raise MshParseError("missing $MeshFormat section")
    if skipped:
        log.warning("skipped %d unsupported elements", skipped)

    order = sorted(nodes)
    index = {tag: i for i, tag in enumerate(order)}
    verts = np.array([nodes[t] for t in order], dtype=float).reshape(-1, 3)
    try:
        tets_arr = np.array([[index[v] for v in t] for t in tets], dtype=np.int64).reshape(-1, 4)
        tris_arr = np.array([[index[v] for v in t] for t in tris], dtype=np.int64).reshape(-1, 3)
    except KeyError as exc:
        raise MeshError(f"element references unknown node {exc.args[0]}") from None
    return RawMesh(verts, tets_arr, tris_arr, np.array(tri_tags, dtype=np.int64), names, {}, skipped)


def write_msh(raw: RawMesh) -> str:
    """Serialize a RawMesh as MSH 4.1 ASCII (one surface entity per physical tag)."""
    out = ["$MeshFormat", "4.1 0 8", "$EndMeshFormat"]
    tags = sorted(set(int(t) for t in raw.boundary_tags))
    names = dict(raw.physical_names)
    if names:
        out.append("$PhysicalNames")
        out.append(str(len(names) + 1))
        for tag in sorted(names):
            out.append(f'2 {tag} "{names[tag]}"')
        out.append('3 1000 "domain"')
        out.append("$EndPhysicalNames")
    out.append("$Entities")
    out.append(f"0 0 {len(tags)} 1")
    for tag in tags:
        out.append(f"{tag} 0 0 0 0 0 0 1 {tag} 0")
    out.append("1 0 0 0 0 0 0 1 1000 0")
    out.append("$EndEntities")

    nv = len(raw.vertices)
    out += ["$Nodes", f"1 {nv} 1 {nv}", f"3 1 0 {nv}"]
    out += [str(i + 1) for i in range(nv)]
    out += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in raw.vertices]
    out.append("$EndNodes")

    blocks = []
    eid = 1
    for tag in tags:
        sel = raw.boundary_triangles[raw.boundary_tags == tag]
        lines = []
        for tri in sel:
            lines.append(" ".join(str(v) for v in [eid, *(tri + 1)]))
            eid += 1
        blocks.append((f"2 {tag} {_TRIANGLE} {len(sel)}", lines))
    lines = []
    for tet in raw.tetrahedra:
        lines.append(" ".join(str(v) for v in [eid, *(tet + 1)]))
        eid += 1
    blocks.append((f"3 1 {_TETRAHEDRON} {len(raw.tetrahedra)}", lines))
    out += ["$Elements", f"{len(blocks)} {eid - 1} 1 {eid - 1}"]
    for head, lines in blocks:
        out.append(head)
        out += lines
    out.append("$EndElements")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Box mesher

BOX_FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


def build_box_mesh(n: int, bounds=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), tags=BoundaryKind.I) -> RawMesh:
    """Uniform Kuhn (6-tet) subdivision of an axis-aligned box.

    ``tags`` is a single BoundaryKind or a mapping from box face name
    (``xmin`` ... ``zmax``) to BoundaryKind.  Physical tag ids are 1..6 in
    ``BOX_FACES`` order.
    """
    if n < 1:
        raise MeshError(f"need at least one subdivision per axis, got {n}")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (3, 2) or np.any(bounds[:, 1] - bounds[:, 0] <= 0):
        raise MeshError(f"degenerate box bounds {bounds.tolist()}")
    if isinstance(tags, BoundaryKind):
        tags = {name: tags for name in BOX_FACES}
    missing = set(BOX_FACES) - set(tags)
    if missing:
        raise MeshError(f"box faces without a boundary kind: {sorted(missing)}")

    ticks = [np.linspace(lo, hi, n + 1) for lo, hi in bounds]
    X, Y, Z = np.meshgrid(*ticks, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    unit = np.eye(3, dtype=int)
    tets = []
    for i, j, k in itertools.product(range(n), repeat=3):
        base = np.array([i, j, k])
        for perm in itertools.permutations(range(3)):
            c1 = base + unit[perm[0]]
            c2 = c1 + unit[perm[1]]
            tets.append([vid(*base), vid(*c1), vid(*c2), vid(*(base + 1))])
    tets = np.array(tets, dtype=np.int64)

    # boundary triangles: faces referenced once and lying on a box face
    count: dict[tuple, list] = {}
    for t in tets:
        for fv in FACE_VERTICES:
            key = tuple(sorted(t[list(fv)]))
            count.setdefault(key, []).append(1)
    tris, tri_tags = [], []
    for key, refs in count.items():
        if len(refs) != 1:
            continue
        pts = verts[list(key)]
        for axis in range(3):
            for side in range(2):
                if np.allclose(pts[:, axis], bounds[axis, side]):
                    tris.append(key)
                    tri_tags.append(2 * axis + side + 1)
    names = {i + 1: name for i, name in enumerate(BOX_FACES)}
    kinds = {i + 1: tags[name] for i, name in enumerate(BOX_FACES)}
    return RawMesh(verts, tets, np.array(tris, dtype=np.int64).reshape(-1, 3),
                   np.array(tri_tags, dtype=np.int64), names, kinds)


def two_tet_raw_mesh() -> RawMesh:
    """Two tetrahedra sharing one face; all boundary triangles carry tag 1."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.9, 0.8, 0.7]])
    tets = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    shared = {1, 2, 3}
    tris = [tuple(t[list(fv)]) for t in tets for fv in FACE_VERTICES if set(t[list(fv)]) != shared]
    return RawMesh(verts, tets, np.array(tris), np.ones(len(tris), dtype=np.int64), {1: "boundary"})


# ---------------------------------------------------------------------------
# Connectivity and geometry

INTERIOR = -1


@dataclass(frozen=True)
class Mesh:
    """Conforming tetrahedral mesh with face connectivity and affine geometry.

    ``neighbor[K, f]`` is the neighbouring element (or -1), ``neighbor_face[K, f]``
    its local face, and ``kind[K, f]`` is ``INTERIOR`` or a BoundaryKind value.
    """

    vertices: np.ndarray
    tetrahedra: np.ndarray
    faces: list  # per unique face: tuple of (K, f) sides
    neighbor: np.ndarray
    neighbor_face: np.ndarray
    kind: np.ndarray
    jacobian: np.ndarray  # (nK, 3, 3), columns = reference-to-physical edge maps
    jacobian_inv_t: np.ndarray
    det: np.ndarray  # (nK,)
    normals: np.ndarray  # (nK, 4, 3)
    face_area: np.ndarray  # (nK, 4)
    _perm_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_elements(self) -> int:
        return len(self.tetrahedra)

    @property
    def volume(self) -> np.ndarray:
        return self.det * (4.0 / 3.0)

    def physical_points(self, ref_points: np.ndarray, elements=None) -> np.ndarray:
        """Map reference points into every element: shape (nK, npts, 3)."""
        idx = slice(None) if elements is None else elements
        v0 = self.vertices[self.tetrahedra[idx, 0]]
        return v0[:, None, :] + np.einsum("kij,pj->kpi", self.jacobian[idx], np.asarray(ref_points) + 1.0)

    def face_diameter(self, K: int, f: int) -> float:
        pts = self.vertices[self.tetrahedra[K, list(FACE_VERTICES[f])]]
        return max(np.linalg.norm(a - b) for a, b in itertools.combinations(pts, 2))

    def node_permutations(self, ref: ReferenceElement) -> np.ndarray:
        """Face node matching across interior faces for degree ``ref.p``.

        ``perm[K, f, i] = j`` means node i of face (K, f) coincides with node j
        of the neighbouring face; boundary slots hold -1.
        """
        if ref.p in self._perm_cache:
            return self._perm_cache[ref.p]
        nK = self.n_elements
        perm = np.full((nK, 4, ref.Nfp), -1, dtype=np.int64)
        coords = self.physical_points(ref.face_points.reshape(-1, 3)).reshape(nK, 4, ref.Nfp, 3)
        for sides in self.faces:
            if len(sides) != 2:
                continue
            (K, f), (L, g) = sides
            tol = 1e-8 * self.face_diameter(K, f)
            d = np.linalg.norm(coords[K, f][:, None, :] - coords[L, g][None, :, :], axis=2)
            j = np.argmin(d, axis=1)
            if np.any(d[np.arange(ref.Nfp), j] > tol) or len(set(j.tolist())) != ref.Nfp:
                raise MeshError(f"face nodes of element {K} face {f} do not match neighbour {L}")
            perm[K, f] = j
            perm[L, g] = np.argsort(j)
        perm.setflags(write=False)
        self._perm_cache[ref.p] = perm
        return perm

    def retag(self, kind: BoundaryKind) -> "Mesh":
        """Copy with every boundary face set to ``kind``."""
        new_kind = np.where(self.kind == INTERIOR, INTERIOR, int(kind))
        return Mesh(self.vertices, self.tetrahedra, self.faces, self.neighbor, self.neighbor_face,
                    new_kind, self.jacobian, self.jacobian_inv_t, self.det, self.normals, self.face_area)


def build_connectivity(raw: RawMesh, tag_map: dict[int, BoundaryKind] | None = None) -> Mesh:
    """Deduplicate faces, classify boundaries, and compute affine geometry."""
    tag_map = dict(raw.tag_kinds if tag_map is None else tag_map)
    verts = np.asarray(raw.vertices, dtype=float)
    tets = np.array(raw.tetrahedra, dtype=np.int64, copy=True)
    nK = len(tets)
    if nK == 0:
        raise MeshError("mesh has no tetrahedra")

    # orientation fix
    J = _jacobians(verts, tets)
    det = np.linalg.det(J)
    flip = det < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    J = _jacobians(verts, tets)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise MeshError(f"degenerate tetrahedra: {np.flatnonzero(det <= 0).tolist()}")

    sides: dict[tuple, list] = {}
    for K, t in enumerate(tets):
        for f, fv in enumerate(FACE_VERTICES):
            sides.setdefault(tuple(sorted(t[list(fv)])), []).append((K, f))

    tri_kind = {}
    for tri, tag in zip(raw.boundary_triangles, raw.boundary_tags):
        tri_kind[tuple(sorted(tri))] = int(tag)

    neighbor = np.full((nK, 4), -1, dtype=np.int64)
    neighbor_face = np.full((nK, 4), -1, dtype=np.int64)
    kind = np.full((nK, 4), INTERIOR, dtype=np.int64)
    faces = []
    for key, refs in sides.items():
        if len(refs) > 2:
            raise MeshError(f"non-manifold face {key} shared by {len(refs)} tetrahedra")
        faces.append(tuple(refs))
        if len(refs) == 2:
            (K, f), (L, g) = refs
            neighbor[K, f], neighbor_face[K, f] = L, g
            neighbor[L, g], neighbor_face[L, g] = K, f
        else:
            (K, f), = refs
            if key not in tri_kind:
                raise MeshError(f"boundary face {key} has no physical tag")
            tag = tri_kind[key]
            if tag not in tag_map:
                raise MeshError(f"physical tag {tag} has no boundary kind")
            kind[K, f] = int(tag_map[tag])

    normals = np.empty((nK, 4, 3))
    area = np.empty((nK, 4))
    for f, fv in enumerate(FACE_VERTICES):
        a, b, c = (verts[tets[:, v]] for v in fv)
        opp = verts[tets[:, f]]
        cr = np.cross(b - a, c - a)
        sgn = np.where(np.einsum("ki,ki->k", cr, opp - a) > 0, -1.0, 1.0)
        nrm = np.linalg.norm(cr, axis=1)
        normals[:, f] = sgn[:, None] * cr / nrm[:, None]
        area[:, f] = 0.5 * nrm

    jinv_t = np.linalg.inv(J).transpose(0, 2, 1)
    for arr in (verts, tets, neighbor, neighbor_face, kind, J, jinv_t, det, normals, area):
        arr.setflags(write=False)
    return Mesh(verts, tets, faces, neighbor, neighbor_face, kind, J, jinv_t, det, normals, area)


def _jacobians(verts, tets):
    v = verts[tets]  # (nK, 4, 3)
    return 0.5 * np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
