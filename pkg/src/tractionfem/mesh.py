"""Tetrahedral / hexahedral meshes, generators, geometric moments and text I/O.

Node ordering conventions
-------------------------
tet4 : positive signed volume, ``(x1-x0) . ((x2-x0) x (x3-x0)) > 0``.
hex8 : the usual trilinear brick ordering, bottom face ``0-1-2-3``
       counter-clockwise seen from above, top face ``4-5-6-7``.

Local faces are listed with outward-pointing orientation
(``(b - a) x (c - a)`` points out of the element).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quadrature

TET4 = "tet4"
HEX8 = "hex8"
NODES_PER_ELEMENT = {TET4: 4, HEX8: 8}

TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
HEX_FACES = np.array(
    [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [0, 4, 7, 3],
    ]
)
LOCAL_FACES = {TET4: TET_FACES, HEX8: HEX_FACES}

# hex8 reference vertex coordinates in [-1, 1]^3
HEX_REF = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

MATRIX_TAG = 1
INCLUSION_TAG = 2


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class MeshFormatError(MeshError):
    """Malformed mesh file."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class BoundaryFaces:
    element: np.ndarray  # (F,) element index
    local_face: np.ndarray  # (F,) local face id
    nodes: np.ndarray  # (F, 3) or (F, 4), outward orientation

    def __len__(self):
        return len(self.element)


@dataclass(frozen=True)
class GeometryMoments:
    volume: float
    centroid: np.ndarray
    second_moment: np.ndarray  # J = int (x - xc) (x) (x - xc) dV
    inertia: np.ndarray  # tr(J) I - J

    def __post_init__(self):
        if not self.volume > 0:
            raise MeshError(f"non-positive volume {self.volume}")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Single-kind finite element mesh.

    Parameters
    ----------
    nodes : (N, 3) float array
    kind : ``"tet4"`` or ``"hex8"``
    elements : (E, 4) or (E, 8) int array
    tags : (E,) int array of material tags (default all ``MATRIX_TAG``)
    """

    nodes: np.ndarray
    kind: str
    elements: np.ndarray
    tags: np.ndarray = None
    boundary: BoundaryFaces = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self.kind not in NODES_PER_ELEMENT:
            raise MeshError(f"unknown element kind {self.kind!r}")
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError("nodes must be an (N, 3) array")
        nen = NODES_PER_ELEMENT[self.kind]
        if elements.ndim != 2 or elements.shape[1] != nen:
            raise MeshError(f"{self.kind} elements need {nen} nodes each")
        tags = (
            np.full(len(elements), MATRIX_TAG, dtype=np.int64)
            if self.tags is None
            else np.ascontiguousarray(self.tags, dtype=np.int64)
        )
        if tags.shape != (len(elements),):
            raise MeshError("one material tag per element required")
        nodes.flags.writeable = False
        elements.flags.writeable = False
        tags.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "tags", tags)
        self._validate()
        object.__setattr__(self, "boundary", _boundary_faces(self.kind, elements))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        return 3 * len(self.nodes)

    def dofs(self, node) -> np.ndarray:
        """Global DOF indices ``3*node + (0, 1, 2)``."""
        return 3 * np.asarray(node)[..., None] + np.arange(3)

    def element_coords(self) -> np.ndarray:
        return self.nodes[self.elements]

    def element_volumes(self) -> np.ndarray:
        _, _, detw = quadrature.element_geometry(self.kind, self.element_coords())
        return detw.sum(axis=1)

    def element_centroids(self) -> np.ndarray:
        return self.element_coords().mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        if self.kind == TET4:
            pairs = list(itertools.combinations(range(4), 2))
        else:
            pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
                     (0, 4), (1, 5), (2, 6), (3, 7)]
        x = self.element_coords()
        a, b = np.array(pairs).T
        return np.linalg.norm(x[:, a] - x[:, b], axis=-1)

    @property
    def h(self) -> float:
        """Mesh size: maximum element edge length."""
        return float(self.edge_lengths().max())

    def find_node(self, point, tol=1e-9) -> int:
        """Nearest node to ``point``; lowest index wins ties.

        Raises ``MeshError`` when the nearest node is farther than ``tol``
        times the bounding-box diagonal.
        """
        d = np.linalg.norm(self.nodes - np.asarray(point, dtype=float), axis=1)
        idx = int(np.argmin(d))
        scale = np.linalg.norm(self.nodes.max(axis=0) - self.nodes.min(axis=0))
        if d[idx] > tol * scale:
            raise MeshError(f"no node at {tuple(point)} (nearest at distance {d[idx]:.3e})")
        return idx

    def _validate(self):
        n = len(self.nodes)
        e = self.elements
        if e.size and (e.min() < 0 or e.max() >= n):
            bad = int(np.nonzero((e < 0) | (e >= n))[0][0])
            raise MeshError(f"element {bad} references a node out of range")
        srt = np.sort(e, axis=1)
        dup = np.nonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))[0]
        if len(dup):
            raise MeshError(f"element {int(dup[0])} has repeated nodes")
        x = self.nodes[e]
        if self.kind == TET4:
            vol = signed_tet_volumes(x)
            bad = np.nonzero(vol <= 0)[0]
            if len(bad):
                raise MeshError(f"element {int(bad[0])} has non-positive volume {vol[bad[0]]:.3e}")
        else:
            _, det, _ = quadrature.element_geometry(self.kind, x, check=False)
            bad = np.nonzero((det <= 0).any(axis=1))[0]
            if len(bad):
                raise MeshError(f"element {int(bad[0])} has a non-positive Jacobian")


def signed_tet_volumes(x: np.ndarray) -> np.ndarray:
    """Signed volumes of tetrahedra given (E, 4, 3) vertex coordinates."""
    d = x[:, 1:] - x[:, :1]
    return np.linalg.det(d) / 6.0


def _boundary_faces(kind, elements) -> BoundaryFaces:
    faces = LOCAL_FACES[kind]
    nf = len(faces)
    all_faces = elements[:, faces]  # (E, nf, k)
    keys = np.sort(all_faces.reshape(-1, faces.shape[1]), axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    once = np.nonzero(counts[inverse] == 1)[0]
    return BoundaryFaces(
        element=once // nf,
        local_face=once % nf,
        nodes=all_faces.reshape(-1, faces.shape[1])[once],
    )


def _check_box_args(lengths, divisions):
    lengths = np.asarray(lengths, dtype=float)
    divisions = np.asarray(divisions)
    if lengths.shape != (3,) or divisions.shape != (3,):
        raise ValueError("lengths and divisions must have three entries")
    if np.any(lengths <= 0):
        raise ValueError(f"box lengths must be positive, got {lengths.tolist()}")
    if np.any(divisions < 1) or not np.all(divisions == np.round(divisions)):
        raise ValueError(f"divisions must be integers >= 1, got {divisions.tolist()}")
    return lengths, divisions.astype(int)


def _grid(origin, lengths, divisions):
    nx, ny, nz = divisions
    axes = [origin[d] + lengths[d] * np.arange(divisions[d] + 1) / divisions[d] for d in range(3)]
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    nodes = np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    corners = np.column_stack(
        [
            nid(i, j, k),
            nid(i + 1, j, k),
            nid(i + 1, j + 1, k),
            nid(i, j + 1, k),
            nid(i, j, k + 1),
            nid(i + 1, j, k + 1),
            nid(i + 1, j + 1, k + 1),
            nid(i, j + 1, k + 1),
        ]
    )
    return nodes, corners


def generate_box_hex(origin, lengths, divisions, tags=None) -> Mesh:
    """Structured hex8 grid of the box ``origin + [0, lengths]``."""
    lengths, divisions = _check_box_args(lengths, divisions)
    nodes, cells = _grid(np.asarray(origin, dtype=float), lengths, divisions)
    return Mesh(nodes, HEX8, cells, tags)


# Kuhn split: every cell shares the main diagonal 0-6; one tet per axis permutation.
_KUHN = []
for _perm in itertools.permutations(range(3)):
    _path = [np.zeros(3, dtype=int)]
    for _axis in _perm:
        _step = _path[-1].copy()
        _step[_axis] = 1
        _path.append(_step)
    _KUHN.append([int(np.nonzero((HEX_REF > 0).astype(int) @ [1, 2, 4] == p @ [1, 2, 4])[0][0])
                  for p in _path])
KUHN_TETS = np.array(_KUHN)


def generate_box_tet(origin, lengths, divisions, tags=None) -> Mesh:
    """Box split into tet4, six per grid cell.

    Every cell uses the same template: the six tetrahedra around the cell
    diagonal from its lowest corner to its highest corner. The template is
    not invariant under reflection about the coordinate mid-planes, so the
    mesh is not either.
    """
    lengths, divisions = _check_box_args(lengths, divisions)
    nodes, cells = _grid(np.asarray(origin, dtype=float), lengths, divisions)
    tets = cells[:, KUHN_TETS].reshape(-1, 4)
    tets = _orient_tets(nodes, tets)
    cell_tags = None if tags is None else np.repeat(np.asarray(tags), len(KUHN_TETS))
    return Mesh(nodes, TET4, tets, cell_tags)


def _orient_tets(nodes, tets):
    tets = tets.copy()
    neg = signed_tet_volumes(nodes[tets]) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


# --------------------------------------------------------------------------- sphere


def _bey_children(t):
    """Bey's 1:8 split. ``t`` holds vertex ids, ``m(i, j)`` edge midpoints."""
    x0, x1, x2, x3 = t
    return [
        (x0, (0, 1), (0, 2), (0, 3)),
        ((0, 1), x1, (1, 2), (1, 3)),
        ((0, 2), (1, 2), x2, (2, 3)),
        ((0, 3), (1, 3), (2, 3), x3),
        ((0, 1), (0, 2), (0, 3), (1, 3)),
        ((0, 1), (0, 2), (1, 2), (1, 3)),
        ((0, 2), (0, 3), (1, 3), (2, 3)),
        ((0, 2), (1, 2), (1, 3), (2, 3)),
    ]


def _cube_ball_base():
    """96 ordered tets filling [-1, 1]^3: 8 cells x 12 cones from each cell centre.

    Face diagonals run through the cell vertex that lies on a cube space
    diagonal, so each tet stays inside one sector ``|x_k| = max |x|`` and the
    whole construction commutes with the cube's symmetry group.
    """
    coords = {}

    def node(p):
        key = tuple(float(v) for v in p)
        if key not in coords:
            coords[key] = len(coords)
        return coords[key]

    def rank(p):
        return int(np.count_nonzero(np.asarray(p)))

    tets = []
    for s in itertools.product((-1.0, 1.0), repeat=3):
        s = np.array(s)
        center = 0.5 * s
        lo = np.minimum(0, s)
        for axis in range(3):
            for side in (0.0, 1.0):
                quad = []
                others = [d for d in range(3) if d != axis]
                for a, b in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = np.zeros(3)
                    p[axis] = lo[axis] + side
                    p[others[0]] = lo[others[0]] + a
                    p[others[1]] = lo[others[1]] + b
                    quad.append(p)
                # diagonal through the vertex with |x| = |y| = |z|
                diag = [i for i, p in enumerate(quad) if len(set(np.abs(p))) == 1][0]
                q = quad[diag:] + quad[:diag]
                for tri in ((q[0], q[1], q[2]), (q[0], q[2], q[3])):
                    verts = sorted(tri, key=rank)
                    tets.append([node(center)] + [node(v) for v in verts])
    pts = np.zeros((len(coords), 3))
    for key, i in coords.items():
        pts[i] = key
    return pts, [tuple(t) for t in tets]


def generate_sphere_tet(radius: float, level: int) -> Mesh:
    """Tetrahedral ball of ``96 * 8**level`` elements centred at the origin.

    The 96-tet partition of the cube ``[-R, R]^3`` is refined ``level`` times
    by Bey's 1:8 split, then every node is pushed to the ball along its ray,
    ``x -> x * |x|_inf / |x|_2``. Cube faces land on the sphere; the origin
    and the six axis points ``(+-R, 0, 0)`` ... are nodes.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if level < 0 or int(level) != level:
        raise ValueError(f"refinement level must be an integer >= 0, got {level}")
    pts, tets = _cube_ball_base()
    pts = list(map(tuple, pts))
    for _ in range(int(level)):
        edge_mid = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in edge_mid:
                pa, pb = pts[a], pts[b]
                pts.append(tuple(0.5 * (u + v) for u, v in zip(pa, pb)))
                edge_mid[key] = len(pts) - 1
            return edge_mid[key]

        refined = []
        for t in tets:
            for child in _bey_children(t):
                refined.append(tuple(v if isinstance(v, (int, np.integer)) else mid(t[v[0]], t[v[1]])
                                     for v in child))
        tets = refined
    cube = np.array(pts)
    inf = np.abs(cube).max(axis=1)
    two = np.linalg.norm(cube, axis=1)
    scale = np.divide(inf, two, out=np.zeros_like(inf), where=two > 0)
    nodes = radius * cube * scale[:, None]
    conn = _orient_tets(nodes, np.array(tets, dtype=np.int64))
    return Mesh(nodes, TET4, conn)


def generate_voxel_rve(side: float, k: int, inclusion_radius: float) -> Mesh:
    """Voxelised cube ``[0, side]^3`` with ``(3k)^3`` hex8 voxels.

    Voxels whose centroid lies within ``inclusion_radius`` of the cube centre
    are tagged ``INCLUSION_TAG``; the rest ``MATRIX_TAG``.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"k must be an integer >= 1, got {k}")
    if not (0 < inclusion_radius < side / 2):
        raise ValueError(f"inclusion radius must lie in (0, side/2), got {inclusion_radius}")
    n = 3 * int(k)
    box = generate_box_hex((0.0, 0.0, 0.0), (side,) * 3, (n, n, n))
    dist = np.linalg.norm(box.element_centroids() - 0.5 * side, axis=1)
    tags = np.where(dist < inclusion_radius, INCLUSION_TAG, MATRIX_TAG)
    return Mesh(box.nodes, HEX8, box.elements, tags)


# --------------------------------------------------------------------------- moments


def compute_geometry_moments(mesh: Mesh) -> GeometryMoments:
    """Volume, centroid, second moment ``J`` about the centroid and ``tr(J) I - J``."""
    _, _, detw = quadrature.element_geometry(mesh.kind, mesh.element_coords())
    xq = quadrature.physical_points(mesh.kind, mesh.element_coords())
    volume = float(detw.sum())
    centroid = np.einsum("eq,eqi->i", detw, xq) / volume
    r = xq - centroid
    J = np.einsum("eq,eqi,eqj->ij", detw, r, r)
    J = 0.5 * (J + J.T)
    inertia = np.trace(J) * np.eye(3) - J
    return GeometryMoments(volume, centroid, J, inertia)


def is_reflection_symmetric(mesh: Mesh, axis: int, center: float | None = None, tol=1e-9) -> bool:
    """Whether reflecting about the plane ``x[axis] = center`` maps the mesh onto itself.

    Compares node sets and element connectivity (as node sets per element).
    """
    if center is None:
        lo, hi = mesh.nodes[:, axis].min(), mesh.nodes[:, axis].max()
        center = 0.5 * (lo + hi)
    scale = np.ptp(mesh.nodes, axis=0).max()
    mirrored = mesh.nodes.copy()
    mirrored[:, axis] = 2 * center - mirrored[:, axis]
    key = np.round(mesh.nodes / (tol * scale)).astype(np.int64)
    lookup = {tuple(k): i for i, k in enumerate(key)}
    image = np.empty(mesh.n_nodes, dtype=np.int64)
    for i, k in enumerate(np.round(mirrored / (tol * scale)).astype(np.int64)):
        j = lookup.get(tuple(k))
        if j is None:
            return False
        image[i] = j
    original = {frozenset(e) for e in mesh.elements.tolist()}
    return all(frozenset(image[e].tolist()) in original for e in mesh.elements)


# --------------------------------------------------------------------------- I/O


def write_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text ``$Nodes`` / ``$Elements`` format (1-based ids)."""
    lines = ["$Nodes", str(mesh.n_nodes)]
    lines += [f"{i + 1} {x:.17g} {y:.17g} {z:.17g}" for i, (x, y, z) in enumerate(mesh.nodes)]
    lines += ["$End", "$Elements", str(mesh.n_elements)]
    for i, (conn, tag) in enumerate(zip(mesh.elements, mesh.tags)):
        lines.append(f"{i + 1} {mesh.kind} {tag} " + " ".join(str(n + 1) for n in conn))
    lines.append("$End")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Read a mesh written by :func:`write_mesh`.

    Raises ``MeshFormatError`` (with line number) on malformed input and
    ``MeshError`` on invalid geometry.
    """
    text = Path(path).read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(text):
            pos += 1
            line = text[pos - 1].strip()
            if line:
                return line, pos
        raise MeshFormatError("unexpected end of file", pos)

    def expect(token):
        line, n = next_line()
        if line != token:
            raise MeshFormatError(f"expected {token!r}, found {line!r}", n)

    def count():
        line, n = next_line()
        try:
            value = int(line)
        except ValueError:
            raise MeshFormatError(f"expected an integer count, found {line!r}", n) from None
        if value < 0:
            raise MeshFormatError("negative count", n)
        return value

    expect("$Nodes")
    nn = count()
    nodes = np.empty((nn, 3))
    for i in range(nn):
        line, n = next_line()
        parts = line.split()
        if len(parts) != 4:
            raise MeshFormatError("node line needs 'id x y z'", n)
        try:
            nid = int(parts[0])
            nodes[i] = [float(v) for v in parts[1:]]
        except ValueError:
            raise MeshFormatError(f"cannot parse node line {line!r}", n) from None
        if nid != i + 1:
            raise MeshFormatError(f"node ids must be consecutive, expected {i + 1}", n)
    expect("$End")
    expect("$Elements")
    ne = count()
    kind = None
    conn, tags = [], []
    for i in range(ne):
        line, n = next_line()
        parts = line.split()
        if len(parts) < 3:
            raise MeshFormatError("element line needs 'id kind tag nodes...'", n)
        if parts[1] not in NODES_PER_ELEMENT:
            raise MeshFormatError(f"unknown element kind {parts[1]!r}", n)
        if kind is None:
            kind = parts[1]
        elif parts[1] != kind:
            raise MeshFormatError("mixed element kinds are not supported", n)
        nen = NODES_PER_ELEMENT[kind]
        if len(parts) != 3 + nen:
            raise MeshFormatError(f"{kind} needs {nen} node ids", n)
        try:
            ids = [int(v) - 1 for v in parts[3:]]
            tag = int(parts[2])
        except ValueError:
            raise MeshFormatError(f"cannot parse element line {line!r}", n) from None
        if min(ids) < 0 or max(ids) >= nn:
            raise MeshFormatError("node index out of range", n)
        conn.append(ids)
        tags.append(tag)
    expect("$End")
    if kind is None:
        raise MeshFormatError("mesh has no elements", pos)
    return Mesh(nodes, kind, np.array(conn, dtype=np.int64), np.array(tags, dtype=np.int64))
