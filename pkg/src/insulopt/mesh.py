"""Simplicial meshes with marked boundary facets.

Meshes are 1D (intervals) or 2D (triangulations).  Boundary facets carry an
integer marker identifying the connected component of the domain they bound,
so that disconnected domains such as a pair of disjoint disks can be
represented and integrated over component by component.
"""

from __future__ import annotations

import os
import tempfile
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Mesh",
    "MeshError",
    "MeshFormatError",
    "interval",
    "disk",
    "two_disks",
    "rectangle",
    "generate_mesh",
    "load_mesh",
    "save_mesh",
]


class MeshError(ValueError):
    """Invalid mesh data or generator arguments."""


class MeshFormatError(MeshError):
    """Malformed insulmesh file; ``line`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, line: int = 0):
        super().__init__(f"{message} at line {line}" if line else message)
        self.line = line


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    ``boundary`` holds one row per boundary facet (a node id in 1D, a node
    pair in 2D) and ``markers`` the component marker of each facet.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray
    markers: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise MeshError(f"unsupported dimension {self.dim}")
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.dim)
        object.__setattr__(self, "nodes", _frozen(nodes, float))
        elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, self.dim + 1)
        object.__setattr__(self, "elements", _frozen(elements, np.int64))
        boundary = np.asarray(self.boundary, dtype=np.int64).reshape(-1, self.dim)
        object.__setattr__(self, "boundary", _frozen(boundary, np.int64))
        object.__setattr__(self, "markers", _frozen(np.asarray(self.markers).reshape(-1), np.int64))
        self._validate()

    # ------------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def component_markers(self) -> list[int]:
        return sorted(set(int(k) for k in self.markers))

    @property
    def component_count(self) -> int:
        return len(self.component_markers)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary)

    def element_components(self) -> np.ndarray:
        """Connected-component label (0-based, arbitrary order) of each element."""
        return self._element_labels()[1]

    def node_markers(self) -> np.ndarray:
        """Component marker of every node, inferred through the boundary facets."""
        ncomp, elabel = self._element_labels()
        label_to_marker = self._label_to_marker(elabel)
        out = np.zeros(self.n_nodes, dtype=np.int64)
        for e, lab in enumerate(elabel):
            out[self.elements[e]] = label_to_marker[lab]
        return out

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.elements, other.elements)
            and np.array_equal(self.boundary, other.boundary)
            and np.array_equal(self.markers, other.markers)
        )

    __hash__ = None

    # ------------------------------------------------------------------
    def signed_measures(self) -> np.ndarray:
        """Signed length (1D) or signed area (2D) of every element."""
        x = self.nodes
        e = self.elements
        if self.dim == 1:
            return x[e[:, 1], 0] - x[e[:, 0], 0]
        p0, p1, p2 = x[e[:, 0]], x[e[:, 1]], x[e[:, 2]]
        return 0.5 * (
            (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
            - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
        )

    def _element_labels(self):
        n = self.n_nodes
        t = self.n_elements
        k = self.dim + 1
        rows = np.repeat(np.arange(t), k)
        cols = self.elements.reshape(-1)
        # bipartite element-node incidence -> connectivity of elements
        inc = coo_matrix((np.ones(t * k), (rows, cols)), shape=(t, n)).tocsr()
        adj = inc @ inc.T
        return connected_components(adj, directed=False)

    def _label_to_marker(self, elabel):
        facet_elem = self._facet_elements()
        mapping: dict[int, int] = {}
        for f, e in enumerate(facet_elem):
            lab = int(elabel[e])
            mk = int(self.markers[f])
            if mapping.setdefault(lab, mk) != mk:
                raise MeshError(f"boundary facet {f} marker {mk} disagrees with its component")
        return mapping

    def _facet_elements(self) -> np.ndarray:
        if self.dim == 1:
            owner: dict[int, int] = {}
            for e, (i, j) in enumerate(self.elements):
                owner.setdefault(int(i), e)
                owner.setdefault(int(j), e)
            return np.array([owner[int(f[0])] for f in self.boundary], dtype=np.int64)
        owner2: dict[tuple[int, int], int] = {}
        for e, tri in enumerate(self.elements):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                i, j = int(tri[a]), int(tri[b])
                owner2.setdefault((min(i, j), max(i, j)), e)
        return np.array([owner2[(min(f), max(f))] for f in map(tuple, self.boundary)], dtype=np.int64)

    def _validate(self):
        n = self.n_nodes
        if self.n_elements == 0:
            raise MeshError("mesh has no elements")
        if self.elements.min() < 0 or self.elements.max() >= n:
            raise MeshError("element node index out of range")
        if len(self.boundary) and (self.boundary.min() < 0 or self.boundary.max() >= n):
            raise MeshError("boundary node index out of range")
        if len(self.markers) != len(self.boundary):
            raise MeshError("one marker is required per boundary facet")
        expected = _topological_boundary(self.dim, self.elements)
        listed = [tuple(sorted(map(int, f))) for f in self.boundary]
        counts = Counter(listed)
        dup = [f for f, c in counts.items() if c > 1]
        if dup:
            raise MeshError(f"duplicate boundary facet {dup[0]}")
        for k, f in enumerate(listed):
            if f not in expected:
                raise MeshError(f"non-boundary facet {f} (boundary entry {k})")
        missing = expected - set(listed)
        if missing:
            raise MeshError(f"boundary facet {sorted(missing)[0]} is not listed")
        # markers must agree with the domain components and be distinct across them
        ncomp, elabel = self._element_labels()
        mapping = self._label_to_marker(elabel)
        if len(set(mapping.values())) != len(mapping):
            raise MeshError("distinct domain components share a boundary marker")
        if len(mapping) != ncomp:
            raise MeshError("a domain component has no boundary facets")


def _topological_boundary(dim, elements) -> set:
    if dim == 1:
        c = Counter(int(i) for i in elements.reshape(-1))
        return {(i,) for i, k in c.items() if k == 1}
    c = Counter()
    for tri in elements:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            i, j = int(tri[a]), int(tri[b])
            c[(min(i, j), max(i, j))] += 1
    bad = [e for e, k in c.items() if k > 2]
    if bad:
        raise MeshError(f"non-manifold edge {bad[0]}")
    return {e for e, k in c.items() if k == 1}


def _orient(nodes, elements):
    """Return triangles reordered to counter-clockwise orientation."""
    elements = np.array(elements, dtype=np.int64)
    p0, p1, p2 = nodes[elements[:, 0]], nodes[elements[:, 1]], nodes[elements[:, 2]]
    area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    flip = area < 0
    elements[flip, 1], elements[flip, 2] = elements[flip, 2].copy(), elements[flip, 1].copy()
    return elements


# ----------------------------------------------------------------------
# generators


def interval(a: float, b: float, n: int) -> Mesh:
    """Uniform mesh of ``[a, b]`` with ``n`` elements; both endpoints marker 1."""
    if not (b > a) or int(n) < 1:
        raise MeshError(f"invalid interval spec ({a}, {b}, {n})")
    n = int(n)
    x = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(1, x[:, None], elements, [[0], [n]], [1, 1])


def _disk_arrays(radius: float, rings: int, sectors: int = 8):
    nodes = [(0.0, 0.0)]
    ring_ids = [np.array([0])]
    for k in range(1, rings + 1):
        cnt = sectors * k
        t = 2.0 * np.pi * np.arange(cnt) / cnt
        r = radius * k / rings
        start = len(nodes)
        nodes.extend(zip(r * np.cos(t), r * np.sin(t)))
        ring_ids.append(np.arange(start, start + cnt))
    nodes = np.array(nodes)
    # boundary ring exactly on the circle
    outer = ring_ids[-1]
    t = 2.0 * np.pi * np.arange(len(outer)) / len(outer)
    nodes[outer] = radius * np.column_stack([np.cos(t), np.sin(t)])
    tris = []
    for k in range(1, rings + 1):
        inner, out = ring_ids[k - 1], ring_ids[k]
        a, b = len(inner), len(out)
        i = j = 0
        # zipper between consecutive rings, comparing angles in exact integers
        while i < a or j < b:
            if j < b and (i == a or (j + 1) * a <= (i + 1) * b):
                tris.append((inner[i % a], out[j % b], out[(j + 1) % b]))
                j += 1
            else:
                tris.append((inner[i % a], out[j % b], inner[(i + 1) % a]))
                i += 1
        if a == 1:
            # ring around the center: the zipper emitted one spurious degenerate step
            tris = [tr for tr in tris if len(set(tr)) == 3]
    tris = _orient(nodes, np.array(tris))
    b = len(outer)
    facets = np.column_stack([outer, np.roll(outer, -1)])
    assert len(facets) == b
    return nodes, tris, facets


def disk(radius: float = 1.0, refinement: int = 3, center=(0.0, 0.0)) -> Mesh:
    """Structured disk mesh with ``8 * 2**refinement`` boundary nodes.

    Ring ``k`` of ``2**refinement`` rings carries ``8k`` nodes, which keeps the
    triangles close to isotropic and gives the mesh an exact 8-fold rotational
    symmetry about the center.
    """
    if not radius > 0 or int(refinement) < 0:
        raise MeshError(f"invalid disk spec (R={radius}, refinement={refinement})")
    nodes, tris, facets = _disk_arrays(float(radius), 2 ** int(refinement))
    nodes = nodes + np.asarray(center, dtype=float)
    return Mesh(2, nodes, tris, facets, np.ones(len(facets), dtype=np.int64))


def two_disks(r1: float, r2: float, separation: float, refinement: int = 3) -> Mesh:
    """Two disjoint disks; ``separation`` is the center-to-center distance.

    The first disk (center at the origin) gets marker 1, the second marker 2.
    """
    if not (r1 > 0 and r2 > 0) or int(refinement) < 0:
        raise MeshError(f"invalid two_disks spec ({r1}, {r2}, {separation}, {refinement})")
    if not separation > r1 + r2:
        raise MeshError("disks overlap: separation must exceed r1 + r2")
    rings = 2 ** int(refinement)
    n1, t1, f1 = _disk_arrays(float(r1), rings)
    n2, t2, f2 = _disk_arrays(float(r2), rings)
    off = len(n1)
    nodes = np.vstack([n1, n2 + np.array([separation, 0.0])])
    tris = np.vstack([t1, t2 + off])
    facets = np.vstack([f1, f2 + off])
    markers = np.concatenate([np.ones(len(f1)), 2 * np.ones(len(f2))]).astype(np.int64)
    return Mesh(2, nodes, tris, facets, markers)


def rectangle(width: float, height: float, nx: int, ny: int) -> Mesh:
    """Structured ``[0, width] x [0, height]`` mesh, two triangles per cell."""
    if not (width > 0 and height > 0) or int(nx) < 1 or int(ny) < 1:
        raise MeshError(f"invalid rectangle spec ({width}, {height}, {nx}, {ny})")
    nx, ny = int(nx), int(ny)
    xs, ys = np.meshgrid(np.linspace(0, width, nx + 1), np.linspace(0, height, ny + 1))
    nodes = np.column_stack([xs.ravel(), ys.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tris = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    loop = np.concatenate([idx[0, :-1], idx[:-1, -1], idx[-1, :0:-1], idx[:0:-1, 0]])
    facets = np.column_stack([loop, np.roll(loop, -1)])
    return Mesh(2, nodes, tris, facets, np.ones(len(facets), dtype=np.int64))


_GENERATORS = {
    "interval": (interval, (float, float, int)),
    "disk": (disk, (float, int)),
    "two_disks": (two_disks, (float, float, float, int)),
    "rectangle": (rectangle, (float, float, int, int)),
}


def generate_mesh(spec) -> Mesh:
    """Build a mesh from a spec string such as ``"disk:1.0,4"`` or a tuple.

    Accepted forms: ``("disk", 1.0, 4)``, ``"disk:1.0,4"``, ``"disk(1.0, 4)"``.
    """
    if isinstance(spec, str):
        s = spec.strip()
        if "(" in s and s.endswith(")"):
            name, args = s[:-1].split("(", 1)
        elif ":" in s:
            name, args = s.split(":", 1)
        else:
            name, args = s, ""
        parts = [p for p in args.replace(" ", "").split(",") if p]
        spec = (name.strip(), *parts)
    name, *args = spec
    if name not in _GENERATORS:
        raise MeshError(f"unknown mesh generator {name!r}")
    fn, types = _GENERATORS[name]
    if len(args) != len(types):
        raise MeshError(f"{name} expects {len(types)} arguments, got {len(args)}")
    try:
        conv = [t(float(a)) if t is int else t(a) for t, a in zip(types, args)]
    except (TypeError, ValueError) as exc:
        raise MeshError(f"invalid {name} arguments {args}") from exc
    if any(t is int and float(a) != int(float(a)) for t, a in zip(types, args)):
        raise MeshError(f"{name} expects integer counts, got {args}")
    return fn(*conv)


# ----------------------------------------------------------------------
# insulmesh v1 text format


def save_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` in insulmesh v1 format (atomic replace)."""
    lines = ["insulmesh 1", f"dim {mesh.dim}", f"nodes {mesh.n_nodes}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in mesh.nodes]
    lines.append(f"elements {mesh.n_elements}")
    lines += [" ".join(str(int(v)) for v in row) for row in mesh.elements]
    lines.append(f"boundary {len(mesh.boundary)}")
    lines += [
        " ".join(str(int(v)) for v in row) + f" {int(mk)}"
        for row, mk in zip(mesh.boundary, mesh.markers)
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_mesh(path) -> Mesh:
    """Parse an insulmesh v1 file, reporting the offending line on error."""
    with open(path) as fh:
        raw = fh.readlines()
    return parse_mesh(raw)


def parse_mesh(lines) -> Mesh:
    if isinstance(lines, str):
        lines = lines.splitlines()
    body = []
    for no, line in enumerate(lines, start=1):
        s = line.split("#", 1)[0].strip()
        if s:
            body.append((no, s.split()))
    it = iter(body)
    last = [len(lines)]

    def nxt(what):
        try:
            no, toks = next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file, expected {what}", last[0]) from None
        last[0] = no
        return no, toks

    def header(keyword):
        no, toks = nxt(f"'{keyword} <count>'")
        if len(toks) != 2 or toks[0] != keyword:
            raise MeshFormatError(f"expected '{keyword} <count>'", no)
        try:
            val = int(toks[1])
        except ValueError:
            raise MeshFormatError(f"invalid {keyword} count {toks[1]!r}", no) from None
        if val < 0:
            raise MeshFormatError(f"negative {keyword} count", no)
        return val

    no, toks = nxt("'insulmesh 1'")
    if toks != ["insulmesh", "1"]:
        raise MeshFormatError("missing 'insulmesh 1' header", no)
    dim = header("dim")
    if dim not in (1, 2):
        raise MeshFormatError(f"unsupported dim {dim}", last[0])
    n = header("nodes")
    nodes = []
    for _ in range(n):
        no, toks = nxt("node coordinates")
        if len(toks) != dim:
            raise MeshFormatError(f"expected {dim} coordinate(s)", no)
        try:
            nodes.append([float(t) for t in toks])
        except ValueError:
            raise MeshFormatError("invalid coordinate", no) from None
    t = header("elements")
    elements = []
    for _ in range(t):
        no, toks = nxt("element connectivity")
        elements.append(_parse_ids(toks, dim + 1, n, no))
    nb = header("boundary")
    facets, markers = [], []
    facet_lines = []
    for _ in range(nb):
        no, toks = nxt("boundary facet")
        if len(toks) != dim + 1:
            raise MeshFormatError(f"expected {dim} node id(s) and a marker", no)
        facets.append(_parse_ids(toks[:dim], dim, n, no))
        try:
            markers.append(int(toks[dim]))
        except ValueError:
            raise MeshFormatError(f"invalid marker {toks[dim]!r}", no) from None
        facet_lines.append(no)
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError("trailing content", extra[0])
    if not elements:
        raise MeshFormatError("mesh has no elements", last[0])
    nodes = np.array(nodes, dtype=float).reshape(-1, dim)
    elements = np.array(elements, dtype=np.int64).reshape(-1, dim + 1)
    if dim == 2:
        elements = _orient(nodes, elements)
    # facet-level check first, so errors name the file line
    expected = _topological_boundary(dim, elements)
    for f, no in zip(facets, facet_lines):
        if tuple(sorted(f)) not in expected:
            raise MeshFormatError(f"non-boundary facet {tuple(f)}", no)
    try:
        return Mesh(dim, nodes, elements, np.array(facets, dtype=np.int64).reshape(-1, dim), markers)
    except MeshFormatError:
        raise
    except MeshError as exc:
        raise MeshFormatError(str(exc), last[0]) from None


def _parse_ids(toks, count, n, no):
    if len(toks) != count:
        raise MeshFormatError(f"expected {count} node indices", no)
    try:
        ids = [int(t) for t in toks]
    except ValueError:
        raise MeshFormatError("invalid node index", no) from None
    for i in ids:
        if i < 0 or i >= n:
            raise MeshFormatError("node index out of range", no)
    return ids
