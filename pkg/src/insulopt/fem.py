"""P1 finite element operators for the insulation functionals.

Three integrals appear in both auxiliary problems: the Dirichlet energy
(stiffness ``K``), the L2 pairing (consistent mass ``M``) and the boundary
integral of ``|u|``, discretized with node-lumped weights ``w`` so that
``int_{dOmega} |u| ~ sum_i w_i |u_i|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

__all__ = ["AssemblyError", "AssembledOperators", "ScalarField", "assemble", "boundary_integral"]


class AssemblyError(ValueError):
    """Raised for degenerate elements."""


@dataclass(frozen=True)
class ScalarField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if len(v) != self.mesh.n_nodes:
            raise ValueError(f"field has {len(v)} values for {self.mesh.n_nodes} nodes")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class AssembledOperators:
    """Sparse operators of a mesh.

    ``boundary_weights[k]`` is the lumped weight of node ``boundary_nodes[k]``;
    ``components`` maps each marker to its (node ids, weights) pair.
    """

    mesh: Mesh
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    boundary_nodes: np.ndarray
    boundary_weights: np.ndarray
    components: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @property
    def b(self) -> np.ndarray:
        """Boundary weights scattered to a full nodal vector."""
        out = np.zeros(self.n)
        out[self.boundary_nodes] = self.boundary_weights
        return out

    @property
    def perimeter(self) -> float:
        return float(self.boundary_weights.sum())

    def component_perimeter(self, marker: int) -> float:
        return float(self.components[marker][1].sum())

    def component_nodes(self, marker: int) -> np.ndarray:
        """All nodes (interior included) of the domain component ``marker``."""
        return np.flatnonzero(self.mesh.node_markers() == marker)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask


def _element_matrices_2d(mesh: Mesh):
    x = mesh.nodes
    e = mesh.elements
    p0, p1, p2 = x[e[:, 0]], x[e[:, 1]], x[e[:, 2]]
    area = mesh.signed_measures()
    bad = np.flatnonzero(np.abs(area) <= 1e-14 * max(1.0, np.abs(area).max()))
    if len(bad):
        raise AssemblyError(f"degenerate triangle {int(bad[0])} (zero area)")
    # barycentric gradients: grad(lambda_i) = rot90(opposite edge) / (2 area)
    d = np.stack([p1 - p2, p2 - p0, p0 - p1], axis=1)  # (T, 3, 2)
    g = np.stack([-d[..., 1], d[..., 0]], axis=-1) / (2.0 * area)[:, None, None]
    ke = np.abs(area)[:, None, None] * np.einsum("tik,tjk->tij", g, g)
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = np.abs(area)[:, None, None] * base[None]
    return ke, me


def _element_matrices_1d(mesh: Mesh):
    length = mesh.signed_measures()
    bad = np.flatnonzero(np.abs(length) <= 1e-14)
    if len(bad):
        raise AssemblyError(f"degenerate interval element {int(bad[0])} (zero length)")
    h = np.abs(length)
    ke = np.array([[1.0, -1.0], [-1.0, 1.0]])[None] / h[:, None, None]
    me = np.array([[2.0, 1.0], [1.0, 2.0]])[None] * (h / 6.0)[:, None, None]
    return ke, me


def assemble(mesh: Mesh) -> AssembledOperators:
    """Assemble stiffness, consistent mass and lumped boundary weights."""
    if mesh.dim == 2:
        ke, me = _element_matrices_2d(mesh)
    else:
        ke, me = _element_matrices_1d(mesh)
    k = mesh.dim + 1
    rows = np.repeat(mesh.elements, k, axis=1).reshape(-1)
    cols = np.tile(mesh.elements, (1, k)).reshape(-1)
    n = mesh.n_nodes
    K = sp.coo_matrix((ke.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((me.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    K = (K + K.T) * 0.5
    M = (M + M.T) * 0.5

    w = np.zeros(n)
    wcomp: dict[int, np.ndarray] = {}
    for mk in mesh.component_markers:
        wcomp[mk] = np.zeros(n)
    if mesh.dim == 1:
        # counting measure on the endpoints
        for f, mk in zip(mesh.boundary[:, 0], mesh.markers):
            w[f] += 1.0
            wcomp[int(mk)][f] += 1.0
    else:
        x = mesh.nodes
        lengths = np.linalg.norm(x[mesh.boundary[:, 0]] - x[mesh.boundary[:, 1]], axis=1)
        for (i, j), ln, mk in zip(mesh.boundary, lengths, mesh.markers):
            w[i] += 0.5 * ln
            w[j] += 0.5 * ln
            wcomp[int(mk)][i] += 0.5 * ln
            wcomp[int(mk)][j] += 0.5 * ln
    bnodes = mesh.boundary_nodes
    comps = {}
    for mk, vec in wcomp.items():
        ids = np.flatnonzero(vec > 0)
        comps[mk] = (ids, vec[ids])
    return AssembledOperators(mesh, K, M, bnodes, w[bnodes], comps)


def _values(field_or_array):
    if isinstance(field_or_array, ScalarField):
        return field_or_array.values
    return np.asarray(field_or_array, dtype=float)


def boundary_integral(ops: AssembledOperators, field, component: int | None = None) -> float:
    """Lumped boundary integral of ``|u|``, optionally on one component."""
    u = _values(field)
    if len(u) != ops.n:
        raise ValueError("field does not live on this mesh")
    if component is None:
        return float(ops.boundary_weights @ np.abs(u[ops.boundary_nodes]))
    if component not in ops.components:
        raise KeyError(f"unknown boundary marker {component}")
    ids, wts = ops.components[component]
    return float(wts @ np.abs(u[ids]))
