from __future__ import annotations

import math

import numpy as np
import pytest

from insulopt.fem import AssemblyError, ScalarField, assemble, boundary_integral
from insulopt.mesh import Mesh, disk, interval, rectangle, two_disks


def test_single_triangle_stiffness():
    m = Mesh(2, [(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], [(0, 1), (1, 2), (2, 0)], [1, 1, 1])
    K = assemble(m).stiffness.toarray()
    np.testing.assert_allclose(K, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)


def test_single_triangle_mass_and_weights():
    m = Mesh(2, [(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], [(0, 1), (1, 2), (2, 0)], [1, 1, 1])
    ops = assemble(m)
    M = ops.mass.toarray()
    np.testing.assert_allclose(M, (np.ones((3, 3)) + np.eye(3)) / 24.0, atol=1e-15)
    np.testing.assert_allclose(ops.boundary_weights, [1.0, 0.5 + 0.5 * math.sqrt(2), 0.5 + 0.5 * math.sqrt(2)])


def test_interval_operators():
    ops = assemble(interval(-1, 1, 2))
    np.testing.assert_allclose(ops.stiffness.toarray(), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    np.testing.assert_array_equal(ops.boundary_nodes, [0, 2])
    np.testing.assert_allclose(ops.boundary_weights, [1.0, 1.0])
    assert ops.mass.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("mesh", [interval(0, 3, 7), disk(1.0, 2), rectangle(2, 1, 3, 4), two_disks(0.5, 1.0, 3.0, 1)])
def test_constants_in_kernel_and_symmetry(mesh):
    ops = assemble(mesh)
    K, M = ops.stiffness, ops.mass
    assert np.abs(K @ np.ones(ops.n)).max() < 1e-12
    assert abs(K - K.T).max() == 0
    assert abs(M - M.T).max() == 0
    assert np.all(ops.boundary_weights >= 0)
    for mk in mesh.component_markers:
        ind = (mesh.node_markers() == mk).astype(float)
        assert np.abs(K @ ind).max() < 1e-12


def test_kernel_dimension_equals_component_count():
    ops = assemble(two_disks(0.5, 1.0, 3.0, 1))
    ev = np.linalg.eigvalsh(ops.stiffness.toarray())
    assert np.sum(ev < 1e-10) == 2
    assert np.linalg.eigvalsh(ops.mass.toarray()).min() > 0


def test_component_weights_sum_to_perimeter():
    ops = assemble(two_disks(0.5, 1.0, 3.0, 3))
    p1, p2 = ops.component_perimeter(1), ops.component_perimeter(2)
    assert p1 + p2 == pytest.approx(ops.perimeter, rel=1e-14)
    nb = 64
    assert p1 == pytest.approx(2 * nb * 0.5 * math.sin(math.pi / nb), rel=1e-13)
    assert p2 == pytest.approx(2 * nb * math.sin(math.pi / nb), rel=1e-13)


def test_perimeter_first_order_or_better():
    errs = [abs(assemble(disk(1.0, r)).perimeter - 2 * math.pi) for r in (2, 3, 4, 5)]
    for a, b in zip(errs, errs[1:]):
        assert a / b >= 1.8


def test_degenerate_triangle_identified():
    # collinear triangle 1: (1,0), (2,0), (3,0) attached to a valid one
    nodes = [(0, 0), (1, 0), (0, 1), (2, 0), (3, 0)]
    tris = [(0, 1, 2), (1, 3, 4)]
    facets = [(0, 1), (1, 2), (2, 0), (1, 3), (3, 4), (1, 4)]
    m = Mesh(2, nodes, tris, facets, [1, 1, 1, 1, 1, 1])
    with pytest.raises(AssemblyError, match="triangle 1"):
        assemble(m)


def test_boundary_integral_examples(disk3_ops):
    ops = disk3_ops
    one = np.ones(ops.n)
    assert boundary_integral(ops, one) == pytest.approx(ops.perimeter)
    assert boundary_integral(ops, np.zeros(ops.n)) == 0.0
    u = one.copy()
    u[ops.boundary_nodes[::2]] = -1.0
    assert boundary_integral(ops, u) == pytest.approx(ops.perimeter)
    assert boundary_integral(ops, ScalarField(ops.mesh, one)) == pytest.approx(ops.perimeter)


def test_boundary_integral_component(two_disk_ops):
    ops = two_disk_ops
    one = np.ones(ops.n)
    assert boundary_integral(ops, one, 1) == pytest.approx(ops.component_perimeter(1))
    with pytest.raises(KeyError):
        boundary_integral(ops, one, 7)


def test_scalar_field_length_checked(disk3_ops):
    with pytest.raises(ValueError):
        ScalarField(disk3_ops.mesh, np.zeros(3))


def test_assembly_deterministic():
    a, b = assemble(disk(1.0, 3)), assemble(disk(1.0, 3))
    assert (a.stiffness != b.stiffness).nnz == 0
    assert np.array_equal(a.stiffness.data, b.stiffness.data)
    assert np.array_equal(a.mass.data, b.mass.data)
    assert np.array_equal(a.boundary_weights, b.boundary_weights)


def test_robin_eigenvalue_converges_at_second_order():
    from insulopt.eigen import solve_robin_eigen
    from insulopt.oracles import disk_radial_lambda

    ref = disk_radial_lambda(1.0, 2 * math.pi)
    errs = []
    for r in (2, 3, 4):
        ops = assemble(disk(1.0, r))
        lam, _ = solve_robin_eigen(ops, np.ones(len(ops.boundary_nodes)))
        errs.append(abs(lam - ref))
    for a, b in zip(errs, errs[1:]):
        assert a / b >= 1.8
