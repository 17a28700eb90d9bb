"""Semi-Lagrangian grid oracle for the minimum time function."""

import numpy as np
import pytest

from mintime import dynamics as dyn, hjb
from mintime.errors import ConvergenceError
from mintime.functions import ConstantScalar, ConstantVector
from mintime.target import DiskTarget

DISK = DiskTarget((0.0, 0.0), 1.0)
BALL = dyn.Ball(ConstantVector((0.0, 0.0)), ConstantScalar(1.0))
SHADOW = dyn.Segment(ConstantVector((1.0, 0.0)), ConstantScalar(1.0))
BOX = [(-3.0, 3.0), (-3.0, 3.0)]


@pytest.fixture(scope="module")
def eikonal_coarse():
    grid = hjb.make_grid(BOX, 0.1)
    return hjb.solve(BALL, DISK, grid)


@pytest.fixture(scope="module")
def eikonal_fine():
    grid = hjb.make_grid(BOX, 0.05)
    return hjb.solve(BALL, DISK, grid)


@pytest.fixture(scope="module")
def shadow_vf():
    grid = hjb.make_grid(BOX, 0.05)
    return hjb.solve(SHADOW, DISK, grid)


def eikonal_truth(grid):
    nodes = grid.node_coords()
    return np.maximum(np.linalg.norm(nodes, axis=-1) - 1.0, 0.0).reshape(grid.shape)


class TestGrid:
    def test_minimum_nodes(self):
        with pytest.raises(ValueError):
            hjb.make_grid([(-1.0, 1.0), (-1.0, 1.0)], 0.5)

    def test_node_order_lexicographic(self):
        grid = hjb.make_grid([(-1.0, 1.0), (0.0, 2.0)], 0.1)
        nodes = grid.node_coords()
        assert nodes.shape == (21 * 21, 2)
        np.testing.assert_allclose(nodes[0], [-1.0, 0.0])
        np.testing.assert_allclose(nodes[1], [-1.0, 0.1])
        np.testing.assert_allclose(nodes[21], [-0.9, 0.0])

    def test_interpolation_reproduces_linear_functions(self):
        grid = hjb.make_grid([(-1.0, 1.0), (-1.0, 1.0)], 0.1)
        nodes = grid.node_coords()
        vals = (2.0 * nodes[:, 0] - 0.5 * nodes[:, 1]).reshape(grid.shape)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.0, 1.0, size=(200, 2))
        np.testing.assert_allclose(hjb.interpolate(grid, vals, pts),
                                   2.0 * pts[:, 0] - 0.5 * pts[:, 1], atol=1e-12)
        assert np.isnan(hjb.interpolate(grid, vals, np.array([[2.0, 0.0]]))[0])


class TestSolve:
    def test_eikonal_accuracy(self, eikonal_coarse):
        err = np.abs(eikonal_coarse.t_values - eikonal_truth(eikonal_coarse.grid))
        assert float(np.max(err[eikonal_coarse.reachable])) <= 5 * eikonal_coarse.h

    def test_target_nodes_exact_zero(self, eikonal_coarse):
        assert np.all(eikonal_coarse.t_values[eikonal_coarse.on_target] == 0.0)
        off = ~eikonal_coarse.on_target
        assert np.all(eikonal_coarse.t_values[off] > 0.0)

    def test_shadow_strip_unreachable(self, shadow_vf):
        val, ok = shadow_vf.interp_valid(np.array([[0.0, 1.5]]))
        assert not ok[0]
        # reachable exactly on the |x2| <= 1 strip (away from the tangent rows)
        nodes = shadow_vf.grid.node_coords().reshape(shadow_vf.grid.shape + (2,))
        strip = np.abs(nodes[..., 1]) <= 0.9
        outside = np.abs(nodes[..., 1]) >= 1.1
        assert np.all(shadow_vf.reachable[strip])
        assert not np.any(shadow_vf.reachable[outside])

    def test_cfl_violation_raises(self):
        grid = hjb.make_grid(BOX, 0.1)
        with pytest.raises(ValueError):
            hjb.solve(BALL, DISK, grid, tau=0.2)

    def test_nonconvergence_reported(self):
        grid = hjb.make_grid(BOX, 0.1)
        with pytest.raises(ConvergenceError) as info:
            hjb.solve(BALL, DISK, grid, max_iters=10)
        assert info.value.residual > 0

    def test_monotone_sweeps(self):
        grid = hjb.make_grid(BOX, 0.15)
        residuals = []
        hjb.solve(BALL, DISK, grid, on_sweep=lambda it, r: residuals.append(r))
        assert all(r >= -1e-12 for r in residuals)

    def test_dpp_consistency(self, eikonal_coarse):
        # at the fixed point T(x) >= tau + Interp[T](x + tau v*) - tol
        vf = eikonal_coarse
        rng = np.random.default_rng(1)
        nodes = vf.grid.node_coords()
        reach = vf.reachable.ravel() & ~vf.on_target.ravel()
        pick = rng.choice(np.flatnonzero(reach), size=1000, replace=False)
        x = nodes[pick]
        vels = dyn.discrete_velocities(BALL, x, 32)
        feet = x[:, None, :] + vf.tau * vels
        best = np.nanmin(np.where(np.isnan(vf.interpolate(feet)), vf.t_max,
                                  vf.interpolate(feet)), axis=-1)
        lhs = vf.t_values.ravel()[pick]
        assert np.all(lhs >= vf.tau + best - 1e-8)

    def test_grid_refinement_improves(self, eikonal_coarse, eikonal_fine):
        e_c = np.max(np.abs(eikonal_coarse.t_values - eikonal_truth(eikonal_coarse.grid))
                     [eikonal_coarse.reachable])
        e_f = np.max(np.abs(eikonal_fine.t_values - eikonal_truth(eikonal_fine.grid))
                     [eikonal_fine.reachable])
        assert e_c / e_f >= 1.5


class TestGradientField:
    def test_eikonal_gradient_on_annulus(self, eikonal_fine):
        grad, valid = hjb.gradient_field(eikonal_fine)
        nodes = eikonal_fine.grid.node_coords().reshape(eikonal_fine.grid.shape + (2,))
        rr = np.linalg.norm(nodes, axis=-1)
        ring = valid & (rr >= 1.2) & (rr <= 2.5)
        truth = nodes / np.maximum(rr, 1e-12)[..., None]
        err = np.linalg.norm(grad - truth, axis=-1)
        assert float(np.max(err[ring])) <= 10 * eikonal_fine.h

    def test_hamiltonian_residual(self, eikonal_fine):
        grad, valid = hjb.gradient_field(eikonal_fine)
        nodes = eikonal_fine.grid.node_coords().reshape(eikonal_fine.grid.shape + (2,))
        rr = np.linalg.norm(nodes, axis=-1)
        ring = valid & (rr >= 1.2) & (rr <= 2.5)
        h_res = np.abs(np.linalg.norm(grad, axis=-1) - 1.0)
        assert float(np.max(h_res[ring])) <= 20 * eikonal_fine.h

    def test_stencil_masked_near_unreachable(self, shadow_vf):
        _, valid = hjb.gradient_field(shadow_vf)
        nodes = shadow_vf.grid.node_coords().reshape(shadow_vf.grid.shape + (2,))
        # nodes on the tangent rows have unreachable vertical neighbors
        row = np.isclose(np.abs(nodes[..., 1]), 1.0) & (np.abs(nodes[..., 0]) > 0.5)
        assert not np.any(valid[row & shadow_vf.reachable])


class TestSlices:
    def test_zero_slice_is_target(self, eikonal_coarse):
        np.testing.assert_array_equal(hjb.reachable_set_slice(eikonal_coarse, 0.0),
                                      eikonal_coarse.on_target)

    def test_unit_slice_radius_two(self, eikonal_coarse):
        sl = hjb.reachable_set_slice(eikonal_coarse, 1.0)
        nodes = eikonal_coarse.grid.node_coords().reshape(eikonal_coarse.grid.shape + (2,))
        rr = np.linalg.norm(nodes, axis=-1)
        assert np.all(rr[sl] <= 2.0 + 5 * eikonal_coarse.h)
        inside = rr <= 2.0 - 5 * eikonal_coarse.h
        assert np.all(sl[inside])

    def test_monotone_in_time(self, eikonal_coarse):
        s1 = hjb.reachable_set_slice(eikonal_coarse, 0.7)
        s2 = hjb.reachable_set_slice(eikonal_coarse, 1.3)
        assert np.all(s2[s1])
