"""Dual arcs, extremal fields, the boundary characteristic flow, synthesis."""

import warnings

import numpy as np
import pytest

from mintime import characteristics as chars
from mintime import dynamics as dyn, hjb
from mintime import target as tmod
from mintime.errors import CostateBlowupError
from mintime.functions import ConstantScalar, ConstantVector, LinearMap
from mintime.target import DiskTarget

DISK = DiskTarget((0.0, 0.0), 1.0)
BALL = dyn.Ball(ConstantVector((0.0, 0.0)), ConstantScalar(1.0))
SHADOW = dyn.Segment(ConstantVector((1.0, 0.0)), ConstantScalar(1.0))
DRIFT_LIN = dyn.DriftBall(LinearMap(((0.0, 1.0), (0.0, 0.0))), 1.0)
DRIFT_CONST = dyn.DriftBall(ConstantVector((2.0, 0.0)), 1.0)


def boundary_tc(spec, x):
    return chars.terminal_condition(tmod.boundary_point_at(DISK, spec, np.asarray(x)))


class TestTerminalConditions:
    def test_normal_condition_scales_by_h(self):
        tc = boundary_tc(DRIFT_CONST, [-1.0, 0.0])  # xi = (1,0), H = 3
        assert tc.kind is chars.ArcKind.NORMAL
        np.testing.assert_allclose(tc.p_terminal, [1.0 / 3.0, 0.0])

    def test_horizontal_condition_keeps_xi(self):
        tc = boundary_tc(SHADOW, [0.0, 1.0])
        assert tc.kind is chars.ArcKind.HORIZONTAL
        np.testing.assert_allclose(tc.p_terminal, [0.0, -1.0], atol=1e-12)


class TestDualArc:
    def test_eikonal_arc_closed_form(self):
        arc = chars.integrate_dual_arc(BALL, DISK, boundary_tc(BALL, [1.0, 0.0]),
                                       horizon=2.0, step=0.01)
        np.testing.assert_allclose(arc.x_path[0], [3.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(arc.x_path[-1], [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(arc.p_path, np.tile([-1.0, 0.0], (len(arc.times), 1)),
                                   atol=1e-12)
        assert float(np.max(np.abs(arc.h_trace - 1.0))) <= 1e-10

    def test_step_must_resolve_horizon(self):
        with pytest.raises(ValueError):
            chars.integrate_dual_arc(BALL, DISK, boundary_tc(BALL, [1.0, 0.0]),
                                     horizon=1.0, step=0.5)

    def test_fourth_order_hamiltonian_decay(self):
        tc = boundary_tc(DRIFT_LIN, DISK.chart_point(np.array([0.7]))[0])
        devs = []
        for step in (1e-2, 5e-3, 2.5e-3):
            arc = chars.integrate_dual_arc(DRIFT_LIN, DISK, tc, 1.5, step)
            devs.append(float(np.max(np.abs(arc.h_trace - 1.0))))
        assert devs[0] / devs[1] >= 8.0 and devs[1] / devs[2] >= 8.0

    def test_time_reversal_consistency(self):
        for spec, x in ((BALL, [0.0, 1.0]), (DRIFT_LIN, [0.8, 0.6])):
            tc = boundary_tc(spec, np.asarray(x) / np.linalg.norm(x))
            step = 5e-3
            arc = chars.integrate_dual_arc(spec, DISK, tc, 1.5, step)
            x_t, p_t = chars.integrate_forward(arc)
            tol = 10.0 * step ** 4 + 1e-9
            assert np.linalg.norm(x_t - tc.boundary.x) <= tol
            assert np.linalg.norm(p_t - tc.p_terminal) <= tol

    def test_euler_identity_along_arc(self):
        arc = chars.integrate_dual_arc(DRIFT_LIN, DISK,
                                       boundary_tc(DRIFT_LIN, [0.0, -1.0]), 1.5, 5e-3)
        xdot = dyn.grad_p(DRIFT_LIN, arc.x_path, arc.p_path)
        inner = np.sum(arc.p_path * xdot, axis=-1)
        assert float(np.max(np.abs(inner - arc.h_trace))) <= 1e-10

    def test_costate_out_of_range_raises(self):
        # shear drift grows ||p|| = sqrt(1 + tau^2) along this arc
        tc = boundary_tc(DRIFT_LIN, [1.0, 0.0])
        with pytest.raises(CostateBlowupError):
            chars.integrate_dual_arc(DRIFT_LIN, DISK, tc, 2.0, 0.01,
                                     p_range=(1e-8, 1.1))

    def test_branch_switch_warning(self):
        # costate crossing the segment tie surface flips the selection
        seg = dyn.Segment(ConstantVector((1.0, 0.0)), ConstantScalar(1.0))
        bp = tmod.BoundaryPoint(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 1.0)
        tc = chars.TerminalCondition(bp, chars.ArcKind.NORMAL, np.array([-1.0, 0.0]))
        with warnings.catch_warnings(record=True) as captured:
            warnings.simplefilter("always")
            arc = chars.integrate_dual_arc(seg, DISK, tc, 1.0, 0.01)
        assert arc.branch_switches == 0
        assert not captured


class TestFlow:
    def test_zero_time_identity(self):
        x = np.array([1.0, 0.0])
        np.testing.assert_array_equal(chars.characteristic_flow(BALL, DISK, 0.0, x, 0.01), x)

    def test_eikonal_flow_outward(self):
        got = chars.characteristic_flow(BALL, DISK, 1.5, np.array([1.0, 0.0]), 0.01)
        np.testing.assert_allclose(got, [2.5, 0.0], atol=1e-10)

    def test_flow_matches_arc_start(self):
        # for unit boundary Hamiltonian the flow and the dual arc trace the
        # same curve up to time reversal and costate scaling
        for spec in (BALL, DRIFT_LIN):
            x_bar = DISK.chart_point(np.array([2.2]))[0]
            bp = tmod.boundary_point_at(DISK, spec, x_bar)
            if abs(bp.h_value - 1.0) > 0.5:
                continue
            step = 0.01
            t = 1.2
            arc = chars.integrate_dual_arc(spec, DISK, chars.terminal_condition(bp), t, step)
            flowed = chars.characteristic_flow(spec, DISK, t, x_bar, step)
            assert np.linalg.norm(flowed - arc.x_path[0]) <= 10 * step

    def test_lattice_covers_both_shadow_branches(self):
        sigma = tmod.find_sigma_set(DISK, SHADOW, 2048)
        lattice, spacing = chars.flow_lattice(SHADOW, DISK, sigma, 2.0, 0.01)
        assert spacing == pytest.approx(0.01, rel=0.05)
        upper = lattice[np.isclose(lattice[:, 1], 1.0)]
        assert upper[:, 0].min() <= -1.9 and upper[:, 0].max() >= 1.9

    def test_lattice_box_truncation(self):
        sigma = tmod.find_sigma_set(DISK, SHADOW, 2048)
        box = (np.array([-1.5, -1.5]), np.array([1.5, 1.5]))
        lattice, _ = chars.flow_lattice(SHADOW, DISK, sigma, 50.0, 0.01, box=box)
        assert np.max(np.abs(lattice[:, 0])) <= 1.5 + 0.011


class TestField:
    def test_minimum_boundary_count(self):
        with pytest.raises(ValueError):
            chars.build_extremal_field(BALL, DISK, 4, 2.0, 0.01)

    def test_eikonal_radial_field_no_crossings(self):
        field = chars.build_extremal_field(BALL, DISK, 16, 2.0, 0.01)
        assert len(field.arcs) == 16
        assert not any(a.crossing_flag for a in field.arcs)
        assert not field.errors
        for arc in field.arcs:
            assert abs(float(DISK.g(arc.x_path[-1]))) <= 1e-8

    def test_shadow_field_horizontal_at_sigma(self):
        field = chars.build_extremal_field(SHADOW, DISK, 64, 2.0, 0.01)
        horiz = field.horizontal_arcs()
        got = sorted(round(a.tc.boundary.param, 6) for a in horiz)
        want = [round(np.pi / 2, 6), round(3 * np.pi / 2, 6)]
        assert got == want
        for arc in horiz:
            assert float(np.max(np.abs(arc.h_trace))) <= 1e-8 + 1e-6

    def test_drift_const_focus_flagged(self):
        # backward leeward arcs x(tau) = (cos(th)(1-tau) - 2 tau, sin(th)(1-tau))
        # all meet at (-2, 0) at tau = 1: crossing flags on that bundle
        field = chars.build_extremal_field(DRIFT_CONST, DISK, 64, 1.5, 0.01)
        lee, flagged = 0, 0
        for arc in field.arcs:
            th = arc.tc.boundary.param
            if th is None:
                continue
            if min(th, 2 * np.pi - th) < np.pi / 3 - 0.05:
                lee += 1
                flagged += arc.crossing_flag
                assert arc.horizon < 1.1  # truncated before/at the focus
        assert lee >= 18 and flagged == lee

    def test_normal_arcs_hamiltonian_near_one(self):
        field = chars.build_extremal_field(DRIFT_LIN, DISK, 32, 1.5, 5e-3)
        for arc in field.normal_arcs():
            assert float(np.max(np.abs(arc.h_trace - 1.0))) <= 1e-8


class TestSynthesis:
    @pytest.fixture(scope="class")
    def eikonal_field(self):
        return chars.build_extremal_field(BALL, DISK, 256, 2.0, 0.01)

    def test_inside_target_zero(self, eikonal_field):
        assert chars.synthesize_time(eikonal_field, [0.3, 0.2]) == (0.0, -1)

    def test_radial_query(self, eikonal_field):
        got = chars.synthesize_time(eikonal_field, [2.0, 0.0])
        assert got is not None
        assert got[0] == pytest.approx(1.0, abs=eikonal_field.match_radius)

    def test_unmatched_returns_none(self, eikonal_field):
        assert chars.synthesize_time(eikonal_field, [2.0, 2.9]) is None

    def test_drift_const_focus_value_matches_grid(self):
        # at the backward focus (-2, 0) the leeward arcs carry time 1 while the
        # optimal route takes 1/3; synthesis must report the smaller time
        field = chars.build_extremal_field(DRIFT_CONST, DISK, 128, 1.5, 5e-3)
        grid = hjb.make_grid([(-4.0, 2.0), (-3.0, 3.0)], 0.05)
        vf = hjb.solve(DRIFT_CONST, DISK, grid)
        got = chars.synthesize_time(field, [-2.0, 0.0])
        assert got is not None
        t_grid = float(vf.interpolate(np.array([[-2.0, 0.0]]))[0])
        assert abs(got[0] - t_grid) <= 5 * 0.05
        assert got[0] == pytest.approx(1.0 / 3.0, abs=0.05)
