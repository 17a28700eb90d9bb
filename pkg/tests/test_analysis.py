"""Certificates, optimality verdicts, singularity detection, regularity proxies."""

import numpy as np
import pytest

from mintime import analysis, characteristics as chars, dynamics as dyn, hjb
from mintime import target as tmod
from mintime.errors import CapExceededError
from mintime.functions import ConstantScalar, ConstantVector, LinearMap
from mintime.target import DiskTarget

DISK = DiskTarget((0.0, 0.0), 1.0)
BALL = dyn.Ball(ConstantVector((0.0, 0.0)), ConstantScalar(1.0))
SHADOW = dyn.Segment(ConstantVector((1.0, 0.0)), ConstantScalar(1.0))
DRIFT_LIN = dyn.DriftBall(LinearMap(((0.0, 1.0), (0.0, 0.0))), 1.0)
BOX = [(-3.0, 3.0), (-3.0, 3.0)]
H = 0.05


@pytest.fixture(scope="module")
def eikonal_vf():
    return hjb.solve(BALL, DISK, hjb.make_grid(BOX, H))


@pytest.fixture(scope="module")
def shadow_vfs():
    return [hjb.solve(SHADOW, DISK, hjb.make_grid(BOX, H)),
            hjb.solve(SHADOW, DISK, hjb.make_grid(BOX, H / 2))]


@pytest.fixture(scope="module")
def shadow_sigma():
    return tmod.find_sigma_set(DISK, SHADOW, 4096)


def radial_ray(duration=2.0, count=101, start=3.0):
    ts = np.linspace(0.0, duration, count)
    xs = np.stack([start - ts, np.zeros_like(ts)], axis=-1)
    ps = np.tile([-1.0, 0.0], (count, 1))
    return ts, xs, ps


class TestCertificates:
    def test_exact_supergradient_small_constant(self, eikonal_vf):
        cert = analysis.certify_supergradient(eikonal_vf, np.array([2.0, 0.0]),
                                              np.array([-1.0, 0.0]), "proximal")
        assert 0.0 <= cert.c5 <= 1.0 + 10 * H
        np.testing.assert_allclose(cert.vector, [1.0, 0.0])

    def test_reversed_sign_cap_exceeded(self, eikonal_vf):
        with pytest.raises(CapExceededError):
            analysis.certify_supergradient(eikonal_vf, np.array([2.0, 0.0]),
                                           np.array([1.0, 0.0]), "proximal")

    def test_horizontal_certificate_on_shadow_line(self, shadow_vfs):
        # the horizontal arc through (0,1) carries p = (0,-1); T drops like
        # sqrt below the line so the alpha = 0 inequality holds
        cert = analysis.certify_supergradient(shadow_vfs[0], np.array([-1.2, 1.0]),
                                              np.array([0.0, -1.0]), "horizontal")
        assert np.isfinite(cert.c5)

    def test_field_source(self):
        field = chars.build_extremal_field(BALL, DISK, 256, 2.0, 0.01)
        cert = analysis.certify_supergradient(field, np.array([2.0, 0.0]),
                                              np.array([-1.0, 0.0]), "proximal",
                                              count=150)
        assert np.isfinite(cert.c5)

    def test_unknown_kind_rejected(self, eikonal_vf):
        with pytest.raises(ValueError):
            analysis.certify_supergradient(eikonal_vf, np.array([2.0, 0.0]),
                                           np.array([-1.0, 0.0]), "sideways")

    def test_success_rate_along_normal_arcs(self, eikonal_vf):
        field = chars.build_extremal_field(BALL, DISK, 32, 2.2, 0.01)
        lo, hi = np.array([-3.0, -3.0]), np.array([3.0, 3.0])
        total = good = 0
        for arc in field.normal_arcs()[::4]:
            t2t = arc.times[-1] - arc.times
            inbox = np.all((arc.x_path >= lo + H) & (arc.x_path <= hi - H), axis=-1)
            eligible = np.flatnonzero(inbox & (t2t >= 2 * H))
            for j in eligible[:: max(1, len(eligible) // 12)]:
                total += 1
                try:
                    analysis.certify_supergradient(eikonal_vf, arc.x_path[j],
                                                   arc.p_path[j], "proximal",
                                                   count=120)
                    good += 1
                except (CapExceededError, ValueError):
                    pass
        assert total >= 50 and good / total >= 0.95


class TestConstancy:
    def test_eikonal_exact(self):
        bp = tmod.boundary_point_at(DISK, BALL, np.array([1.0, 0.0]))
        arc = chars.integrate_dual_arc(BALL, DISK, chars.terminal_condition(bp), 2.0, 0.01)
        rep = analysis.hamiltonian_constancy_report(arc, refinements=1)
        assert rep.max_deviation <= 1e-10
        assert rep.reference == 1.0

    def test_drift_refinement_order(self):
        bp = tmod.boundary_point_at(DISK, DRIFT_LIN, DISK.chart_point(np.array([0.7]))[0])
        arc = chars.integrate_dual_arc(DRIFT_LIN, DISK, chars.terminal_condition(bp),
                                       1.5, 1e-2)
        rep = analysis.hamiltonian_constancy_report(arc, refinements=2)
        assert rep.max_deviation <= 1e-6
        assert rep.observed_order is not None and rep.observed_order >= 3.0

    def test_horizontal_reference_zero(self):
        bp = tmod.boundary_point_at(DISK, SHADOW, np.array([0.0, 1.0]))
        arc = chars.integrate_dual_arc(SHADOW, DISK, chars.terminal_condition(bp), 2.0, 0.01)
        rep = analysis.hamiltonian_constancy_report(arc, refinements=1)
        assert rep.reference == 0.0
        assert rep.max_deviation <= 1e-8 + 1e-6


class TestOptimalityVerdicts:
    def test_accepts_analytic_ray(self, eikonal_vf):
        v = analysis.verify_optimality(BALL, eikonal_vf, *radial_ray())
        assert v.optimal and v.failed_condition is None

    def test_rejects_rescaled_costate_at_c(self, eikonal_vf):
        ts, xs, _ = radial_ray()
        ps = np.tile([-0.5, 0.0], (len(ts), 1))
        v = analysis.verify_optimality(BALL, eikonal_vf, ts, xs, ps)
        assert not v.optimal and v.failed_condition == "hamiltonian(c)"

    def test_rejects_time_dilation_at_c(self, eikonal_vf):
        # canonical dilation of the extremal pair: (t, x, p) -> (1.5t, x, p/1.5)
        ts, xs, ps = radial_ray()
        v = analysis.verify_optimality(BALL, eikonal_vf, 1.5 * ts, xs, ps / 1.5)
        assert not v.optimal and v.failed_condition == "hamiltonian(c)"
        assert v.checks["hamiltonian(c)"]["worst"] == pytest.approx(1.0 / 3.0, abs=1e-9)

    def test_rejects_spiral_at_a(self, eikonal_vf):
        ts, xs, _ = radial_ray()
        swirl = 0.25 * np.sin(np.pi * ts / 2.0)
        radii = np.linalg.norm(xs, axis=-1)
        xs_sp = np.stack([radii * np.cos(swirl), radii * np.sin(swirl)], axis=-1)
        ps_sp = -xs_sp / np.linalg.norm(xs_sp, axis=-1, keepdims=True)
        v = analysis.verify_optimality(BALL, eikonal_vf, ts, xs_sp, ps_sp)
        assert not v.optimal and v.failed_condition == "dynamics(a)"

    def test_synthesized_costates(self, eikonal_vf):
        ts, xs, _ = radial_ray()
        v = analysis.verify_optimality(BALL, eikonal_vf, ts[5:-5], xs[5:-5])
        assert v.costate_source == "synthesized"
        assert v.optimal

    def test_dilated_elapsed_time_rejected_without_costates(self, eikonal_vf):
        # 50% longer elapsed time, same path, costates synthesized from the
        # grid: Hamiltonian check passes by construction, dynamics fails
        ts, xs, _ = radial_ray()
        v = analysis.verify_optimality(BALL, eikonal_vf, 1.5 * ts[5:-5], xs[5:-5])
        assert not v.optimal
        assert v.failed_condition in ("dynamics(a)", "conclusion")


class TestDetection:
    def test_eikonal_cloud_empty(self, eikonal_vf):
        fine = hjb.solve(BALL, DISK, hjb.make_grid(BOX, H / 2))
        cloud, _ = analysis.detect_nonlipschitz([eikonal_vf, fine])
        assert len(cloud) == 0

    def test_shadow_cloud_on_tangent_rows(self, shadow_vfs):
        cloud, ratios = analysis.detect_nonlipschitz(shadow_vfs)
        assert len(cloud) >= 50
        assert np.all(np.abs(np.abs(cloud[:, 1]) - 1.0) <= 2.5 * H)
        assert np.min(ratios) >= 3.0

    def test_needs_two_levels(self, eikonal_vf):
        with pytest.raises(ValueError):
            analysis.detect_nonlipschitz([eikonal_vf])


class TestFlowout:
    def test_vacuous_on_eikonal(self):
        rep = analysis.flowout_check(np.zeros((0, 2)), [], BALL, DISK, 2.0)
        assert rep.max_distance == 0.0 and not rep.alarm

    def test_alarm_when_sigma_empty_but_cloud_not(self):
        rep = analysis.flowout_check(np.array([[1.5, 1.5]]), [], BALL, DISK, 2.0)
        assert rep.alarm and rep.max_distance == float("inf")

    def test_shadow_containment(self, shadow_vfs, shadow_sigma):
        cloud, _ = analysis.detect_nonlipschitz(shadow_vfs)
        box = (np.array([-3.0, -3.0]), np.array([3.0, 3.0]))
        rep = analysis.flowout_check(cloud, shadow_sigma, SHADOW, DISK, 30.0,
                                     step=0.01, box=box)
        assert rep.max_distance <= 5 * H + rep.lattice_spacing
        assert not rep.alarm

    def test_descent_traces_end_near_sigma(self, shadow_vfs, shadow_sigma):
        cloud, _ = analysis.detect_nonlipschitz(shadow_vfs)
        sig = np.stack([bp.x for bp in shadow_sigma])
        picks = cloud[np.unique(np.linspace(0, len(cloud) - 1, 10).astype(int))]
        for pt in picks:
            end = analysis.descend_to_target(SHADOW, DISK, shadow_vfs[1], pt)
            assert np.min(np.linalg.norm(sig - end, axis=-1)) <= 10 * H
        assert all(abs(bp.h_value) <= 2e-6 for bp in shadow_sigma)


class TestBoxCounting:
    def test_segment_cloud(self):
        rng = np.random.default_rng(0)
        pts = np.stack([np.zeros(1000), rng.uniform(-1.0, 1.0, 1000)], axis=-1)
        dim = analysis.box_counting_dimension(pts, [0.5 / 2 ** j for j in range(5)])
        assert 0.85 <= dim <= 1.15

    def test_patch_cloud(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0.0, 1.0, size=(1000, 2))
        dim = analysis.box_counting_dimension(pts, [0.5, 0.25, 0.125, 0.0625])
        assert 1.8 <= dim <= 2.2

    def test_preconditions(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            analysis.box_counting_dimension(rng.uniform(size=(10, 2)), [0.5, 0.25, 0.125, 0.0625])
        with pytest.raises(ValueError):
            analysis.box_counting_dimension(rng.uniform(size=(100, 2)), [0.5, 0.25])


class TestExteriorSphere:
    def test_eikonal_annulus_floor(self, eikonal_vf):
        # allowance from the analytic oracle: twice the max grid error on the ring
        nodes = eikonal_vf.grid.node_coords()
        truth = np.maximum(np.linalg.norm(nodes, axis=-1) - 1.0, 0.0).reshape(
            eikonal_vf.grid.shape)
        rr = np.linalg.norm(nodes, axis=-1).reshape(eikonal_vf.grid.shape)
        ring_mask = (rr >= 1.0) & (rr <= 2.5)
        e_max = float(np.max(np.abs(eikonal_vf.t_values - truth)[ring_mask]))
        rep = analysis.exterior_sphere_scan(eikonal_vf,
                                            (np.array([-2.0, -2.0]), np.array([2.0, 2.0])),
                                            n_points=120, seed=3,
                                            value_error=2.0 * e_max)
        ring = [p for p in rep.points if 1.2 <= np.linalg.norm(p.x) <= 2.0]
        assert len(ring) >= 30
        assert min(p.theta for p in ring) >= 1.0 - 10 * H

    def test_synthetic_bowl_recovers_curvature(self):
        # hypograph of the convex bowl T = (kappa/2)||x||^2 admits exterior
        # spheres of radius exactly 1/kappa at the bottom
        kappa = 2.0
        grid = hjb.make_grid([(-1.0, 1.0), (-1.0, 1.0)], 0.02)
        nodes = grid.node_coords()
        tv = (0.5 * kappa * np.sum(nodes ** 2, axis=-1)).reshape(grid.shape)
        vf = hjb.ValueField(grid, tv, np.ones(grid.shape, bool), np.zeros(grid.shape, bool),
                            10.0, 0.01, 1, 0.0, True)
        rep = analysis.exterior_sphere_scan(vf, (np.array([-0.2, -0.2]),
                                                 np.array([0.2, 0.2])),
                                            n_points=60, sample_radius=0.5, seed=0)
        theta = float(np.median([p.theta for p in rep.points]))
        assert abs(theta - 1.0 / kappa) <= 0.2 / kappa

    def test_concave_cap_unconstrained(self):
        # concave cap: the hypograph is convex, so radii hit the cap value
        grid = hjb.make_grid([(-1.0, 1.0), (-1.0, 1.0)], 0.02)
        nodes = grid.node_coords()
        tv = (1.0 - np.sum(nodes ** 2, axis=-1)).reshape(grid.shape)
        vf = hjb.ValueField(grid, tv, np.ones(grid.shape, bool), np.zeros(grid.shape, bool),
                            10.0, 0.01, 1, 0.0, True)
        rep = analysis.exterior_sphere_scan(vf, (np.array([-0.2, -0.2]),
                                                 np.array([0.2, 0.2])),
                                            n_points=40, sample_radius=0.5, seed=0)
        assert min(p.theta for p in rep.points) >= 100.0

    def test_lipschitz_consistency_with_gradient_bound(self, eikonal_vf):
        # bounded gradient + positive sphere radius => sampled Lipschitz ratios
        # stay within the gradient bound (up to sampling slack)
        grad, valid = hjb.gradient_field(eikonal_vf)
        nodes = eikonal_vf.grid.node_coords().reshape(eikonal_vf.grid.shape + (2,))
        rr = np.linalg.norm(nodes, axis=-1)
        ring = valid & (rr >= 1.2) & (rr <= 2.5)
        bound = float(np.max(np.linalg.norm(grad[ring], axis=-1)))
        rng = np.random.default_rng(4)
        ang = rng.uniform(0, 2 * np.pi, 400)
        rad = rng.uniform(1.3, 2.4, 400)
        y = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
        z = np.roll(y, 1, axis=0)
        ty, _ = eikonal_vf.interp_valid(y)
        tz, _ = eikonal_vf.interp_valid(z)
        d = np.linalg.norm(y - z, axis=-1)
        keep = d > 4 * H
        ratios = np.abs(ty - tz)[keep] / d[keep]
        assert np.max(ratios) <= bound * 1.1


class TestDppMonotonicity:
    def test_along_admissible_trajectory(self, eikonal_vf):
        # T(x(t+s)) >= T(x(t)) - s - 5h along any admissible motion
        v = np.array([0.6, -0.8])
        ts = np.linspace(0.0, 1.5, 40)
        xs = np.array([-2.5, 1.5]) + ts[:, None] * v
        tv, ok = eikonal_vf.interp_valid(xs)
        assert ok.all()
        for i in range(len(ts)):
            for j in range(i + 1, len(ts)):
                s = ts[j] - ts[i]
                assert tv[j] >= tv[i] - s - 5 * H
