"""Backward dual-arc integration and fields of extremals.

The dual-arc system couples a trajectory with its costate,

    xdot(t) = grad_p H(x, p),      -pdot(t) in d_x H(x, p),

on [0, T] with x(T) on the target boundary.  The terminal costate is
xi / H(xbar, xi) when H at the unit inner normal xi is nonzero ("normal"
arcs, which carry proximal supergradients -p(t) of the minimum time
function and H identically 1), and xi itself when H vanishes ("horizontal"
arcs, which carry horizontal supergradients and H identically 0).

Backward integration is realized by integrating the time-reversed field
forward with a classical fourth-order Runge-Kutta step; the reversed field

    dX/dtau = -grad_p H(X, P),     dP/dtau = +grad_x H(X, P)

is exactly the characteristic system of the stationary equation
H(x, -grad T) = 1, so the same integrator drives the boundary flow
Phi(t, x) = X(t, x, -grad g(x)) used for singular-set flow-out checks.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics, target as target_mod
from .errors import CostateBlowupError
from .target import BoundaryPoint, HalfspaceTarget

SIGMA_TOL = target_mod.SIGMA_TOL
P_RANGE = (1e-8, 1e8)


class ArcKind(enum.Enum):
    NORMAL = "normal"
    HORIZONTAL = "horizontal"


@dataclass(frozen=True)
class TerminalCondition:
    boundary: BoundaryPoint
    kind: ArcKind
    p_terminal: np.ndarray


def terminal_condition(bp: BoundaryPoint, sigma_tol=SIGMA_TOL) -> TerminalCondition:
    """Normal condition p(T) = xi/H(xbar, xi) when |H| > sigma_tol, else
    horizontal condition p(T) = xi."""
    if bp.h_value is None:
        raise ValueError("boundary point carries no Hamiltonian value")
    if abs(bp.h_value) > sigma_tol:
        return TerminalCondition(bp, ArcKind.NORMAL, bp.xi / bp.h_value)
    return TerminalCondition(bp, ArcKind.HORIZONTAL, bp.xi.copy())


@dataclass
class DualArc:
    """A backward-integrated extremal stored forward in time.

    ``times`` increase over [0, T_arc] with x_path[-1] on the target boundary;
    the time to target of node i is times[-1] - times[i].
    """

    times: np.ndarray
    x_path: np.ndarray
    p_path: np.ndarray
    h_trace: np.ndarray
    kind: ArcKind
    tc: TerminalCondition
    spec: object
    target: object
    step: float
    branch_switches: int = 0
    crossing_flag: bool = False

    @property
    def horizon(self):
        return float(self.times[-1])

    def time_to_target(self, i):
        return float(self.times[-1] - self.times[i])

    def start_point(self):
        return self.x_path[0]

    def node_spacing(self):
        return float(np.max(np.linalg.norm(np.diff(self.x_path, axis=0), axis=-1)))


def _reverse_rhs(spec, x, p, tie_sign):
    return -spec.velocity(x, p, tie_sign), spec.x_gradient(x, p, tie_sign)


def _forward_rhs(spec, x, p, tie_sign):
    return spec.velocity(x, p, tie_sign), -spec.x_gradient(x, p, tie_sign)


def _rk4(spec, x0, p0, n_steps, dt, rhs, tie_sign=1, p_range=P_RANGE):
    """Batched fixed-step RK4; returns paths (n_steps+1, N, n) and per-arc
    index of the first invalid state (n_steps+1 when none)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    count, n = x0.shape
    xs = np.empty((n_steps + 1, count, n))
    ps = np.empty((n_steps + 1, count, n))
    xs[0], ps[0] = x0, p0
    alive_until = np.full(count, n_steps + 1, dtype=int)
    x, p = x0.copy(), p0.copy()
    for k in range(n_steps):
        kx1, kp1 = rhs(spec, x, p, tie_sign)
        kx2, kp2 = rhs(spec, x + 0.5 * dt * kx1, p + 0.5 * dt * kp1, tie_sign)
        kx3, kp3 = rhs(spec, x + 0.5 * dt * kx2, p + 0.5 * dt * kp2, tie_sign)
        kx4, kp4 = rhs(spec, x + dt * kx3, p + dt * kp3, tie_sign)
        x_new = x + dt / 6.0 * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4)
        p_new = p + dt / 6.0 * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4)
        pn = np.linalg.norm(p_new, axis=-1)
        bad = ~np.isfinite(pn) | (pn < p_range[0]) | (pn > p_range[1])
        newly = bad & (alive_until > k)
        alive_until[newly] = k
        # freeze dead arcs so NaNs do not poison the batch
        live = (alive_until > k)[:, None]
        x = np.where(live, x_new, x)
        p = np.where(live, p_new, p)
        xs[k + 1] = x
        ps[k + 1] = p
    return xs, ps, alive_until


def _count_branch_switches(spec, xs, ps):
    """Number of tie-break branch changes along a single stored path."""
    ids = spec.branch_id(xs, ps)
    if ids is None:
        return 0
    ids = np.asarray(ids)
    return int(np.sum(ids[1:] != ids[:-1]))


def integrate_dual_arc(spec, target, tc: TerminalCondition, horizon, step,
                       tie_sign=1, p_range=P_RANGE) -> DualArc:
    """Integrate one arc backward from its terminal condition.

    Raises CostateBlowupError when ||p|| leaves ``p_range`` before the horizon.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if step > horizon / 10.0:
        raise ValueError("step must be at most horizon/10")
    n_steps = int(np.ceil(horizon / step - 1e-12))
    dt = horizon / n_steps
    xs, ps, alive = _rk4(spec, tc.boundary.x, tc.p_terminal, n_steps, dt,
                         _reverse_rhs, tie_sign, p_range)
    if alive[0] <= n_steps:
        raise CostateBlowupError(
            f"costate norm left {p_range} at tau = {alive[0] * dt:.6g}")
    switches = _count_branch_switches(spec, xs[:, 0, :], ps[:, 0, :])
    if switches:
        warnings.warn(f"tie-break selection switched branch {switches} time(s) along arc",
                      RuntimeWarning, stacklevel=2)
    # reverse to forward time: node j corresponds to tau = horizon - t
    x_path = xs[::-1, 0, :].copy()
    p_path = ps[::-1, 0, :].copy()
    times = np.linspace(0.0, horizon, n_steps + 1)
    h_trace = spec.hamiltonian(x_path, p_path)
    return DualArc(times, x_path, p_path, h_trace, tc.kind, tc, spec, target,
                   dt, switches)


def integrate_forward(arc: DualArc):
    """Re-integrate the arc forward from its start; returns terminal (x, p).

    Used by the time-reversal consistency diagnostics.
    """
    n_steps = len(arc.times) - 1
    dt = arc.horizon / n_steps
    xs, ps, alive = _rk4(arc.spec, arc.x_path[0], arc.p_path[0], n_steps, dt,
                         _forward_rhs)
    if alive[0] <= n_steps:
        raise CostateBlowupError("costate blowup during forward re-integration")
    return xs[-1, 0, :], ps[-1, 0, :]


@dataclass
class ExtremalField:
    arcs: list
    spec: object
    target: object
    horizon: float
    step: float
    sigma_tol: float
    errors: dict = field(default_factory=dict)
    _synth_cache: Optional[tuple] = field(default=None, repr=False)

    @property
    def match_radius(self):
        """2x the largest arc node spacing (synthesis acceptance radius)."""
        spacings = [a.node_spacing() for a in self.arcs if len(a.times) > 1]
        return 2.0 * max(spacings) if spacings else 0.0

    def normal_arcs(self):
        return [a for a in self.arcs if a.kind is ArcKind.NORMAL]

    def horizontal_arcs(self):
        return [a for a in self.arcs if a.kind is ArcKind.HORIZONTAL]

    def synthesis_nodes(self):
        """Concatenated nodes of all value-carrying arcs:
        (points, time-to-target, per-node match radius, arc index)."""
        if self._synth_cache is None:
            pts, t2t, rad, aidx = [], [], [], []
            for k, arc in enumerate(self.arcs):
                if arc.kind is not ArcKind.NORMAL or arc.tc.boundary.h_value <= 0.0 \
                        or len(arc.times) < 2:
                    continue
                pts.append(arc.x_path)
                t2t.append(arc.times[-1] - arc.times)
                rad.append(np.full(len(arc.times), 2.0 * arc.node_spacing()))
                aidx.append(np.full(len(arc.times), k, dtype=int))
            if pts:
                self._synth_cache = (np.concatenate(pts), np.concatenate(t2t),
                                     np.concatenate(rad), np.concatenate(aidx))
            else:
                self._synth_cache = (np.zeros((0, 2)), np.zeros(0), np.zeros(0),
                                     np.zeros(0, dtype=int))
        return self._synth_cache


def _detect_crossings(x_rev, boundary_is_loop):
    """First fold/collapse index per arc on the reversed (tau-increasing) paths.

    x_rev: (K, M+1, n).  Two detectors, either triggers: the sign of
    det[dX/dtau, dX/dtheta] leaving its boundary value (n = 2 only), and the
    distance to the nearest neighboring arc collapsing below a quarter of the
    boundary spacing.
    """
    count, m1, n = x_rev.shape
    cross = np.full(count, m1, dtype=int)
    if count < 3:
        return cross
    nxt = np.roll(np.arange(count), -1)
    prv = np.roll(np.arange(count), 1)
    vel = np.gradient(x_rev, axis=1)
    if n == 2:
        tang = x_rev[nxt] - x_rev[prv]
        det = vel[..., 0] * tang[..., 1] - vel[..., 1] * tang[..., 0]
        ref = det[:, 0][:, None]
        flip = det * ref < 0.0
        usable = np.abs(ref[:, 0]) > 1e-14
        if not boundary_is_loop:
            usable[[0, -1]] = False
        for k in np.flatnonzero(usable):
            hits = np.flatnonzero(flip[k])
            if hits.size:
                cross[k] = min(cross[k], int(hits[0]))
    d_next = np.linalg.norm(x_rev[nxt] - x_rev, axis=-1)
    d_prev = np.linalg.norm(x_rev[prv] - x_rev, axis=-1)
    nearest = np.minimum(d_next, d_prev)
    spacing0 = nearest[:, 0]
    ok = spacing0 > 0
    if not boundary_is_loop:
        ok[[0, -1]] = False
    for k in np.flatnonzero(ok):
        hits = np.flatnonzero(nearest[k] < spacing0[k] / 4.0)
        if hits.size:
            cross[k] = min(cross[k], int(hits[0]))
    return cross


def build_extremal_field(spec, target, boundary_count, horizon, step,
                         sigma_tol=SIGMA_TOL, tie_sign=1) -> ExtremalField:
    """One backward arc per boundary sample, with conjugate-crossing flags.

    Arcs whose costate leaves the admissible range are dropped and recorded in
    ``field.errors`` by boundary index; the rest of the field is unaffected.
    """
    if boundary_count < 8:
        raise ValueError("boundary_count must be at least 8")
    bps = target_mod.sample_boundary(target, boundary_count, spec=spec)
    tcs = [terminal_condition(bp, sigma_tol) for bp in bps]
    n_steps = int(np.ceil(horizon / step - 1e-12))
    dt = horizon / n_steps
    x0 = np.stack([tc.boundary.x for tc in tcs])
    p0 = np.stack([tc.p_terminal for tc in tcs])
    xs, ps, alive = _rk4(spec, x0, p0, n_steps, dt, _reverse_rhs, tie_sign)

    x_rev = np.swapaxes(xs, 0, 1)  # (K, M+1, n)
    p_rev = np.swapaxes(ps, 0, 1)
    loop = getattr(target, "chart_periodic", False) and not isinstance(target, HalfspaceTarget)
    cross = _detect_crossings(x_rev, loop)

    arcs, errors = [], {}
    taus = np.linspace(0.0, horizon, n_steps + 1)
    for k, tc in enumerate(tcs):
        if alive[k] == 0:
            errors[k] = "costate out of range at the terminal point"
            continue
        last = int(min(alive[k], n_steps))
        flagged = cross[k] <= last
        if flagged:
            last = int(cross[k])
        if alive[k] <= n_steps and not flagged:
            errors[k] = f"costate out of range at tau = {alive[k] * dt:.6g}"
        xpath = x_rev[k, : last + 1][::-1].copy()
        ppath = p_rev[k, : last + 1][::-1].copy()
        times = taus[last] - taus[: last + 1][::-1]
        h_trace = spec.hamiltonian(xpath, ppath)
        switches = _count_branch_switches(spec, xpath, ppath) if last > 0 else 0
        arcs.append(DualArc(times, xpath, ppath, h_trace, tc.kind, tc, spec,
                            target, dt, switches, crossing_flag=bool(flagged)))
    return ExtremalField(arcs, spec, target, horizon, dt, sigma_tol, errors)


# ---------------------------------------------------------------------------
# boundary characteristic flow
# ---------------------------------------------------------------------------

def characteristic_flow(spec, target, t, x_bar, step, tie_sign=1, return_path=False,
                        p0=None):
    """Flow the characteristic system from the boundary for duration t.

    Starts at X(0) = x_bar with P(0) = -grad g(x_bar) (or an explicit ``p0``)
    and returns X(t) (the full path when ``return_path``).  t = 0 returns
    x_bar exactly.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    if t < 0:
        raise ValueError("flow duration must be nonnegative")
    if t == 0.0:
        return (x_bar.copy(), np.array([x_bar])) if return_path else x_bar.copy()
    if p0 is None:
        p0 = -target.grad_g(x_bar)
    n_steps = max(1, int(np.ceil(t / step - 1e-12)))
    dt = t / n_steps
    xs, _, alive = _rk4(spec, x_bar, p0, n_steps, dt, _reverse_rhs, tie_sign)
    if alive[0] <= n_steps:
        raise CostateBlowupError(f"costate blowup during boundary flow at t = {alive[0] * dt:.6g}")
    if return_path:
        return xs[-1, 0, :], xs[:, 0, :]
    return xs[-1, 0, :]


def _tangent_frame(v):
    """Orthonormal vectors spanning the complement of v (n = 2 or 3)."""
    v = np.asarray(v, dtype=float)
    n = len(v)
    if n == 2:
        return [np.array([-v[1], v[0]]) / np.linalg.norm(v)]
    basis = []
    for e in np.eye(n):
        w = e - np.dot(e, v) / np.dot(v, v) * v
        for b in basis:
            w = w - np.dot(w, b) * b
        if np.linalg.norm(w) > 1e-8:
            basis.append(w / np.linalg.norm(w))
        if len(basis) == n - 1:
            break
    return basis


def flow_lattice(spec, target, sigma_points, horizon, step, both_branches=True,
                 branch_eps=1e-9, box=None):
    """Sample Phi((0, horizon] x Sigma) on a (time x point) lattice.

    At degenerate starts the velocity selection is set-valued; with
    ``both_branches`` the initial costate is nudged tangentially to the
    boundary in both directions so the lattice covers both selection
    branches (the set-valued flow-out the containment theorem bounds).
    Floating-point noise at an exact tie would otherwise pick one branch
    silently.  When ``box`` = (lo, hi) is given, each flow line is truncated
    at its first exit from the box, so a generous horizon simply covers the
    whole observation window.  Returns (points (M, n), max consecutive
    spacing along any kept flow segment).
    """
    if not sigma_points:
        return np.zeros((0, 0)), 0.0
    starts_x, starts_p = [], []
    for bp in sigma_points:
        grad = target.grad_g(bp.x)
        starts_x.append(bp.x)
        starts_p.append(-grad)
        if both_branches:
            gn = np.linalg.norm(grad)
            for tang in _tangent_frame(grad):
                for sgn in (+1.0, -1.0):
                    starts_x.append(bp.x)
                    starts_p.append(-grad + sgn * branch_eps * gn * tang)
    x0 = np.stack(starts_x)
    p0 = np.stack(starts_p)
    n_steps = max(1, int(np.ceil(horizon / step - 1e-12)))
    dt = horizon / n_steps
    xs, _, alive = _rk4(spec, x0, p0, n_steps, dt, _reverse_rhs)
    paths = np.swapaxes(xs, 0, 1)  # (B, M+1, n)

    pts, spacing = [], 0.0
    for b, path in enumerate(paths):
        last = int(min(alive[b], n_steps))
        path = path[: last + 1]
        if box is not None:
            lo = np.asarray(box[0], dtype=float)
            hi = np.asarray(box[1], dtype=float)
            outside = np.any((path < lo) | (path > hi), axis=-1)
            exits = np.flatnonzero(outside)
            if exits.size:
                path = path[: max(int(exits[0]), 1) + 1]
        if len(path) > 1:
            pts.append(path[1:])  # strictly positive times
            spacing = max(spacing, float(np.max(
                np.linalg.norm(np.diff(path, axis=0), axis=-1))))
    if not pts:
        return np.zeros((0, x0.shape[-1])), 0.0
    return np.concatenate(pts), spacing


# ---------------------------------------------------------------------------
# value synthesis
# ---------------------------------------------------------------------------

def synthesize_time(field: ExtremalField, query):
    """Minimum time to target read off the field of extremals.

    Returns (time, arc_index) or None when no value-carrying arc node lies
    within the match radius (2x that arc's node spacing).  Horizontal arcs
    carry no time values; arcs whose terminal Hamiltonian is negative are not
    optimal syntheses and are skipped too.  Queries inside the target return
    time zero.
    """
    query = np.asarray(query, dtype=float)
    if float(field.target.g(query)) <= 0.0:
        return 0.0, -1
    pts, t2t, rad, aidx = field.synthesis_nodes()
    if not len(pts):
        return None
    d = np.linalg.norm(pts - query, axis=-1)
    hit = d <= rad
    if not hit.any():
        return None
    j = np.flatnonzero(hit)[np.argmin(t2t[hit])]
    return float(t2t[j]), int(aidx[j])
