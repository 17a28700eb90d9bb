"""Target sets S = {g <= 0} with smooth boundary geometry.

Each catalog target provides g, its gradient and Hessian (batched like the
dynamics evaluators), quasi-uniform boundary sampling, and - in 2-D - a
1-parameter boundary chart used to locate and refine the degenerate set
where the Hamiltonian vanishes at the inner normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import dynamics
from .errors import (
    ControllabilityError,
    DegenerateGradientError,
    OffBoundaryError,
    ProjectionError,
)

BOUNDARY_TOL = 1e-8
SIGMA_TOL = 1e-6
ANGLE_TOL = 1e-4
_GRAD_FLOOR = 1e-10


class TargetSet:
    dim: int
    chart_periodic = False

    def g(self, x):
        raise NotImplementedError

    def grad_g(self, x):
        raise NotImplementedError

    def hess_g(self, x):
        raise NotImplementedError

    def chart_range(self):
        """(lo, hi) of the boundary parameter, or None when no chart exists."""
        return None

    def chart_point(self, t):
        raise NotImplementedError

    def boundary_points(self, count):
        raise NotImplementedError


@dataclass(frozen=True)
class DiskTarget(TargetSet):
    """g(x) = ||x - center||^2 - radius^2 (a ball in any dimension)."""

    center: tuple
    radius: float

    @property
    def dim(self):
        return len(self.center)

    @property
    def chart_periodic(self):
        return self.dim == 2

    def _delta(self, x):
        return np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)

    def g(self, x):
        d = self._delta(x)
        return np.sum(d * d, axis=-1) - self.radius ** 2

    def grad_g(self, x):
        return 2.0 * self._delta(x)

    def hess_g(self, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        return np.broadcast_to(2.0 * np.eye(n), x.shape[:-1] + (n, n)).copy()

    def chart_range(self):
        if self.dim != 2:
            return None
        return (0.0, 2.0 * np.pi)

    def chart_point(self, t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(self.center, dtype=float)
        return c + self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)

    def boundary_points(self, count):
        if self.dim == 2:
            ang = 2.0 * np.pi * np.arange(count) / count
            return self.chart_point(ang)
        if self.dim == 3:
            dirs = dynamics.unit_directions(3, count)
            return np.asarray(self.center, dtype=float) + self.radius * dirs
        raise ValueError("boundary sampling implemented for n = 2, 3")


@dataclass(frozen=True)
class EllipseTarget(TargetSet):
    """g(x) = sum_i ((x_i - c_i)/a_i)^2 - 1."""

    center: tuple
    semi_axes: tuple

    @property
    def dim(self):
        return len(self.center)

    @property
    def chart_periodic(self):
        return self.dim == 2

    def _scaled(self, x):
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.semi_axes, dtype=float)
        return (np.asarray(x, dtype=float) - c) / a

    def g(self, x):
        z = self._scaled(x)
        return np.sum(z * z, axis=-1) - 1.0

    def grad_g(self, x):
        a = np.asarray(self.semi_axes, dtype=float)
        return 2.0 * self._scaled(x) / a

    def hess_g(self, x):
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.semi_axes, dtype=float)
        h = np.diag(2.0 / a ** 2)
        return np.broadcast_to(h, x.shape[:-1] + h.shape).copy()

    def chart_range(self):
        if self.dim != 2:
            return None
        return (0.0, 2.0 * np.pi)

    def chart_point(self, t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.semi_axes, dtype=float)
        return c + np.stack([a[0] * np.cos(t), a[1] * np.sin(t)], axis=-1)

    def boundary_points(self, count):
        if self.dim != 2:
            raise ValueError("ellipse boundary sampling implemented for n = 2")
        ang = 2.0 * np.pi * np.arange(count) / count
        return self.chart_point(ang)


@dataclass(frozen=True)
class HalfspaceTarget(TargetSet):
    """g(x) = <normal, x> - offset; the boundary chart spans +-extent."""

    normal: tuple
    offset: float
    extent: float = 6.0

    @property
    def dim(self):
        return len(self.normal)

    def _unit(self):
        a = np.asarray(self.normal, dtype=float)
        return a, np.linalg.norm(a)

    def g(self, x):
        a, _ = self._unit()
        return np.sum(np.asarray(x, dtype=float) * a, axis=-1) - self.offset

    def grad_g(self, x):
        x = np.asarray(x, dtype=float)
        a, _ = self._unit()
        return np.broadcast_to(a, x.shape).copy()

    def hess_g(self, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        return np.zeros(x.shape[:-1] + (n, n))

    def chart_range(self):
        if self.dim != 2:
            return None
        return (-self.extent, self.extent)

    def chart_point(self, t):
        t = np.asarray(t, dtype=float)
        a, an = self._unit()
        base = a * self.offset / an ** 2
        tang = np.array([-a[1], a[0]]) / an
        return base + t[..., None] * tang

    def boundary_points(self, count):
        if self.dim != 2:
            raise ValueError("halfspace boundary sampling implemented for n = 2")
        lo, hi = self.chart_range()
        return self.chart_point(np.linspace(lo, hi, count))


@dataclass(frozen=True)
class BoundaryPoint:
    """A boundary sample with its unit inner normal and H at that normal."""

    x: np.ndarray
    xi: np.ndarray
    h_value: Optional[float] = None
    param: Optional[float] = None


def inner_normal(target: TargetSet, x, boundary_tol=BOUNDARY_TOL):
    """Unit inner normal -grad g/||grad g|| at a point on the boundary."""
    x = np.asarray(x, dtype=float)
    gval = float(target.g(x))
    if abs(gval) > boundary_tol:
        raise OffBoundaryError(f"|g(x)| = {abs(gval):.3e} exceeds boundary tolerance")
    grad = target.grad_g(x)
    gn = float(np.linalg.norm(grad))
    if gn < _GRAD_FLOOR:
        raise DegenerateGradientError("grad g vanishes at the requested boundary point")
    return -grad / gn


def project_to_boundary(target: TargetSet, x, boundary_tol=BOUNDARY_TOL, max_iter=60):
    """Newton iteration along grad g from x until |g| <= boundary_tol."""
    y = np.asarray(x, dtype=float).copy()
    for _ in range(max_iter):
        gval = float(target.g(y))
        if abs(gval) <= boundary_tol:
            return y
        grad = target.grad_g(y)
        gn2 = float(np.dot(grad, grad))
        if gn2 < _GRAD_FLOOR ** 2:
            raise ProjectionError("grad g vanished during boundary projection")
        y = y - gval * grad / gn2
    raise ProjectionError(f"projection did not converge, |g| = {abs(float(target.g(y))):.3e}")


def boundary_point_at(target, spec, x, boundary_tol=BOUNDARY_TOL, param=None) -> BoundaryPoint:
    xi = inner_normal(target, x, boundary_tol)
    h = float(spec.hamiltonian(x, xi)) if spec is not None else None
    return BoundaryPoint(np.asarray(x, dtype=float), xi, h, param)


def sample_boundary(target: TargetSet, count, spec=None, boundary_tol=BOUNDARY_TOL):
    """Quasi-uniform boundary samples with inner normals (count >= 4)."""
    if count < 4:
        raise ValueError("count must be at least 4")
    pts = target.boundary_points(count)
    rng = target.chart_range()
    params = None
    if rng is not None and not isinstance(target, HalfspaceTarget):
        params = 2.0 * np.pi * np.arange(count) / count
    elif rng is not None:
        params = np.linspace(rng[0], rng[1], count)
    out = []
    for i, x in enumerate(pts):
        x = project_to_boundary(target, x, boundary_tol)
        par = float(params[i]) if params is not None else None
        out.append(boundary_point_at(target, spec, x, boundary_tol, par))
    return out


# ---------------------------------------------------------------------------
# degenerate boundary set (zeros of H at the inner normal)
# ---------------------------------------------------------------------------

def _chart_h(target, spec, t):
    x = target.chart_point(t)
    grad = target.grad_g(x)
    gn = np.linalg.norm(grad, axis=-1)
    xi = -grad / gn[..., None]
    return x, xi, spec.hamiltonian(x, xi)


def _bisect_crossing(f, a, b, iters=80):
    fa = f(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = f(m)
        if fa * fm <= 0.0:
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def _golden_min(f, a, b, iters=90):
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def find_sigma_set(target: TargetSet, spec, resolution=4096, sigma_tol=SIGMA_TOL,
                   require_nonneg=True):
    """Boundary points where H(x, inner normal) vanishes (within tolerance).

    Scans the boundary chart, brackets the sublevel runs of H below the scaled
    tolerance, refines run edges by bisection of H - tol, and returns one point
    per touching minimum or two edge points per genuine sign change.  With
    ``require_nonneg`` (the default) a sampled H < -1e-9 raises, since zeros
    are only guaranteed to be minima when 0 in F(x) on the boundary.
    """
    rng = target.chart_range()
    if rng is None:
        return _sigma_dense(target, spec, resolution, sigma_tol, require_nonneg)
    lo, hi = rng
    periodic = target.chart_periodic
    m = int(resolution)
    ts = np.linspace(lo, hi, m, endpoint=not periodic)
    _, _, hv = _chart_h(target, spec, ts)
    if require_nonneg and float(np.min(hv)) < -1e-9:
        raise ControllabilityError(
            f"H(x, xi) = {float(np.min(hv)):.3e} < 0 on the boundary (0 not in F(x))")
    tol = sigma_tol * max(1.0, float(np.max(np.abs(hv))))
    below = hv <= tol

    if not below.any():
        return []
    if below.all():
        t_star = float(ts[int(np.argmin(hv))])
        return [_sigma_point(target, spec, t_star)]

    def f(t):
        return float(_chart_h(target, spec, np.atleast_1d(t))[2][0]) - tol

    # group consecutive below-samples into runs (wrapping when periodic)
    idx = np.flatnonzero(below)
    runs = []
    start = prev = idx[0]
    for i in idx[1:]:
        if i == prev + 1:
            prev = i
            continue
        runs.append((start, prev))
        start = prev = i
    runs.append((start, prev))
    if periodic and len(runs) > 1 and runs[0][0] == 0 and runs[-1][1] == m - 1:
        first = runs.pop(0)
        s, _ = runs.pop()
        runs.append((s - m, first[1]))  # negative start marks the wrap

    step = ts[1] - ts[0]
    span = hi - lo
    points = []
    for s, e in runs:
        t_s = lo + s * step if s < 0 else ts[s]
        t_e = ts[e]
        a = _bisect_crossing(f, t_s - step, t_s)
        b = _bisect_crossing(f, t_e + step, t_e)
        def h_at(t):
            return float(_chart_h(target, spec, np.atleast_1d(t))[2][0])

        interior = _golden_min(h_at, a, b if b > a else b + span)
        if h_at(interior) < -tol:
            # genuine sign change: the two zeros of h bracket the negative dip
            points.append(_sigma_point(target, spec, _bisect_crossing(h_at, a - step, interior)))
            points.append(_sigma_point(target, spec, _bisect_crossing(h_at, b + step, interior)))
        else:
            points.append(_sigma_point(target, spec, interior))
    return points


def _sigma_point(target, spec, t):
    lo, hi = target.chart_range()
    if target.chart_periodic:
        t = lo + (t - lo) % (hi - lo)
    x, xi, hv = _chart_h(target, spec, np.atleast_1d(float(t)))
    return BoundaryPoint(x[0], xi[0], float(hv[0]), float(t))


def _sigma_dense(target, spec, resolution, sigma_tol, require_nonneg):
    """Chartless fallback (n = 3): dense scan for local minima below tolerance."""
    pts = target.boundary_points(max(resolution, 512))
    grad = target.grad_g(pts)
    xi = -grad / np.linalg.norm(grad, axis=-1, keepdims=True)
    hv = spec.hamiltonian(pts, xi)
    if require_nonneg and float(np.min(hv)) < -1e-9:
        raise ControllabilityError("H(x, xi) < 0 on the boundary (0 not in F(x))")
    tol = sigma_tol * max(1.0, float(np.max(np.abs(hv))))
    out = []
    for i in np.flatnonzero(hv <= tol):
        out.append(BoundaryPoint(pts[i], xi[i], float(hv[i]), None))
    return out


# ---------------------------------------------------------------------------
# nondegeneracy of the boundary Hamiltonian (transversality of its critica)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NondegeneracyEntry:
    x: np.ndarray
    in_sigma: bool
    angle: float            # angle between w and grad g (radians); nan in sigma
    w_norm: float
    violation: bool


@dataclass(frozen=True)
class NondegeneracyReport:
    entries: tuple
    angle_tol: float

    @property
    def violations(self):
        return [e for e in self.entries if e.violation]

    @property
    def checked(self):
        return [e for e in self.entries if not e.in_sigma]


def check_nondegeneracy(target: TargetSet, spec, points, angle_tol=ANGLE_TOL,
                        sigma_points=None, sigma_match_radius=1e-4) -> NondegeneracyReport:
    """Flag boundary points where w = grad_x H - hess g . grad_p H (taken at
    p = -grad g) is parallel to grad g; such points are constrained critical
    points of x -> H(x, -grad g(x)) on the boundary.

    Points within ``sigma_match_radius`` of a supplied degenerate-set point are
    skipped (the condition only quantifies over the boundary minus that set).
    """
    sig = np.asarray([bp.x for bp in sigma_points], dtype=float) if sigma_points else None
    entries = []
    for bp in points:
        x = bp.x
        if sig is not None and sig.size and np.min(np.linalg.norm(sig - x, axis=-1)) <= sigma_match_radius:
            entries.append(NondegeneracyEntry(x, True, float("nan"), float("nan"), False))
            continue
        grad = target.grad_g(x)
        gn = float(np.linalg.norm(grad))
        if gn < _GRAD_FLOOR:
            raise DegenerateGradientError("grad g vanishes at a checked point")
        p = -grad
        w = spec.x_gradient(x, p) - target.hess_g(x) @ spec.velocity(x, p)
        wn = float(np.linalg.norm(w))
        if wn < 1e-12:
            # w = 0 is parallel to grad g with lambda = 0
            entries.append(NondegeneracyEntry(x, False, 0.0, wn, True))
            continue
        cosang = abs(float(np.dot(w, grad))) / (wn * gn)
        angle = float(np.arccos(np.clip(cosang, -1.0, 1.0)))
        entries.append(NondegeneracyEntry(x, False, angle, wn, angle <= angle_tol))
    return NondegeneracyReport(tuple(entries), angle_tol)
