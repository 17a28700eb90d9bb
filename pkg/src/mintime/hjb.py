"""Grid oracle for the minimum time function.

A semi-Lagrangian fixed point for the dynamic programming principle:

    T(x) = min over v in F(x) of { tau + T(x + tau v) },   T = 0 on {g <= 0},

iterated with simultaneous (Jacobi) updates from T = t_max off the target.
The update is monotone non-increasing, so the iteration converges to the
discrete fixed point; multilinear interpolation keeps it stable and first
order.  Unreachable nodes keep the finite sentinel ``t_max`` and are excluded
through the reachability mask rather than by infinities.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics
from .errors import ConvergenceError


@dataclass(frozen=True)
class Grid:
    lo: tuple
    hi: tuple
    shape: tuple

    @property
    def dim(self):
        return len(self.lo)

    @property
    def spacing(self):
        return tuple((h - l) / (s - 1) for l, h, s in zip(self.lo, self.hi, self.shape))

    @property
    def h(self):
        return max(self.spacing)

    def axes(self):
        return [np.linspace(l, h, s) for l, h, s in zip(self.lo, self.hi, self.shape)]

    def node_coords(self):
        """All nodes, C-order (lexicographic by node index), shape (N, n)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def make_grid(box, h):
    """Grid over an axis-aligned box with spacing as close to h as divisors allow."""
    lo = tuple(float(b[0]) for b in box)
    hi = tuple(float(b[1]) for b in box)
    if h <= 0:
        raise ValueError("grid spacing must be positive")
    shape = tuple(int(round((b - a) / h)) + 1 for a, b in zip(lo, hi))
    if any(s < 16 for s in shape):
        raise ValueError("grid needs at least 16 nodes per axis")
    return Grid(lo, hi, shape)


def _interp_parts(grid: Grid, pts):
    """Corner indices/weights for multilinear interpolation at pts (..., n)."""
    pts = np.asarray(pts, dtype=float)
    n = grid.dim
    lo = np.asarray(grid.lo)
    hs = np.asarray(grid.spacing)
    shape = np.asarray(grid.shape)
    # non-finite query points count as out-of-box
    pts = np.where(np.isfinite(pts), pts, lo - 1.0)
    rel = (pts - lo) / hs
    inbox = np.all((rel >= -1e-12) & (rel <= shape - 1 + 1e-12), axis=-1)
    base = np.clip(np.floor(rel).astype(np.int64), 0, shape - 2)
    frac = np.clip(rel - base, 0.0, 1.0)
    strides = np.cumprod([1] + list(shape[::-1][:-1]))[::-1]  # C-order strides
    flat0 = np.tensordot(base, strides, axes=([-1], [0])).astype(np.int64)
    corners = []
    for bits in itertools.product((0, 1), repeat=n):
        off = int(np.dot(bits, strides))
        w = np.ones(pts.shape[:-1])
        for i, b in enumerate(bits):
            w = w * (frac[..., i] if b else 1.0 - frac[..., i])
        corners.append((flat0 + off, w))
    return corners, inbox


def interpolate(grid: Grid, values, pts, fill=np.nan):
    corners, inbox = _interp_parts(grid, pts)
    flat = np.asarray(values).ravel()
    out = np.zeros(np.asarray(pts).shape[:-1])
    for idx, w in corners:
        out += w * flat[np.where(inbox, idx, 0)]
    return np.where(inbox, out, fill)


@dataclass
class ValueField:
    grid: Grid
    t_values: np.ndarray           # shape grid.shape
    reachable: np.ndarray          # bool, shape grid.shape
    on_target: np.ndarray          # bool, shape grid.shape
    t_max: float
    tau: float
    iterations: int
    residual: float
    converged: bool
    ball_directions: int = 32
    _grad: Optional[tuple] = field(default=None, repr=False)

    @property
    def h(self):
        return self.grid.h

    def interpolate(self, pts, fill=np.nan):
        return interpolate(self.grid, self.t_values, pts, fill)

    def interp_valid(self, pts):
        """(values, valid): valid inside the box when every corner node with
        nonzero interpolation weight is reachable."""
        corners, inbox = _interp_parts(self.grid, pts)
        flat = self.t_values.ravel()
        reach = self.reachable.ravel()
        out = np.zeros(np.asarray(pts).shape[:-1])
        ok = inbox.copy()
        for idx, w in corners:
            safe = np.where(inbox, idx, 0)
            out += w * flat[safe]
            ok &= np.where(inbox, reach[safe] | (w == 0.0), False)
        return np.where(inbox, out, np.nan), ok

    def gradient_interp(self, pts, step=None):
        """Central differences of the interpolant; nan where any sample invalid."""
        pts = np.asarray(pts, dtype=float)
        if step is None:
            step = 0.5 * self.h
        out = np.zeros_like(pts)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for i in range(pts.shape[-1]):
            e = np.zeros(pts.shape[-1])
            e[i] = step
            hi, ok_hi = self.interp_valid(pts + e)
            lo, ok_lo = self.interp_valid(pts - e)
            out[..., i] = (hi - lo) / (2.0 * step)
            ok &= ok_hi & ok_lo
        out[~ok] = np.nan
        return out, ok


def solve(spec, target, grid: Grid, tau=None, cfl=0.5, tol=1e-10, max_iters=20000,
          t_max=None, ball_directions=32, on_sweep=None) -> ValueField:
    """Iterate the semi-Lagrangian operator to its fixed point.

    ``tau`` defaults to cfl * h / max-speed, keeping the foot of every
    characteristic within one cell.  Raises ConvergenceError when the sup-norm
    update is still above ``tol`` after ``max_iters`` sweeps, and ValueError
    when an explicit ``tau`` violates the CFL bound tau <= h / max-speed.
    """
    nodes = grid.node_coords()
    gvals = target.g(nodes).reshape(grid.shape)
    on_target = gvals <= 0.0
    if not on_target.any():
        raise ValueError("target does not intersect the grid box")

    vels = dynamics.discrete_velocities(spec, nodes, ball_directions)  # (N, k, n)
    vmax = float(np.max(dynamics.max_speed(spec, nodes)))
    hmin = min(grid.spacing)
    if vmax <= 0.0:
        raise ValueError("dynamics have zero speed everywhere on the grid")
    if tau is None:
        if not 0.0 < cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        tau = cfl * hmin / vmax
    elif tau > hmin / vmax + 1e-15:
        raise ValueError(f"tau = {tau:g} violates the CFL bound {hmin / vmax:g}")
    diam = float(np.linalg.norm(np.asarray(grid.hi) - np.asarray(grid.lo)))
    if t_max is None:
        t_max = max(10.0 * diam / vmax, 2.0 * diam)

    feet = nodes[:, None, :] + tau * vels
    corners, inbox = _interp_parts(grid, feet)
    corners = [(np.where(inbox, idx, 0).astype(np.int64), w) for idx, w in corners]

    t_flat = np.where(on_target.ravel(), 0.0, t_max)
    off_mask = ~on_target.ravel()
    iterations = 0
    residual = np.inf
    while iterations < max_iters:
        foot_vals = np.zeros(feet.shape[:-1])
        for idx, w in corners:
            foot_vals += w * t_flat[idx]
        foot_vals = np.where(inbox, foot_vals, t_max)
        cand = tau + np.min(foot_vals, axis=-1)
        new = np.where(off_mask, np.minimum(t_flat, np.minimum(cand, t_max)), 0.0)
        residual = float(np.max(t_flat - new))
        t_flat = new
        iterations += 1
        if on_sweep is not None:
            on_sweep(iterations, residual)
        if residual <= tol:
            break
    converged = residual <= tol
    if not converged:
        raise ConvergenceError(
            f"no fixed point after {iterations} sweeps (residual {residual:.3e})",
            residual=residual, iterations=iterations)

    t_arr = t_flat.reshape(grid.shape)
    reachable = t_arr <= t_max - max(tol, 1e-9)
    return ValueField(grid, t_arr, reachable, on_target, float(t_max), float(tau),
                      iterations, residual, converged, ball_directions)


def gradient_field(vf: ValueField):
    """Central differences on interior nodes whose full stencil is reachable.

    Returns (grad, valid) with grad shaped grid.shape + (n,).
    """
    n = vf.grid.dim
    hs = vf.grid.spacing
    grad = np.zeros(vf.grid.shape + (n,))
    valid = vf.reachable.copy()
    for i in range(n):
        up = np.roll(vf.t_values, -1, axis=i)
        dn = np.roll(vf.t_values, 1, axis=i)
        grad[..., i] = (up - dn) / (2.0 * hs[i])
        ok = np.roll(vf.reachable, -1, axis=i) & np.roll(vf.reachable, 1, axis=i)
        sl = [slice(None)] * n
        sl[i] = 0
        ok[tuple(sl)] = False
        sl[i] = -1
        ok[tuple(sl)] = False
        valid &= ok
    grad[~valid] = np.nan
    return grad, valid


def reachable_set_slice(vf: ValueField, t: float):
    """Boolean node mask {T <= t} (monotone in t)."""
    if t < 0 or t > vf.t_max:
        raise ValueError("slice time outside [0, t_max]")
    return vf.reachable & (vf.t_values <= t)
