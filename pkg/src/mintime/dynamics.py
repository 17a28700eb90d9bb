"""Dynamics families represented through their Hamiltonian.

A differential inclusion ``xdot in F(x)`` with convex compact values is fully
described by the support function H(x, p) = sup_{v in F(x)} <p, v>.  Each
family below carries closed forms for H, for the maximizing velocity
grad_p H (a selection from F(x)), and for a selection of the x-gradient:

    Ball        F(x) = c(x) + r(x) * unit ball      H = <p, c> + r ||p||
    DriftBall   F(x) = c(x) + r  * unit ball        H = <p, c> + r ||p||
    Polytope    F(x) = hull{v_1(x) .. v_m(x)}       H = max_i <p, v_i>
    Segment     F(x) = psi(x) * [-n(x), n(x)]       H = psi |<p, n>|

All evaluators are batched: ``x`` and ``p`` broadcast over leading axes with
trailing dimension n.  Where the maximizer is not unique (Polytope ties,
Segment at <p, n> = 0) a deterministic tie-break selection is returned:
the lexicographically smallest maximizing vertex, resp. +psi*n, controlled
by ``tie_sign`` so callers can walk the other branch of the selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ZeroCostateError
from .functions import ConstantScalar, ConstantVector, ScalarField, VectorField

_P_FLOOR = 0.0  # exact zero costate is the error condition


def _norm(v):
    return np.linalg.norm(v, axis=-1)


def _check_costate(p):
    if np.any(_norm(p) == _P_FLOOR):
        raise ZeroCostateError("velocity selection requested at p = 0")


@dataclass(frozen=True)
class Ball:
    """Moving/deforming ball: center field c(x), radius field r(x) >= 0."""

    center: VectorField
    radius: ScalarField

    def hamiltonian(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        return np.sum(p * self.center.value(x), axis=-1) + self.radius.value(x) * _norm(p)

    def velocity(self, x, p, tie_sign=1):
        _check_costate(p)
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        unit = p / _norm(p)[..., None]
        return self.center.value(x) + self.radius.value(x)[..., None] * unit

    def x_gradient(self, x, p, tie_sign=1):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        _check_costate(p)
        jc = self.center.jac(x)                      # (..., n, n)
        lin = np.einsum("...ij,...i->...j", jc, p)
        return lin + _norm(p)[..., None] * self.radius.grad(x)

    def max_speed(self, x):
        return _norm(self.center.value(x)) + self.radius.value(x)

    def discrete_velocities(self, x, directions):
        x = np.asarray(x, dtype=float)
        c = self.center.value(x)[..., None, :]
        r = self.radius.value(x)[..., None, None]
        return c + r * directions

    def velocity_in_set(self, x, v, tol=1e-9):
        return _norm(v - self.center.value(x)) <= self.radius.value(x) + tol

    def branch_id(self, x, p):
        return None


@dataclass(frozen=True)
class DriftBall:
    """Drift field c(x) plus a fixed-radius ball of admissible corrections."""

    drift: VectorField
    radius: float

    def _ball(self):
        return Ball(self.drift, ConstantScalar(self.radius))

    def hamiltonian(self, x, p):
        return self._ball().hamiltonian(x, p)

    def velocity(self, x, p, tie_sign=1):
        return self._ball().velocity(x, p, tie_sign)

    def x_gradient(self, x, p, tie_sign=1):
        return self._ball().x_gradient(x, p, tie_sign)

    def max_speed(self, x):
        return self._ball().max_speed(x)

    def discrete_velocities(self, x, directions):
        return self._ball().discrete_velocities(x, directions)

    def velocity_in_set(self, x, v, tol=1e-9):
        return self._ball().velocity_in_set(x, v, tol)

    def branch_id(self, x, p):
        return None


@dataclass(frozen=True)
class Polytope:
    """Convex hull of finitely many vertex fields v_1(x) .. v_m(x)."""

    vertices: tuple  # tuple[VectorField, ...]

    def _verts(self, x):
        return np.stack([v.value(x) for v in self.vertices], axis=-2)  # (..., m, n)

    def _support_values(self, x, p):
        verts = self._verts(x)
        return verts, np.einsum("...mi,...i->...m", verts, np.asarray(p, dtype=float))

    def hamiltonian(self, x, p):
        _, vals = self._support_values(x, p)
        return np.max(vals, axis=-1)

    def _select(self, x, p, tie_sign):
        """Index of the maximizing vertex, ties broken lexicographically.

        tie_sign=+1 picks the lexicographically smallest maximizing vertex,
        tie_sign=-1 the largest.
        """
        verts, vals = self._support_values(x, p)
        top = np.max(vals, axis=-1, keepdims=True)
        cand = vals >= top - 1e-12 * (1.0 + np.abs(top))
        sign = 1.0 if tie_sign >= 0 else -1.0
        n = verts.shape[-1]
        for j in range(n):
            coord = np.where(cand, sign * verts[..., j], np.inf)
            best = np.min(coord, axis=-1, keepdims=True)
            cand = cand & (coord == best)
        return np.argmax(cand, axis=-1), verts

    def velocity(self, x, p, tie_sign=1):
        _check_costate(p)
        idx, verts = self._select(x, p, tie_sign)
        return np.take_along_axis(verts, idx[..., None, None], axis=-2)[..., 0, :]

    def x_gradient(self, x, p, tie_sign=1):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        _check_costate(p)
        idx, _ = self._select(x, p, tie_sign)
        jacs = np.stack([v.jac(x) for v in self.vertices], axis=-3)  # (..., m, n, n)
        jsel = np.take_along_axis(jacs, idx[..., None, None, None], axis=-3)[..., 0, :, :]
        return np.einsum("...ij,...i->...j", jsel, p)

    def max_speed(self, x):
        return np.max(_norm(self._verts(x)), axis=-1)

    def discrete_velocities(self, x, directions=None):
        # vertices plus midpoints of consecutive edges (vertex order as given)
        verts = self._verts(x)
        mids = 0.5 * (verts + np.roll(verts, -1, axis=-2))
        return np.concatenate([verts, mids], axis=-2)

    def velocity_in_set(self, x, v, tol=1e-9):
        # hull membership via the support test <v, u> <= H(x, u): exact for
        # interior points, catches exterior points up to direction resolution
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        dirs = unit_directions(v.shape[-1], 256 if v.shape[-1] == 2 else 512)
        excess = np.einsum("...i,ki->...k", v, dirs) \
            - np.stack([self.hamiltonian(x, u) for u in dirs], axis=-1)
        return np.max(excess, axis=-1) <= tol

    def vertex_identity(self, x, v, tol=1e-9):
        """Whether v coincides with one of the vertex fields at x."""
        verts = self._verts(x)
        d = _norm(verts - np.asarray(v, dtype=float)[..., None, :])
        return np.min(d, axis=-1) <= tol

    def branch_id(self, x, p):
        idx, _ = self._select(x, p, 1)
        return idx


@dataclass(frozen=True)
class Segment:
    """F(x) = psi(x) * [-n(x), n(x)] for a unit direction field n."""

    direction: VectorField
    scale: ScalarField

    def hamiltonian(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        return self.scale.value(x) * np.abs(np.sum(p * self.direction.value(x), axis=-1))

    def _sign(self, x, p, tie_sign):
        s = np.sign(np.sum(np.asarray(p, dtype=float) * self.direction.value(x), axis=-1))
        fill = 1.0 if tie_sign >= 0 else -1.0
        return np.where(s == 0.0, fill, s)

    def velocity(self, x, p, tie_sign=1):
        _check_costate(p)
        x = np.asarray(x, dtype=float)
        s = self._sign(x, p, tie_sign)
        return (self.scale.value(x) * s)[..., None] * self.direction.value(x)

    def x_gradient(self, x, p, tie_sign=1):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        _check_costate(p)
        nvec = self.direction.value(x)
        pn = np.sum(p * nvec, axis=-1)
        s = self._sign(x, p, tie_sign)
        jn = self.direction.jac(x)
        lin = np.einsum("...ij,...i->...j", jn, p)
        return np.abs(pn)[..., None] * self.scale.grad(x) \
            + (self.scale.value(x) * s)[..., None] * lin

    def max_speed(self, x):
        return self.scale.value(x)

    def discrete_velocities(self, x, directions=None):
        x = np.asarray(x, dtype=float)
        ext = self.scale.value(x)[..., None] * self.direction.value(x)
        return np.stack([ext, -ext, np.zeros_like(ext)], axis=-2)

    def velocity_in_set(self, x, v, tol=1e-9):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        nvec = self.direction.value(x)
        lam = np.sum(v * nvec, axis=-1)
        resid = v - lam[..., None] * nvec
        return (_norm(resid) <= tol) & (np.abs(lam) <= self.scale.value(x) + tol)

    def branch_id(self, x, p):
        return self._sign(x, p, 1).astype(int)


MultifunctionSpec = Union[Ball, DriftBall, Polytope, Segment]


# ---------------------------------------------------------------------------
# module-level evaluators
# ---------------------------------------------------------------------------

def hamiltonian(spec: MultifunctionSpec, x, p):
    """H(x, p) = sup over F(x) of <p, v>; finite for all inputs, 0 at p = 0."""
    return spec.hamiltonian(x, p)


def grad_p(spec: MultifunctionSpec, x, p, tie_sign=1):
    """The maximizing velocity in F(x): <grad_p(x,p), p> = H(x,p)."""
    return spec.velocity(x, p, tie_sign)


def grad_x(spec: MultifunctionSpec, x, p, tie_sign=1):
    """Analytic selection from the x-subgradient of H."""
    return spec.x_gradient(x, p, tie_sign)


def grad_x_fd(spec: MultifunctionSpec, x, p, step_scale=1e-5):
    """Central-difference x-gradient, step step_scale*(1+||x||) per point."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    delta = step_scale * (1.0 + _norm(x))
    out = np.zeros(np.broadcast_shapes(x.shape, p.shape))
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = 1.0
        hi = spec.hamiltonian(x + delta[..., None] * e, p)
        lo = spec.hamiltonian(x - delta[..., None] * e, p)
        out[..., i] = (hi - lo) / (2.0 * delta)
    return out


def max_speed(spec: MultifunctionSpec, x):
    """max over F(x) of ||v||; enters CFL conditions and the growth bound."""
    return spec.max_speed(x)


def unit_directions(n: int, count: int) -> np.ndarray:
    """Quasi-uniform unit vectors: roots of unity (n=2), Fibonacci sphere (n=3)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if n == 3:
        k = np.arange(count) + 0.5
        phi = np.arccos(1.0 - 2.0 * k / count)
        theta = np.pi * (1.0 + np.sqrt(5.0)) * k
        return np.stack(
            [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
            axis=-1,
        )
    raise ValueError(f"no direction catalog for dimension {n}")


def discrete_velocities(spec: MultifunctionSpec, x, ball_directions=32):
    """Boundary discretization of F(x) used by the grid solver."""
    x = np.asarray(x, dtype=float)
    if isinstance(spec, (Ball, DriftBall)):
        dirs = unit_directions(x.shape[-1], ball_directions)
        return spec.discrete_velocities(x, dirs)
    return spec.discrete_velocities(x)


# ---------------------------------------------------------------------------
# hypothesis checking
# ---------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    """Sampled estimates of the regularity constants and pass flags.

    Estimates come from coarse-scale difference quotients; each pass flag is a
    stability test of the estimate against a fresh, finer-scale sample set
    (failed stability = the quotient keeps growing, i.e. no finite constant).
    """

    lipschitz_F: float
    semiconvexity_c0: float
    grad_p_lipschitz_K1: float
    growth_K2: float
    lipschitz_pass: bool
    semiconvexity_pass: bool
    grad_p_lipschitz_pass: bool
    growth_pass: bool
    sample_count: int
    seed: int

    @property
    def hypotheses_F_pass(self) -> bool:
        # (F1) nonempty/convex/compact holds by construction for the catalog
        return self.lipschitz_pass

    @property
    def hypotheses_H_pass(self) -> bool:
        return self.semiconvexity_pass and self.grad_p_lipschitz_pass

    def to_dict(self) -> dict:
        return {
            "lipschitz_F": self.lipschitz_F,
            "semiconvexity_c0": self.semiconvexity_c0,
            "grad_p_lipschitz_K1": self.grad_p_lipschitz_K1,
            "growth_K2": self.growth_K2,
            "lipschitz_pass": self.lipschitz_pass,
            "semiconvexity_pass": self.semiconvexity_pass,
            "grad_p_lipschitz_pass": self.grad_p_lipschitz_pass,
            "growth_pass": self.growth_pass,
            "hypotheses_F_pass": self.hypotheses_F_pass,
            "hypotheses_H_pass": self.hypotheses_H_pass,
            "sample_count": self.sample_count,
            "seed": self.seed,
        }


_STABILITY_MARGIN = 1.25
_ZERO_SLACK = 1e-9


def _pair_ratios(spec, x1, x2, ps):
    """Max over costates of Lipschitz/semiconvexity/velocity quotients per pair."""
    d = _norm(x2 - x1)
    keep = d > 1e-13
    x1, x2, d = x1[keep], x2[keep], d[keep]
    if x1.size == 0:
        z = np.zeros(0)
        return z, z, z
    mid = 0.5 * (x1 + x2)
    k_best = np.zeros(len(x1))
    c_best = np.zeros(len(x1))
    k1_best = np.zeros(len(x1))
    for p in ps:
        pn = np.linalg.norm(p)
        h1 = spec.hamiltonian(x1, p)
        h2 = spec.hamiltonian(x2, p)
        hm = spec.hamiltonian(mid, p)
        k_best = np.maximum(k_best, np.abs(h1 - h2) / (pn * d))
        c_best = np.maximum(c_best, 2.0 * (2.0 * hm - h1 - h2) / (pn * d * d))
        dv = _norm(spec.velocity(x1, p) - spec.velocity(x2, p))
        k1_best = np.maximum(k1_best, dv / d)
    return k_best, np.maximum(c_best, 0.0), k1_best


def _sample_pairs(rng, spec, lo, hi, count, scales):
    """Pairs at controlled separations: random, axis-slab and gradient-aligned."""
    n = len(lo)
    diam = float(np.linalg.norm(hi - lo))
    xs, ys = [], []
    base = rng.uniform(lo, hi, size=(count, n))
    for s in scales:
        u = rng.normal(size=(count, n))
        u /= _norm(u)[..., None]
        x2 = np.clip(base + (s * diam) * u, lo, hi)
        xs.append(base)
        ys.append(x2)
        # slab probes: one endpoint on each coordinate hyperplane through 0
        # (catches quotients that diverge on coordinate-aligned sets)
        for i in range(n):
            if lo[i] < 0.0 < hi[i]:
                a = rng.uniform(lo, hi, size=(4, n))
                a[:, i] = s * diam / 2.0
                b = a.copy()
                b[:, i] = 0.0
                xs.append(a)
                ys.append(b)
    # gradient-aligned short probes
    p_probe = rng.normal(size=n)
    p_probe /= np.linalg.norm(p_probe)
    g = spec.x_gradient(base, np.broadcast_to(p_probe, base.shape))
    gn = _norm(g)
    ok = gn > 1e-12
    if np.any(ok):
        step = min(scales) * diam
        xs.append(base[ok])
        ys.append(np.clip(base[ok] + step * g[ok] / gn[ok, None], lo, hi))
    return np.concatenate(xs), np.concatenate(ys)


def check_hypotheses(spec: MultifunctionSpec, box, sample_count=400, seed=0) -> HypothesisReport:
    """Estimate the regularity constants of the family by sampling on a box.

    ``box`` is a pair (lo, hi) of length-n arrays.  The check is sampled, not
    certified: constants are difference-quotient maxima over the estimate set,
    and the pass flags require the maxima over a fresh finer-scale set not to
    exceed them by more than a 25% margin.
    """
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    if not np.all(hi > lo):
        raise ValueError("sampling box is degenerate")
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    n = len(lo)
    rng = np.random.default_rng(seed)

    ps = [rng.normal(size=n) * m for m in (1.0, 0.3, 3.0)]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        ps.extend([e, -e])

    half = sample_count // 2
    coarse = [2.0 ** -j for j in range(2, 8)]
    fine = [2.0 ** -j for j in range(10, 14)]
    mid_scales = [2.0 ** -j for j in range(8, 11)]

    xe, ye = _sample_pairs(rng, spec, lo, hi, half, coarse)
    k_e, c_e, k1_e = _pair_ratios(spec, xe, ye, ps)
    xv, yv = _sample_pairs(rng, spec, lo, hi, half, fine)
    k_v, _, k1_v = _pair_ratios(spec, xv, yv, ps)
    # semiconvexity quotients divide by d^2: keep the verify scales above the
    # rounding floor instead of reusing the finest pair set
    xm, ym = _sample_pairs(rng, spec, lo, hi, half, mid_scales)
    _, c_v, _ = _pair_ratios(spec, xm, ym, ps)

    def estimate(est, ver):
        e = float(np.max(est)) if est.size else 0.0
        v = float(np.max(ver)) if ver.size else 0.0
        ok = v <= e * _STABILITY_MARGIN + _ZERO_SLACK
        return max(e, v), ok

    k, k_ok = estimate(k_e, k_v)
    c0, c_ok = estimate(c_e, c_v)
    k1, k1_ok = estimate(k1_e, k1_v)

    pts = np.concatenate([rng.uniform(lo, hi, size=(half, n)), xe, xv])
    ratios = spec.max_speed(pts) / (1.0 + _norm(pts))
    cut = len(ratios) // 2
    k2, k2_ok = estimate(ratios[:cut], ratios[cut:])

    return HypothesisReport(
        lipschitz_F=k,
        semiconvexity_c0=c0,
        grad_p_lipschitz_K1=k1,
        growth_K2=k2,
        lipschitz_pass=k_ok,
        semiconvexity_pass=c_ok,
        grad_p_lipschitz_pass=k1_ok,
        growth_pass=k2_ok,
        sample_count=sample_count,
        seed=seed,
    )
