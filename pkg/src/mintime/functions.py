"""Catalog of coefficient fields used to assemble dynamics and targets.

Every field evaluates on batched inputs: ``x`` has shape ``(..., n)`` and the
leading axes broadcast through values, gradients and Jacobians.  Scenario files
reference these by ``kind`` plus numeric parameters; indices in files are
1-based, constructors here take 0-based indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError


# ---------------------------------------------------------------------------
# scalar fields
# ---------------------------------------------------------------------------

class ScalarField:
    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantScalar(ScalarField):
    c: float

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.c))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)


@dataclass(frozen=True)
class NormSquared(ScalarField):
    """||x - center||^2."""

    center: tuple = ()

    def _delta(self, x):
        x = np.asarray(x, dtype=float)
        if len(self.center) == 0:
            return x
        return x - np.asarray(self.center, dtype=float)

    def value(self, x):
        d = self._delta(x)
        return np.sum(d * d, axis=-1)

    def grad(self, x):
        return 2.0 * self._delta(x)


@dataclass(frozen=True)
class CoordSquared(ScalarField):
    """x_i^2 for a fixed coordinate i."""

    index: int

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., self.index] ** 2

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., self.index] = 2.0 * x[..., self.index]
        return g


@dataclass(frozen=True)
class SqrtAbsCoord(ScalarField):
    """sqrt(|x_i|); not Lipschitz across x_i = 0 (hypothesis-failure probe)."""

    index: int

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.abs(x[..., self.index]))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        xi = x[..., self.index]
        g = np.zeros_like(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            gi = np.where(xi == 0.0, 0.0, np.sign(xi) * 0.5 / np.sqrt(np.abs(xi)))
        g[..., self.index] = gi
        return g


@dataclass(frozen=True)
class DistSquaredMin(ScalarField):
    """Squared distance to a finite point set, min over the set.

    The gradient uses the nearest point (first in list order on ties), which is
    the selection used everywhere the field is non-differentiable.
    """

    points: tuple = field(default=())

    def _pts(self):
        return np.asarray(self.points, dtype=float)

    def _dist2(self, x):
        x = np.asarray(x, dtype=float)
        d = x[..., None, :] - self._pts()          # (..., k, n)
        return np.sum(d * d, axis=-1)              # (..., k)

    def value(self, x):
        return np.min(self._dist2(x), axis=-1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        d2 = self._dist2(x)
        nearest = np.argmin(d2, axis=-1)
        y = self._pts()[nearest]
        return 2.0 * (x - y)


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

class VectorField:
    def value(self, x):
        raise NotImplementedError

    def jac(self, x):
        """Jacobian J[..., i, j] = d value_i / d x_j."""
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantVector(VectorField):
    v: tuple

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        return np.broadcast_to(v, x.shape).copy()

    def jac(self, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        return np.zeros(x.shape[:-1] + (n, n))


@dataclass(frozen=True)
class LinearMap(VectorField):
    """x -> A x for a constant matrix A."""

    matrix: tuple

    def _a(self):
        return np.asarray(self.matrix, dtype=float)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self._a().T

    def jac(self, x):
        x = np.asarray(x, dtype=float)
        a = self._a()
        return np.broadcast_to(a, x.shape[:-1] + a.shape).copy()


@dataclass(frozen=True)
class UnitRadial(VectorField):
    """(x - center)/||x - center||; undefined at the center itself."""

    center: tuple

    def _delta(self, x):
        x = np.asarray(x, dtype=float)
        return x - np.asarray(self.center, dtype=float)

    def value(self, x):
        d = self._delta(x)
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / r

    def jac(self, x):
        d = self._delta(x)
        r = np.linalg.norm(d, axis=-1)
        n = d.shape[-1]
        u = d / r[..., None]
        eye = np.broadcast_to(np.eye(n), d.shape[:-1] + (n, n))
        outer = u[..., :, None] * u[..., None, :]
        return (eye - outer) / r[..., None, None]


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _take(cfg: dict, key, where):
    if key not in cfg:
        raise ScenarioError(f"{where}: missing key '{key}'")
    return cfg[key]


def _check_known(cfg: dict, known, where):
    unknown = set(cfg) - set(known)
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}")


def scalar_from_config(cfg: dict, dim: int, where: str) -> ScalarField:
    kind = _take(cfg, "kind", where)
    if kind == "constant":
        _check_known(cfg, {"kind", "value"}, where)
        return ConstantScalar(float(_take(cfg, "value", where)))
    if kind == "norm_sq":
        _check_known(cfg, {"kind", "center"}, where)
        center = tuple(float(c) for c in cfg.get("center", ()))
        if center and len(center) != dim:
            raise ScenarioError(f"{where}: center has length {len(center)}, expected {dim}")
        return NormSquared(center)
    if kind == "coord_sq":
        _check_known(cfg, {"kind", "index"}, where)
        return CoordSquared(_index(cfg, dim, where))
    if kind == "sqrt_abs_coord":
        _check_known(cfg, {"kind", "index"}, where)
        return SqrtAbsCoord(_index(cfg, dim, where))
    if kind == "dist_sq_min":
        _check_known(cfg, {"kind", "points"}, where)
        pts = tuple(tuple(float(c) for c in p) for p in _take(cfg, "points", where))
        if not pts or any(len(p) != dim for p in pts):
            raise ScenarioError(f"{where}: points must be a nonempty list of length-{dim} vectors")
        return DistSquaredMin(pts)
    raise ScenarioError(f"{where}: unknown scalar function kind '{kind}'")


def vector_from_config(cfg: dict, dim: int, where: str) -> VectorField:
    kind = _take(cfg, "kind", where)
    if kind == "constant":
        _check_known(cfg, {"kind", "value"}, where)
        v = tuple(float(c) for c in _take(cfg, "value", where))
        if len(v) != dim:
            raise ScenarioError(f"{where}: value has length {len(v)}, expected {dim}")
        return ConstantVector(v)
    if kind == "basis":
        _check_known(cfg, {"kind", "index"}, where)
        v = [0.0] * dim
        v[_index(cfg, dim, where)] = 1.0
        return ConstantVector(tuple(v))
    if kind == "linear":
        _check_known(cfg, {"kind", "matrix"}, where)
        m = tuple(tuple(float(c) for c in row) for row in _take(cfg, "matrix", where))
        if len(m) != dim or any(len(row) != dim for row in m):
            raise ScenarioError(f"{where}: matrix must be {dim}x{dim}")
        return LinearMap(m)
    if kind == "unit_radial":
        _check_known(cfg, {"kind", "center"}, where)
        c = tuple(float(v) for v in _take(cfg, "center", where))
        if len(c) != dim:
            raise ScenarioError(f"{where}: center has length {len(c)}, expected {dim}")
        return UnitRadial(c)
    raise ScenarioError(f"{where}: unknown vector function kind '{kind}'")


def _index(cfg, dim, where):
    # scenario files use 1-based coordinate indices (matching x1..xn columns)
    raw = int(_take(cfg, "index", where))
    if not 1 <= raw <= dim:
        raise ScenarioError(f"{where}: index {raw} out of range 1..{dim}")
    return raw - 1
