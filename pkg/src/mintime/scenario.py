"""Scenario files: TOML with nested sections for dynamics and target.

Unknown keys anywhere are errors (fail-loud configuration); every numeric
default lives in the DEFAULTS table below and is echoed into run manifests.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import dynamics, functions, hjb
from .errors import ScenarioError
from .target import DiskTarget, EllipseTarget, HalfspaceTarget

DEFAULTS = {
    "seed": 20240,
    "boundary_tol": 1e-8,
    "sigma_tol": 1e-6,
    "angle_tol": 1e-4,
    "ham_tol": 1e-3,
    "hjb_tol": 1e-10,
    "hjb_max_iters": 20000,
    "cfl": 0.5,
    "ball_directions": 32,
    "ball_directions_3d": 92,
    "boundary_count": 256,
    "arc_step": 0.01,
    "cert_radius": 0.2,
    "cert_count": 500,
    "cert_cap": 1e6,
    "detect_base_threshold": 3.0,
    "detect_growth": 1.2,
    "refine_levels": 2,
    "sigma_resolution": 4096,
    "constancy_refinements": 1,
    "hypothesis_samples": 400,
    "t_max": 0.0,  # 0 = automatic (scaled from the box diameter)
}

_TOP_KEYS = {"name", "dimension", "seed", "box", "grid_h", "horizon",
             "dynamics", "target", "tolerances", "numerics"}
_TOL_KEYS = {"boundary_tol", "sigma_tol", "angle_tol", "ham_tol"}
_NUM_KEYS = set(DEFAULTS) - _TOL_KEYS - {"seed"}


@dataclass
class Scenario:
    name: str
    dim: int
    box: tuple              # ((lo, hi), ...) per axis
    grid_h: float
    horizon: float
    seed: int
    dynamics_cfg: dict
    target_cfg: dict
    knobs: dict             # DEFAULTS overlaid with scenario overrides
    path: str = ""

    def build_spec(self) -> dynamics.MultifunctionSpec:
        return _build_spec(self.dynamics_cfg, self.dim)

    def build_target(self):
        return _build_target(self.target_cfg, self.dim)

    def build_grid(self, h=None) -> hjb.Grid:
        return hjb.make_grid(self.box, self.grid_h if h is None else h)

    @property
    def box_arrays(self):
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return lo, hi

    def ball_directions(self):
        return self.knobs["ball_directions"] if self.dim == 2 else self.knobs["ball_directions_3d"]

    def echo(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dim,
            "box": [list(b) for b in self.box],
            "grid_h": self.grid_h,
            "horizon": self.horizon,
            "seed": self.seed,
            "dynamics": self.dynamics_cfg,
            "target": self.target_cfg,
        }


def _require(cfg, key, where):
    if key not in cfg:
        raise ScenarioError(f"{where}: missing required key '{key}'")
    return cfg[key]


def _positive(value, key, where):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: '{key}' must be a number") from None
    if not np.isfinite(v) or v <= 0.0:
        raise ScenarioError(f"{where}: '{key}' must be positive (got {value!r})")
    return v


def _build_spec(cfg: dict, dim: int):
    family = _require(cfg, "family", "dynamics")
    known = {
        "ball": {"family", "center", "radius"},
        "drift_ball": {"family", "drift", "radius"},
        "polytope": {"family", "vertices"},
        "segment": {"family", "direction", "scale"},
    }
    if family not in known:
        raise ScenarioError(f"dynamics: unknown family '{family}' "
                            f"(expected one of {sorted(known)})")
    unknown = set(cfg) - known[family]
    if unknown:
        raise ScenarioError(f"dynamics: unknown key(s) {sorted(unknown)}")
    if family == "ball":
        center = functions.vector_from_config(_require(cfg, "center", "dynamics"), dim,
                                              "dynamics.center")
        radius = functions.scalar_from_config(_require(cfg, "radius", "dynamics"), dim,
                                              "dynamics.radius")
        return dynamics.Ball(center, radius)
    if family == "drift_ball":
        drift = functions.vector_from_config(_require(cfg, "drift", "dynamics"), dim,
                                             "dynamics.drift")
        return dynamics.DriftBall(drift, _positive(_require(cfg, "radius", "dynamics"),
                                                   "radius", "dynamics"))
    if family == "polytope":
        raw = _require(cfg, "vertices", "dynamics")
        if not isinstance(raw, list) or len(raw) < 2:
            raise ScenarioError("dynamics.vertices: need at least two vertices")
        verts = []
        for i, v in enumerate(raw):
            if not isinstance(v, list) or len(v) != dim:
                raise ScenarioError(f"dynamics.vertices[{i}]: expected a length-{dim} vector")
            verts.append(functions.ConstantVector(tuple(float(c) for c in v)))
        return dynamics.Polytope(tuple(verts))
    direction = functions.vector_from_config(_require(cfg, "direction", "dynamics"), dim,
                                             "dynamics.direction")
    if isinstance(direction, functions.ConstantVector):
        v = np.asarray(direction.v, dtype=float)
        nv = float(np.linalg.norm(v))
        if nv < 1e-12:
            raise ScenarioError("dynamics.direction: zero vector")
        direction = functions.ConstantVector(tuple(v / nv))
    scale = functions.scalar_from_config(_require(cfg, "scale", "dynamics"), dim,
                                         "dynamics.scale")
    return dynamics.Segment(direction, scale)


def _vector(cfg, key, dim, where):
    raw = _require(cfg, key, where)
    if not isinstance(raw, list) or len(raw) != dim:
        raise ScenarioError(f"{where}: '{key}' must be a length-{dim} vector")
    return tuple(float(c) for c in raw)


def _build_target(cfg: dict, dim: int):
    kind = _require(cfg, "kind", "target")
    known = {
        "disk": {"kind", "center", "radius"},
        "ellipse": {"kind", "center", "semi_axes"},
        "halfspace": {"kind", "normal", "offset", "extent"},
    }
    if kind not in known:
        raise ScenarioError(f"target: unknown kind '{kind}' (expected one of {sorted(known)})")
    unknown = set(cfg) - known[kind]
    if unknown:
        raise ScenarioError(f"target: unknown key(s) {sorted(unknown)}")
    if kind == "disk":
        return DiskTarget(_vector(cfg, "center", dim, "target"),
                          _positive(_require(cfg, "radius", "target"), "radius", "target"))
    if kind == "ellipse":
        axes = _vector(cfg, "semi_axes", dim, "target")
        if any(a <= 0 for a in axes):
            raise ScenarioError("target: semi_axes must be positive")
        return EllipseTarget(_vector(cfg, "center", dim, "target"), axes)
    normal = _vector(cfg, "normal", dim, "target")
    if float(np.linalg.norm(normal)) < 1e-12:
        raise ScenarioError("target: normal must be nonzero")
    offset = float(_require(cfg, "offset", "target"))
    extent = _positive(cfg.get("extent", 6.0), "extent", "target")
    return HalfspaceTarget(normal, offset, extent)


def parse_scenario(data: dict, path="") -> Scenario:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"scenario: unknown key(s) {sorted(unknown)}")
    name = _require(data, "name", "scenario")
    dim = int(_require(data, "dimension", "scenario"))
    if dim < 1:
        raise ScenarioError("scenario: dimension must be >= 1")
    raw_box = _require(data, "box", "scenario")
    if not isinstance(raw_box, list) or len(raw_box) != dim:
        raise ScenarioError(f"scenario: box must list {dim} [lo, hi] pairs")
    box = []
    for i, pair in enumerate(raw_box):
        if not isinstance(pair, list) or len(pair) != 2 or not pair[0] < pair[1]:
            raise ScenarioError(f"scenario: box[{i}] must be [lo, hi] with lo < hi")
        box.append((float(pair[0]), float(pair[1])))
    grid_h = _positive(_require(data, "grid_h", "scenario"), "grid_h", "scenario")
    horizon = _positive(_require(data, "horizon", "scenario"), "horizon", "scenario")
    seed = int(data.get("seed", DEFAULTS["seed"]))

    knobs = dict(DEFAULTS)
    knobs["seed"] = seed
    tols = data.get("tolerances", {})
    unknown = set(tols) - _TOL_KEYS
    if unknown:
        raise ScenarioError(f"tolerances: unknown key(s) {sorted(unknown)}")
    knobs.update({k: float(v) for k, v in tols.items()})
    nums = data.get("numerics", {})
    unknown = set(nums) - _NUM_KEYS
    if unknown:
        raise ScenarioError(f"numerics: unknown key(s) {sorted(unknown)}")
    for k, v in nums.items():
        knobs[k] = type(DEFAULTS[k])(v)

    scen = Scenario(
        name=str(name), dim=dim, box=tuple(box), grid_h=grid_h, horizon=horizon,
        seed=seed, dynamics_cfg=dict(_require(data, "dynamics", "scenario")),
        target_cfg=dict(_require(data, "target", "scenario")), knobs=knobs, path=path,
    )
    # build both factories now so validation errors surface at load time
    scen.build_spec()
    scen.build_target()
    return scen


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)  # tomllib.TOMLDecodeError -> parse error
    return parse_scenario(data, str(path))


def builtin_scenario_path(name: str) -> Path:
    """Resolve a bundled scenario by bare name (e.g. 'eikonal_disk')."""
    p = Path(__file__).parent / "scenarios" / f"{name}.toml"
    if not p.exists():
        raise ScenarioError(f"no bundled scenario named '{name}'")
    return p
