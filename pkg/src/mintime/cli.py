"""Scenario-driven command line: solve, analyze, verify, report.

Exit codes: 0 success, 2 parse error (scenario TOML or trajectory CSV),
3 validation error, 4 solver non-convergence, 5 missing inputs.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, artifacts
from . import characteristics as chars
from . import dynamics, hjb
from . import scenario as scen_mod
from . import target as target_mod
from .errors import (CapExceededError, ControllabilityError, ConvergenceError,
                     ScenarioError)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_SOLVER = 4
EXIT_MISSING = 5

REACHABILITY_CAVEAT = ("near the boundary of the reachable set the grid oracle cannot "
                       "distinguish a discontinuity of T from steep growth; boundary-adjacent "
                       "values are reported as-is")


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _resolve_scenario(args):
    p = Path(args.scenario)
    if not p.exists():
        p = scen_mod.builtin_scenario_path(args.scenario)
    scen = scen_mod.load_scenario(p)
    if args.grid_h is not None:
        if args.grid_h <= 0:
            raise ScenarioError("scenario: 'grid_h' must be positive")
        scen.grid_h = float(args.grid_h)
    if args.seed is not None:
        scen.seed = int(args.seed)
        scen.knobs["seed"] = int(args.seed)
    return scen


def _validate_geometry(scen, grid):
    lo, hi = scen.box_arrays
    target = scen.build_target()
    pts = target.boundary_points(32)
    margin = grid.h
    if np.any(pts < lo + margin) or np.any(pts > hi - margin):
        raise ScenarioError("scenario: target boundary must lie strictly inside the box")


def _reload_value_field(scen, manifest, out_dir):
    grid = scen.build_grid()
    tvals, reach = artifacts.read_value_field_csv(out_dir / "value_field.csv", grid)
    target = scen.build_target()
    on_target = target.g(grid.node_coords()).reshape(grid.shape) <= 0.0
    meta = manifest["solver"]
    return hjb.ValueField(grid, tvals, reach, on_target, meta["t_max"], meta["tau"],
                          meta["iterations"], meta["residual"], True,
                          meta["ball_directions"])


def _reload_arcs(scen, out_dir):
    spec = scen.build_spec()
    target = scen.build_target()
    fm = artifacts.read_json(out_dir / "field_manifest.json")
    arcs = []
    for entry in fm["arcs"]:
        data = artifacts.read_arc_csv(out_dir / entry["file"], scen.dim)
        bp = target_mod.BoundaryPoint(np.asarray(entry["x_bar"]), np.asarray(entry["xi"]),
                                      entry["h_value"], entry.get("param"))
        kind = chars.ArcKind(entry["kind"])
        tc = chars.TerminalCondition(bp, kind, np.asarray(entry["p_terminal"]))
        arcs.append(chars.DualArc(
            data["times"], data["x_path"], data["p_path"], data["h_trace"], kind,
            tc, spec, target, fm["step"], entry["branch_switches"],
            entry["crossing_flag"]))
    field = chars.ExtremalField(arcs, spec, target, fm["horizon"], fm["step"],
                                fm["sigma_tol"], {int(k): v for k, v in fm["errors"].items()})
    return field, fm


def cmd_solve(args) -> int:
    scen = _resolve_scenario(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = scen.build_spec()
    target = scen.build_target()
    grid = scen.build_grid()
    _validate_geometry(scen, grid)
    knobs = scen.knobs
    stages = {}
    written = []

    t0 = time.perf_counter()
    hyp = dynamics.check_hypotheses(spec, scen.box_arrays,
                                    knobs["hypothesis_samples"], scen.seed)
    stages["hypotheses"] = time.perf_counter() - t0
    artifacts.write_json(out_dir / "hypotheses.json", hyp.to_dict())
    written.append("hypotheses.json")
    _say(args, f"hypotheses: F {'pass' if hyp.hypotheses_F_pass else 'FAIL'}, "
               f"H {'pass' if hyp.hypotheses_H_pass else 'FAIL'} "
               f"(K={hyp.lipschitz_F:.3g}, c0={hyp.semiconvexity_c0:.3g}, "
               f"K1={hyp.grad_p_lipschitz_K1:.3g}, K2={hyp.growth_K2:.3g})")

    t0 = time.perf_counter()
    t_max = knobs["t_max"] if knobs["t_max"] > 0 else None
    vf = hjb.solve(spec, target, grid, cfl=knobs["cfl"], tol=knobs["hjb_tol"],
                   max_iters=knobs["hjb_max_iters"], t_max=t_max,
                   ball_directions=scen.ball_directions())
    stages["hjb_solve"] = time.perf_counter() - t0
    artifacts.write_value_field_csv(out_dir / "value_field.csv", vf)
    written.append("value_field.csv")
    _say(args, f"grid solve: {vf.iterations} sweeps, residual {vf.residual:.2e}, "
               f"{int(np.sum(vf.reachable))}/{vf.t_values.size} reachable nodes")

    t0 = time.perf_counter()
    field = chars.build_extremal_field(spec, target, knobs["boundary_count"],
                                       scen.horizon, knobs["arc_step"],
                                       knobs["sigma_tol"])
    stages["extremal_field"] = time.perf_counter() - t0
    arc_dir = out_dir / "arcs"
    arc_dir.mkdir(exist_ok=True)
    entries = []
    for k, arc in enumerate(field.arcs):
        fname = f"arcs/arc_{k:04d}.csv"
        artifacts.write_arc_csv(out_dir / fname, arc)
        written.append(fname)
        bp = arc.tc.boundary
        entries.append({
            "index": k, "file": fname, "kind": arc.kind.value,
            "h_value": bp.h_value, "x_bar": bp.x, "xi": bp.xi, "param": bp.param,
            "p_terminal": arc.tc.p_terminal, "crossing_flag": arc.crossing_flag,
            "branch_switches": arc.branch_switches, "n_nodes": len(arc.times),
        })
    artifacts.write_json(out_dir / "field_manifest.json", {
        "horizon": field.horizon, "step": field.step, "sigma_tol": field.sigma_tol,
        "boundary_count": knobs["boundary_count"], "match_radius": field.match_radius,
        "errors": field.errors, "arcs": entries,
    })
    written.append("field_manifest.json")
    flagged = sum(a.crossing_flag for a in field.arcs)
    _say(args, f"extremal field: {len(field.arcs)} arcs "
               f"({len(field.horizontal_arcs())} horizontal, {flagged} crossing-flagged, "
               f"{len(field.errors)} failed)")

    manifest = {
        "command": "solve",
        "toolkit_version": __version__,
        "scenario": scen.echo(),
        "defaults": scen.knobs,
        "solver": {"t_max": vf.t_max, "tau": vf.tau, "iterations": vf.iterations,
                   "residual": vf.residual, "ball_directions": vf.ball_directions},
        "stages": stages,
        "outputs": artifacts.manifest_outputs(out_dir, written),
    }
    artifacts.write_json(out_dir / "manifest.json", manifest)
    _say(args, f"wrote {len(written) + 1} files to {out_dir}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    scen = _resolve_scenario(args)
    out_dir = Path(args.out)
    for req in ("manifest.json", "value_field.csv", "field_manifest.json", "hypotheses.json"):
        if not (out_dir / req).exists():
            print(f"error: missing input {out_dir / req} (run solve first)", file=sys.stderr)
            return EXIT_MISSING
    manifest = artifacts.read_json(out_dir / "manifest.json")
    spec = scen.build_spec()
    target = scen.build_target()
    vf = _reload_value_field(scen, manifest, out_dir)
    field, fm = _reload_arcs(scen, out_dir)
    knobs = scen.knobs
    stages = {}
    rng = np.random.default_rng(scen.seed + 1)

    t0 = time.perf_counter()
    constancy = []
    arcs = field.arcs
    pick = np.unique(np.linspace(0, len(arcs) - 1, min(24, len(arcs))).astype(int))
    for k in pick:
        rep = analysis.hamiltonian_constancy_report(arcs[k], knobs["constancy_refinements"])
        constancy.append({"arc": int(k), "kind": rep.kind.value,
                          "max_deviation": rep.max_deviation,
                          "mean_deviation": rep.mean_deviation,
                          "terminal_value": rep.terminal_value,
                          "observed_order": rep.observed_order})
    stages["constancy"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cert_entries = []
    normal = [a for a in field.normal_arcs() if a.tc.boundary.h_value > 0 and len(a.times) > 4]
    horizontal = [a for a in field.horizontal_arcs() if len(a.times) > 4]
    lo_box, hi_box = scen.box_arrays
    for group, kind in ((normal[:8], "proximal"), (horizontal[:4], "horizontal")):
        for arc in group:
            # certify where the grid oracle resolves T: inside the box and
            # above the interface layer of ~2 cells
            t2t = arc.times[-1] - arc.times
            inbox = np.all((arc.x_path >= lo_box + vf.h)
                           & (arc.x_path <= hi_box - vf.h), axis=-1)
            eligible = np.flatnonzero(inbox & (t2t >= 2.0 * vf.h))
            if not len(eligible):
                continue
            js = eligible[np.unique(np.linspace(0, len(eligible) - 1, 5).astype(int))]
            for j in js:
                entry = {"arc_boundary_param": arc.tc.boundary.param, "kind": kind,
                         "time_to_target": arc.time_to_target(j)}
                try:
                    cert = analysis.certify_supergradient(
                        vf, arc.x_path[j], arc.p_path[j], kind,
                        knobs["cert_radius"], knobs["cert_count"],
                        knobs["cert_cap"], scen.seed)
                    entry["c5"] = cert.c5
                except (CapExceededError, ValueError) as exc:
                    entry["failure"] = str(exc)
                cert_entries.append(entry)
    n_prox = [e for e in cert_entries if e["kind"] == "proximal"]
    prox_rate = (sum("c5" in e for e in n_prox) / len(n_prox)) if n_prox else None
    stages["certificates"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sigma_note = None
    try:
        sigma = target_mod.find_sigma_set(target, spec, knobs["sigma_resolution"],
                                          knobs["sigma_tol"])
    except ControllabilityError as exc:
        sigma = None
        sigma_note = str(exc)
    nd_points = target_mod.sample_boundary(target, 64, spec=spec)
    nd = target_mod.check_nondegeneracy(target, spec, nd_points, knobs["angle_tol"],
                                        sigma_points=sigma or [])
    stages["sigma_set"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    vfs = [vf]
    for level in range(1, knobs["refine_levels"]):
        fine_grid = scen.build_grid(scen.grid_h / 2 ** level)
        vfs.append(hjb.solve(spec, target, fine_grid, cfl=knobs["cfl"],
                             tol=knobs["hjb_tol"], max_iters=knobs["hjb_max_iters"],
                             t_max=vf.t_max, ball_directions=scen.ball_directions()))
    cloud, ratios = analysis.detect_nonlipschitz(vfs, knobs["detect_base_threshold"],
                                                 knobs["detect_growth"])
    stages["detection"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    flow = None
    if sigma is not None:
        lo, hi = scen.box_arrays
        flow_horizon = max(scen.horizon, 3.0 * float(np.linalg.norm(hi - lo)))
        flow = analysis.flowout_check(cloud, sigma, spec, target, flow_horizon,
                                      step=knobs["arc_step"], box=(lo, hi))
    dim_est = None
    if len(cloud) >= 50:
        extent = float(np.max(np.ptp(cloud, axis=0)))
        if extent > 0:
            scales = [extent / 3.0 * 2.0 ** -j for j in range(5)]
            dim_est = analysis.box_counting_dimension(cloud, scales)
    matches = []
    if sigma and len(cloud):
        sig_xy = np.stack([bp.x for bp in sigma])
        pick_pts = cloud[np.unique(np.linspace(0, len(cloud) - 1,
                                               min(16, len(cloud))).astype(int))]
        for pt in pick_pts:
            end = analysis.descend_to_target(spec, target, vfs[-1], pt)
            matches.append(float(np.min(np.linalg.norm(sig_xy - end, axis=-1))))
    singular = analysis.SingularityReport(cloud, ratios, sigma, flow, dim_est, matches)
    stages["flowout"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lo, hi = scen.box_arrays
    shrink = 0.25 * (hi - lo)
    sphere_allowance = 2.0 * vf.h  # scheme-error scale subtracted from the quotients
    sphere = analysis.exterior_sphere_scan(vf, (lo + shrink, hi - shrink),
                                           n_points=120, seed=scen.seed + 2,
                                           value_error=sphere_allowance)
    stages["exterior_sphere"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    verdicts = []
    for arc in normal[:3]:
        if len(arc.times) < 5:
            continue
        try:
            v = analysis.verify_optimality(spec, vf, arc.times, arc.x_path, arc.p_path,
                                           ham_tol=knobs["ham_tol"],
                                           cert_radius=knobs["cert_radius"],
                                           cap=knobs["cert_cap"], seed=scen.seed)
            verdicts.append({"arc_boundary_param": arc.tc.boundary.param,
                             "optimal": v.optimal, "failed_condition": v.failed_condition})
        except ValueError as exc:
            verdicts.append({"arc_boundary_param": arc.tc.boundary.param,
                             "optimal": False, "failed_condition": f"error: {exc}"})
    stages["verdicts"] = time.perf_counter() - t0

    report = {
        "scenario": scen.echo(),
        "tolerances": {k: knobs[k] for k in ("boundary_tol", "sigma_tol", "angle_tol",
                                             "ham_tol", "cert_radius", "cert_count",
                                             "cert_cap", "detect_base_threshold",
                                             "detect_growth")},
        "hypotheses": artifacts.read_json(out_dir / "hypotheses.json"),
        "constancy": constancy,
        "certificates": {"entries": cert_entries, "proximal_success_rate": prox_rate},
        "sigma": {
            "points": [{"x": bp.x, "h_value": bp.h_value, "param": bp.param}
                       for bp in (sigma or [])] if sigma is not None else None,
            "note": sigma_note,
            "nondegeneracy_violations": len(nd.violations),
            "nondegeneracy_checked": len(nd.checked),
        },
        "singularity": singular.to_dict(),
        "exterior_sphere": {**sphere.to_dict(), "value_error_allowance": sphere_allowance},
        "verdicts": verdicts,
        "caveats": [REACHABILITY_CAVEAT],
    }
    artifacts.write_json(out_dir / "analysis.json", report)

    lines = [
        f"scenario {scen.name} (n={scen.dim}, h={scen.grid_h}, seed={scen.seed})",
        f"hypotheses: F {'pass' if report['hypotheses']['hypotheses_F_pass'] else 'FAIL'}, "
        f"H {'pass' if report['hypotheses']['hypotheses_H_pass'] else 'FAIL'}",
        f"constancy: worst normal-arc deviation "
        f"{max((c['max_deviation'] for c in constancy if c['kind'] == 'normal'), default=float('nan')):.3e}",
        f"certificates: proximal success rate "
        f"{prox_rate if prox_rate is not None else 'n/a'}",
        f"sigma set: {'unavailable (' + sigma_note + ')' if sigma is None else str(len(sigma)) + ' points'}",
        f"singular cloud: {len(cloud)} points"
        + (f", flow-out containment {flow.max_distance:.3g}" if flow and len(cloud) else "")
        + (f", box dimension {dim_est:.2f}" if dim_est is not None else ""),
        f"exterior sphere: min theta {sphere.min_theta:.3g} over {len(sphere.points)} points",
        f"verdicts: {sum(v['optimal'] for v in verdicts)}/{len(verdicts)} synthesized arcs optimal",
        f"caveat: {REACHABILITY_CAVEAT}",
    ]
    with open(out_dir / "summary.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        _say(args, line)

    artifacts.write_json(out_dir / "analyze_manifest.json", {
        "command": "analyze",
        "toolkit_version": __version__,
        "scenario": scen.echo(),
        "defaults": scen.knobs,
        "stages": stages,
        "outputs": artifacts.manifest_outputs(out_dir, ["analysis.json", "summary.txt"]),
    })
    return EXIT_OK


def cmd_verify(args) -> int:
    scen = _resolve_scenario(args)
    out_dir = Path(args.out)
    for req in ("manifest.json", "value_field.csv"):
        if not (out_dir / req).exists():
            print(f"error: missing input {out_dir / req} (run solve first)", file=sys.stderr)
            return EXIT_MISSING
    times, xs, ps = artifacts.read_trajectory_csv(args.trajectory, scen.dim)
    manifest = artifacts.read_json(out_dir / "manifest.json")
    spec = scen.build_spec()
    vf = _reload_value_field(scen, manifest, out_dir)
    verdict = analysis.verify_optimality(spec, vf, times, xs, ps,
                                         ham_tol=scen.knobs["ham_tol"],
                                         cert_radius=scen.knobs["cert_radius"],
                                         cap=scen.knobs["cert_cap"], seed=scen.seed)
    artifacts.write_json(out_dir / "verdict.json", {
        "scenario": scen.echo(),
        "trajectory": str(args.trajectory),
        "optimal": verdict.optimal,
        "failed_condition": verdict.failed_condition,
        "costate_source": verdict.costate_source,
        "checks": verdict.checks,
    })
    _say(args, "verdict: optimal" if verdict.optimal
         else f"verdict: not-verified at {verdict.failed_condition}")
    return EXIT_OK


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    if not (out_dir / "manifest.json").exists():
        print(f"error: no manifest in {out_dir}", file=sys.stderr)
        return EXIT_MISSING
    manifest = artifacts.read_json(out_dir / "manifest.json")
    print(f"scenario {manifest['scenario']['name']} "
          f"(toolkit {manifest['toolkit_version']})")
    for entry in manifest["outputs"]:
        print(f"  {entry['path']}  sha256:{entry['sha256'][:16]}")
    summary = out_dir / "summary.txt"
    if summary.exists():
        print(summary.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(prog="mintime",
                                     description="minimum-time toolkit runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_scenario in (("solve", cmd_solve, True),
                                     ("analyze", cmd_analyze, True),
                                     ("verify", cmd_verify, True),
                                     ("report", cmd_report, False)):
        p = sub.add_parser(name)
        if needs_scenario:
            p.add_argument("--scenario", required=True,
                           help="scenario file path or bundled scenario name")
            p.add_argument("--grid-h", type=float, default=None)
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--quiet", action="store_true")
        if name == "verify":
            p.add_argument("--trajectory", required=True, help="trajectory CSV path")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Exception as exc:  # tomllib/tomli decode errors have no common base
        if type(exc).__name__ == "TOMLDecodeError":
            print(f"parse error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        raise


if __name__ == "__main__":
    sys.exit(main())
