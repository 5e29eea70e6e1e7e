"""Scenario-driven batch front end.

``nullflow run scenario.yaml`` parses a scenario document, builds the
pipeline (metric → seed → congruence → measures), executes the requested
tasks in order and writes a YAML report plus plot-ready CSV tables with 17
significant digits (byte-identical across runs of the same scenario and
version).

Exit codes: 0 all verdicts consistent with their declared expectations,
1 a violation-class verdict occurred, 2 inconclusive or an unmet
expectation, 3 input or runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .checks import (converging_test, hawking_check, nec_scan, penrose_bound,
                     witness_violation)
from .congruence import SeedSurface, build_congruence
from .dsl import DslError, backend_name, parse
from .geometry import (GeometryError, MetricSpec, builtin_catalog,
                       builtin_metric, make_metric)
from .transport import convexity_report, make_measure

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INCONCLUSIVE = 2
EXIT_ERROR = 3

_VIOLATION_TOKENS = {"violated", "non_monotone", "bound_violated"}
_INCONCLUSIVE_TOKENS = {"inconclusive", "incomplete", "not_found"}


class ScenarioError(ValueError):
    """Configuration problem, reported with the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _fmt(x):
    return f"{float(x):.17g}"


def _need(cfg, key, path, kind=None):
    if key not in cfg:
        raise ScenarioError(f"{path}.{key}", "missing required field")
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        raise ScenarioError(f"{path}.{key}",
                            f"expected {kind.__name__}, got {type(val).__name__}")
    return val


def load_scenario(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError(str(path), f"not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ScenarioError(str(path), "scenario must be a mapping")
    return cfg


def _build_metric(cfg):
    mcfg = _need(cfg, "metric", "scenario", dict)
    weight = cfg.get("weight")
    if "builtin" in mcfg:
        try:
            metric = builtin_metric(mcfg["builtin"], **(mcfg.get("params") or {}))
        except (GeometryError, DslError, TypeError) as exc:
            raise ScenarioError("metric", str(exc)) from exc
    else:
        dim = _need(mcfg, "dimension", "metric", int)
        comps = _need(mcfg, "components", "metric", list)
        try:
            metric = make_metric(dim, comps, timelike=mcfg.get("timelike"),
                                 chart_domain=mcfg.get("chart_domain"),
                                 name=mcfg.get("name", "user"))
        except (GeometryError, DslError) as exc:
            raise ScenarioError("metric.components", str(exc)) from exc
    if weight is not None:
        try:
            metric.weight = parse(str(weight), metric.dim)
            metric._cache.pop("weight", None)
        except DslError as exc:
            raise ScenarioError("weight", str(exc)) from exc
    return metric


def _build_seed(cfg, metric):
    scfg = cfg.get("seed")
    if scfg is None:
        return None
    comps = _need(scfg, "components", "seed", list)
    if len(comps) != metric.dim:
        raise ScenarioError("seed.components",
                            f"need {metric.dim} chart components")
    domain = _need(scfg, "domain", "seed", list)
    resolution = _need(scfg, "resolution", "seed", list)
    for i, ab in enumerate(domain):
        if not (isinstance(ab, (list, tuple)) and len(ab) == 2
                and ab[0] < ab[1]):
            raise ScenarioError(f"seed.domain[{i}]",
                                "expected an increasing pair [lo, hi]")
    try:
        return SeedSurface.from_sources(
            [str(c) for c in comps], domain, resolution,
            rule=scfg.get("rule", "gauss"),
            orientation=scfg.get("orientation", "outer"),
            outward=scfg.get("outward"))
    except (GeometryError, DslError) as exc:
        raise ScenarioError("seed", str(exc)) from exc


def _t_grid(cfg):
    gcfg = cfg.get("t_grid") or {}
    if "values" in gcfg:
        grid = np.asarray([float(v) for v in gcfg["values"]])
    else:
        grid = np.linspace(0.0, 1.0, int(gcfg.get("points", 33)))
    if grid.size < 2 or grid[0] != 0.0 or grid[-1] != 1.0 \
            or np.any(np.diff(grid) <= 0):
        raise ScenarioError("t_grid",
                            "grid must increase from 0 to 1 inside [0, 1]")
    return grid


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Runner:
    def __init__(self, cfg, outdir):
        self.cfg = cfg
        self.outdir = outdir
        self.metric = _build_metric(cfg)
        self.seed = _build_seed(cfg, self.metric)
        self.grid = _t_grid(cfg)
        tol = cfg.get("tolerances") or {}
        self.rtol = float(tol.get("ode_rtol", 1e-11))
        self.atol = float(tol.get("ode_atol", 1e-13))
        self.y_tol = float(tol.get("y_tol", 1e-10))
        self.gap_tol = float(tol.get("gap_tol", 1e-8))
        self.span = float(cfg.get("span", 1.0))
        self.t_end = float(cfg.get("t_end", 1.0))
        self.workers = int(os.environ.get("NULLFLOW_WORKERS", "1"))
        self._congruence = None
        self._trapped = None

    def congruence(self):
        if self._congruence is None:
            if self.seed is None:
                raise ScenarioError("seed", "this task needs a seed surface")
            self._congruence = build_congruence(
                self.metric, self.seed, span=self.span, t_end=self.t_end,
                rtol=self.rtol, atol=self.atol, y_tol=self.y_tol)
        return self._congruence

    def measure(self):
        mcfg = self.cfg.get("measure") or {"kind": "uniform"}
        kind = mcfg.get("kind", "uniform")
        if kind == "uniform":
            return make_measure(self.congruence())
        if kind == "density":
            return make_measure(self.congruence(), str(_need(mcfg, "expr",
                                                             "measure")))
        raise ScenarioError("measure.kind", f"unknown kind {kind!r}")

    # -- tasks ---------------------------------------------------------------

    def run_task(self, i, tcfg):
        kind = _need(tcfg, "kind", f"tasks[{i}]")
        handler = getattr(self, f"task_{kind}", None)
        if handler is None:
            raise ScenarioError(f"tasks[{i}].kind", f"unknown task {kind!r}")
        return handler(i, tcfg)

    def task_curvature_scan(self, i, tcfg):
        box = _need(tcfg, "box", f"tasks[{i}]", list)
        counts = _need(tcfg, "counts", f"tasks[{i}]", list)
        n_prime = float(_need(tcfg, "Nprime", f"tasks[{i}]"))
        rep = nec_scan(self.metric, box, counts, n_prime,
                       extra_random_directions=int(
                           tcfg.get("random_directions", 4)),
                       rng_seed=int(tcfg.get("rng_seed", 0)),
                       gap_tol=float(tcfg.get("gap_tol", self.gap_tol)),
                       workers=self.workers)
        d = self.metric.dim
        _write_csv(self.outdir / f"scan_{i}.csv",
                   [f"x{j}" for j in range(d)] + ["min_gap"],
                   [list(pt) + [gap] for pt, gap in rep.point_minima])
        return rep.verdict, {
            "min_gap": float(rep.min_gap),
            "argmin_point": [float(v) for v in rep.argmin_point],
            "argmin_direction": [float(v) for v in rep.argmin_direction],
            "points": rep.n_points, "directions": rep.n_directions,
            "Nprime": n_prime, "gap_tol": rep.gap_tol,
        }

    def task_convexity(self, i, tcfg):
        n_prime = float(tcfg.get("Nprime", (self.cfg.get("Nprime") or [2.0])[0]))
        measure = self.measure()
        rep = convexity_report(measure, n_prime, t_grid=self.grid)
        self._write_entropy_tables(i, rep, measure)
        info = {
            "Nprime": n_prime,
            "slack_tol": None if np.isnan(rep.slack_tol) else float(rep.slack_tol),
            "min_slack": None if rep.verdict == "incomplete"
            else float(rep.min_slack),
            "S0": None if rep.verdict == "incomplete"
            else float(rep.entropies[0]),
            "S1": None if rep.verdict == "incomplete"
            else float(rep.entropies[-1]),
            "assumptions": list(rep.assumptions),
        }
        if rep.incompleteness:
            info["incompleteness"] = rep.incompleteness
        return rep.verdict, info

    def _write_entropy_tables(self, i, rep, measure):
        if rep.verdict == "incomplete":
            return
        rows = []
        mins = rep.min_ray_slack_per_t
        for j, t in enumerate(rep.t_grid):
            rows.append([t, rep.entropies[j], rep.chords[j], rep.slacks[j],
                         mins[j]])
        _write_csv(self.outdir / f"entropy_{i}.csv",
                   ["t", "S", "chord", "slack", "min_ray_slack"], rows)
        cong = measure.congruence
        rows = []
        for k, ray in enumerate(cong.rays):
            for j, t in enumerate(rep.t_grid):
                rows.append([k, t, float(ray.trU(t)), float(ray.y(t)),
                             float(ray.z(t)), rep.density_tracks[j, k]])
        _write_csv(self.outdir / f"rays_{i}.csv",
                   ["ray", "t", "trU", "y", "z", "rho"], rows)

    def task_witness(self, i, tcfg):
        big_n = float(_need(tcfg, "N", f"tasks[{i}]"))
        point = np.asarray(_need(tcfg, "point", f"tasks[{i}]", list),
                           dtype=float)
        direction = np.asarray(_need(tcfg, "direction", f"tasks[{i}]", list),
                               dtype=float)
        res = witness_violation(self.metric, big_n, point, direction,
                                shrink_steps=int(tcfg.get("shrink_steps", 12)),
                                delta0=float(tcfg.get("delta0", 0.1)),
                                t_grid=self.grid)
        if res.report is not None and res.report.verdict != "incomplete":
            rows = [[t, s, c, sl] for t, s, c, sl in
                    zip(res.report.t_grid, res.report.entropies,
                        res.report.chords, res.report.slacks)]
            _write_csv(self.outdir / f"witness_{i}.csv",
                       ["t", "S", "chord", "slack"], rows)
        verdict = "violated" if res.found else "inconclusive"
        return verdict, {
            "gap": float(res.gap), "lambda": float(res.lam),
            "exponent": float(res.exponent), "delta": float(res.delta),
            "span": float(res.span), "trials": res.trials,
            "min_slack": None if res.report is None
            else float(res.report.min_slack),
            "message": res.message,
            "point": [float(v) for v in point],
            "direction": [float(v) for v in direction],
        }

    def task_hawking(self, i, tcfg):
        t0 = float(_need(tcfg, "t0", f"tasks[{i}]"))
        t1 = float(_need(tcfg, "t1", f"tasks[{i}]"))
        res = hawking_check(self.congruence(), t0, t1,
                            area_tol=tcfg.get("area_tol"))
        if res.verdict == "monotone":
            token = "monotone"
        elif res.verdict.startswith("non-monotone"):
            token = "non_monotone"
        else:
            token = "inconclusive"
        return token, {
            "t0": t0, "t1": t1,
            "measure0": None if np.isnan(res.measure0) else float(res.measure0),
            "measure1": None if np.isnan(res.measure1) else float(res.measure1),
            "detail": res.verdict,
            "incomplete_at": res.incomplete_at,
            "assumptions": list(res.assumptions),
        }

    def task_trapped(self, i, tcfg):
        if self.seed is None:
            raise ScenarioError("seed", "trapped task needs a seed surface")
        rep = converging_test(self.metric, self.seed,
                              cross_check=bool(tcfg.get("cross_check", True)))
        self._trapped = rep
        token = ("trapped" if rep.verdict == "synthetically trapped"
                 else "not_trapped")
        return token, {
            "eps": float(rep.eps), "eps_outer": float(rep.eps_outer),
            "eps_inner": float(rep.eps_inner),
            "crosscheck": rep.crosscheck,
        }

    def task_penrose(self, i, tcfg):
        n_prime = float(_need(tcfg, "Nprime", f"tasks[{i}]"))
        if self._trapped is None:
            self._trapped = converging_test(self.metric, self.seed,
                                            cross_check=False)
        orient = self.seed.orientation
        eps = (self._trapped.eps_outer if orient == "outer"
               else self._trapped.eps_inner)
        res = penrose_bound(self.congruence(), eps, n_prime)
        rows = [[e["ray"],
                 np.nan if e["focal_time"] is None else e["focal_time"],
                 res.bound, int(e["within_bound"]),
                 int(e["within_paper_bound"]), e["status"]]
                for e in res.entries]
        _write_csv(self.outdir / f"penrose_{i}.csv",
                   ["ray", "focal_time", "bound", "within_bound",
                    "within_paper_bound", "status"], rows)
        token = res.verdict.replace(" ", "_")
        focal = [e["focal_time"] for e in res.entries
                 if e["focal_time"] is not None]
        return token, {
            "eps": float(eps), "Nprime": n_prime,
            "bound_riccati": float(res.bound),
            "bound_stated_1_over_eps": float(res.bound_paper),
            "rays_focal": len(focal),
            "max_focal_time": max(focal) if focal else None,
        }


def run_scenario(path, outdir=None):
    """Execute a scenario file; returns (exit_code, report dict)."""
    cfg = load_scenario(path)
    name = cfg.get("name", Path(path).stem)
    out = Path(outdir) if outdir else Path(cfg.get("output", {}).get("dir",
                                                                     "out"))
    out.mkdir(parents=True, exist_ok=True)
    runner = _Runner(cfg, out)
    tasks = _need(cfg, "tasks", "scenario", list)
    report = {
        "scenario": name,
        "version": __version__,
        "kernel_backend": backend_name(),
        "metric": runner.metric.name,
        "tolerances": {"ode_rtol": runner.rtol, "ode_atol": runner.atol,
                       "y_tol": runner.y_tol, "gap_tol": runner.gap_tol},
        "tasks": [],
    }
    any_violation = False
    any_inconclusive = False
    all_expected = True
    for i, tcfg in enumerate(tasks):
        if not isinstance(tcfg, dict):
            raise ScenarioError(f"tasks[{i}]", "task must be a mapping")
        token, info = runner.run_task(i, tcfg)
        expectation = tcfg.get("expectation")
        met = None if expectation is None else (token == str(expectation))
        report["tasks"].append({
            "index": i, "kind": tcfg["kind"], "verdict": token,
            "expectation": expectation, "expectation_met": met, **info})
        if token in _VIOLATION_TOKENS:
            any_violation = True
        if token in _INCONCLUSIVE_TOKENS:
            any_inconclusive = True
        if met is False:
            all_expected = False
    if any_violation:
        code = EXIT_VIOLATION
    elif any_inconclusive or not all_expected:
        code = EXIT_INCONCLUSIVE
    else:
        code = EXIT_OK
    report["exit_code"] = code
    (out / "report.yaml").write_text(
        yaml.safe_dump(report, sort_keys=True, default_flow_style=False),
        encoding="utf-8")
    return code, report


def bundled_scenarios():
    root = Path(__file__).parent / "scenarios"
    return sorted(root.glob("*.yaml"))


def list_builtins_text():
    lines = ["Built-in metrics:"]
    for name, (defaults, notes) in sorted(builtin_catalog().items()):
        params = ", ".join(f"{k}={v}" for k, v in defaults.items())
        lines.append(f"  {name} ({params})")
        lines.append(f"      {notes}")
    lines.append("")
    lines.append("Canned scenarios:")
    for p in bundled_scenarios():
        cfg = load_scenario(p)
        lines.append(f"  {p.name}: {cfg.get('name', '?')}")
    return "\n".join(lines)


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="nullflow",
        description="Energy-condition and entropy-convexity scenario runner.")
    sub = ap.add_subparsers(dest="command")
    run_p = sub.add_parser("run", help="run a scenario file")
    run_p.add_argument("scenario", type=Path)
    run_p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: scenario's output.dir)")
    sub.add_parser("list-builtins", help="catalog of metrics and scenarios")
    sub.add_parser("version", help="print version and kernel backend")
    args = ap.parse_args(argv)

    if args.command == "version":
        print(f"nullflow {__version__} (kernel: {backend_name()})")
        return EXIT_OK
    if args.command == "list-builtins":
        print(list_builtins_text())
        return EXIT_OK
    if args.command == "run":
        try:
            code, report = run_scenario(args.scenario, args.out)
        except (ScenarioError, GeometryError, DslError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        for task in report["tasks"]:
            print(f"[{task['kind']}] verdict: {task['verdict']}"
                  + (f" (expected {task['expectation']})"
                     if task["expectation"] else ""))
        print(f"exit code: {code}")
        return code
    ap.print_help()
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
