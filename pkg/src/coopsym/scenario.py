"""Scenario files and the pipeline that turns one into a JSON report.

A scenario is a YAML mapping::

    name: exp_stable_ball
    domain: {kind: ball, r_outer: 1.0}
    grid: {n_r: 32, n_theta: 64}
    system: {name: exponential, params: {lam: 0.2, mu: 0.2}}
    seed: {strategy: zero}
    pipeline: [solve, {spectrum: {k: 4}}, schwarz]
    tolerances: {tol_res: 1.0e-10}
    expect:
      spectrum.morse_index: 0
      schwarz.classification: radial

``expect`` maps a dotted path into the stage outputs to a value (equality)
or to ``{op: value}`` with ``op`` in eq, ne, le, lt, ge, gt, in, approx.
Stages also add their own assertions (convergence, scan nonemptiness,
form signs, symmetry consequences).
"""
from __future__ import annotations

import json
import logging
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import scipy
import yaml

from . import __version__
from .config import DEFAULT, ConfigurationError, Tolerances
from .grid import (Domain, Field, PolarGrid, build_grid, cap_region, full_region,
                   read_field_csv, write_field_csv)
from .solver import (Branch, continuation_branch, diagonal_seed, first_eigenfunction,
                     newton_solve, scalar_seed)
from .spectral import linearize, maximum_principle_check, morse_spectrum, principal_eigenpair
from .symmetry import (angular_mode_check, build_reflection_coefficients, coupling_residual,
                       direction_scan, foliated_schwarz_report, half_cap_form_check,
                       reflection_fully_coupled, rotating_plane, theorem_hypotheses)
from .systems import SystemSpec, builtin_system, check_fully_coupled_along

log = logging.getLogger(__name__)

STAGES = ("solve", "branch", "spectrum", "principal", "scan", "rotate", "schwarz",
          "coupling", "forms", "reflection", "verify")
NEEDS_SOLUTION = {"spectrum", "principal", "scan", "rotate", "schwarz", "coupling", "forms",
                  "reflection"}
SEEDS = ("zero", "scalar_bump", "diagonal_scalar", "file")


@dataclass
class Scenario:
    name: str
    domain: Domain
    n_r: int
    n_theta: int
    system: str
    params: dict
    seed: dict
    pipeline: list
    tolerances: Tolerances = DEFAULT
    expect: dict = field(default_factory=dict)
    symmetric_axis: int | None = None
    description: str = ""
    base_dir: Path | None = None

    def grid(self) -> PolarGrid:
        return build_grid(self.domain, self.n_r, self.n_theta)

    def echo(self) -> dict:
        return {
            "name": self.name, "description": self.description,
            "domain": {"kind": self.domain.kind, "r_inner": self.domain.r_inner,
                       "r_outer": self.domain.r_outer},
            "grid": {"n_r": self.n_r, "n_theta": self.n_theta},
            "system": {"name": self.system, "params": dict(self.params)},
            "seed": dict(self.seed), "symmetric_axis": self.symmetric_axis,
            "pipeline": [{name: dict(opts)} for name, opts in self.pipeline],
            "expect": dict(self.expect),
        }


def parse_grid_override(text: str) -> tuple[int, int]:
    try:
        nr, nt = text.lower().split("x")
        return int(nr), int(nt)
    except ValueError:
        raise ConfigurationError(f"--grid expects NRxNT, got {text!r}") from None


def parse_tol_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"--tol-override expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ConfigurationError(f"tolerance {k!r} needs a number, got {v!r}") from None
    return out


def _parse_domain(raw) -> Domain:
    if not isinstance(raw, dict):
        raise ConfigurationError("domain must be a mapping")
    kind = raw.get("kind", "ball")
    if kind == "ball":
        return Domain.ball(float(raw.get("r_outer", raw.get("radius", 1.0))))
    return Domain.annulus(float(raw["r_inner"]), float(raw["r_outer"]))


def _parse_pipeline(raw) -> list:
    if not isinstance(raw, list) or not raw:
        raise ConfigurationError("pipeline must be a nonempty list")
    stages = []
    for item in raw:
        if isinstance(item, str):
            name, opts = item, {}
        elif isinstance(item, dict) and len(item) == 1:
            name, opts = next(iter(item.items()))
            opts = {} if opts is None else opts
        else:
            raise ConfigurationError(f"bad pipeline entry {item!r}")
        if name not in STAGES:
            raise ConfigurationError(f"unknown stage {name!r}; choose from {list(STAGES)}")
        if not isinstance(opts, dict):
            raise ConfigurationError(f"options of stage {name!r} must be a mapping")
        stages.append((name, opts))
    have_solution = False
    for name, _ in stages:
        if name in NEEDS_SOLUTION and not have_solution:
            raise ConfigurationError(f"stage {name!r} needs a preceding solve or branch stage")
        have_solution = have_solution or name in ("solve", "branch")
    return stages


def parse_scenario(raw: Any, grid: tuple[int, int] | None = None,
                   tol_overrides: dict | None = None, base_dir: Path | None = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigurationError("scenario must be a mapping")
    try:
        name = str(raw["name"])
        domain = _parse_domain(raw.get("domain", {"kind": "ball"}))
        g = raw.get("grid", {})
        n_r, n_theta = int(g.get("n_r", 32)), int(g.get("n_theta", 64))
        if grid is not None:
            n_r, n_theta = grid
        build_grid(domain, n_r, n_theta)
        sysraw = raw["system"]
        system, params = str(sysraw["name"]), dict(sysraw.get("params") or {})
        builtin_system(system, params)
        seed = dict(raw.get("seed") or {"strategy": "zero"})
        if seed.get("strategy", "zero") not in SEEDS:
            raise ConfigurationError(f"unknown seed strategy {seed.get('strategy')!r}")
        seed.setdefault("strategy", "zero")
        tol = DEFAULT.override(raw.get("tolerances") or {})
        if tol_overrides:
            tol = tol.override(tol_overrides)
        pipeline = _parse_pipeline(raw.get("pipeline"))
        expect = dict(raw.get("expect") or {})
        axis = raw.get("symmetric_axis")
        axis = None if axis is None else int(axis) % n_theta
        unknown = set(raw) - {"name", "description", "domain", "grid", "system", "seed",
                              "pipeline", "tolerances", "expect", "symmetric_axis"}
        if unknown:
            raise ConfigurationError(f"unknown scenario keys {sorted(unknown)}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed scenario: {exc!r}") from exc
    return Scenario(name, domain, n_r, n_theta, system, params, seed, pipeline, tol, expect,
                    axis, str(raw.get("description", "")), base_dir)


def bundled_scenarios() -> list[str]:
    root = resources.files("coopsym") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config(path_or_name: str) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    bundled = resources.files("coopsym") / "scenarios" / f"{path_or_name}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigurationError(f"no scenario file or bundled scenario named {path_or_name!r}")


def load_scenario(path_or_name: str, grid=None, tol_overrides=None) -> Scenario:
    path = resolve_config(path_or_name)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return parse_scenario(raw, grid, tol_overrides, path.parent)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


class StageFailure(RuntimeError):
    pass


_OPS = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "le": lambda a, b: a <= b,
    "lt": lambda a, b: a < b,
    "ge": lambda a, b: a >= b,
    "gt": lambda a, b: a > b,
    "in": lambda a, b: a in b,
}


def _lookup(outputs: dict, path: str):
    stage, _, rest = path.partition(".")
    if stage not in outputs:
        raise KeyError(f"no output from stage {stage!r}")
    node = outputs[stage]
    for part in rest.split(".") if rest else ():
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node[part]
    return node


def evaluate_expectation(outputs: dict, path: str, spec) -> dict:
    try:
        actual = _lookup(outputs, path)
    except (KeyError, IndexError, ValueError) as exc:
        return {"name": f"expect {path}", "passed": False, "detail": f"missing: {exc}"}
    conds = spec if isinstance(spec, dict) else {"eq": spec}
    ok = True
    for op, target in conds.items():
        if op == "approx":
            rel = float(conds.get("rel", 1e-6))
            ok &= bool(abs(actual - target) <= rel * max(abs(target), 1e-300))
        elif op == "rel":
            continue
        elif op in _OPS:
            ok &= bool(_OPS[op](actual, target))
        else:
            return {"name": f"expect {path}", "passed": False, "detail": f"unknown op {op!r}"}
    return {"name": f"expect {path}", "passed": ok,
            "detail": f"actual={_jsonable(actual)!r} expected {_jsonable(conds)!r}"}


class Pipeline:
    """Executes the stages of one scenario in order."""

    def __init__(self, scenario: Scenario, out_dir: Path | None = None):
        self.sc = scenario
        self.tol = scenario.tolerances
        self.grid = scenario.grid()
        self.spec = builtin_system(scenario.system, scenario.params)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.solution: Field | None = None
        self.spectrum = None
        self.hypotheses = None
        self.outputs: dict = {}
        self.stages: list = []
        self.assertions: list = []

    @property
    def symmetry_line(self):
        return None if self.sc.symmetric_axis is None else 2 * self.sc.symmetric_axis

    def check(self, name: str, passed: bool, detail: str = ""):
        self.assertions.append({"name": name, "passed": bool(passed), "detail": detail})

    def family(self, params: dict) -> SystemSpec:
        merged = dict(self.sc.params)
        merged.update(params)
        return builtin_system(self.sc.system, merged)

    # seeds -------------------------------------------------------------
    def _profile(self, opts: dict):
        lam, phi = first_eigenfunction(self.grid)
        prof = opts.get("profile")
        if not prof:
            return phi
        axis = self.grid.direction(int(prof.get("axis", 0)))
        kappa = float(prof.get("concentration", 4.0))
        power = float(prof.get("radial_power", 0.0))
        return (phi * self.grid.r ** power
                * np.exp(kappa * (np.cos(self.grid.theta - axis.angle) - 1.0)))

    def seed_field(self) -> Field:
        opts = self.sc.seed
        strategy = opts["strategy"]
        m = self.spec.m
        if strategy == "zero":
            return Field.zeros(self.grid, m)
        if strategy == "file":
            base = self.sc.base_dir or Path(".")
            return read_field_csv(self.grid, base / opts["path"])
        amp = float(opts.get("amplitude", 1.0))
        if strategy == "scalar_bump":
            if not amp > 0:
                raise ConfigurationError("scalar_bump amplitude must be positive")
            phi = self._profile(opts)
            return Field(self.grid, np.repeat((amp * phi / phi.max())[None], m, axis=0))
        p = float(opts.get("p", self.sc.params.get("p", 3.0)))
        z = scalar_seed(p, self.grid, amp, self.tol, profile=self._profile(opts),
                        symmetry_line=self.symmetry_line)
        scale = float(opts.get("scale", 1.0))
        if not scale > 0:
            raise ConfigurationError("diagonal_scalar scale must be positive")
        return Field(self.grid, scale * diagonal_seed(z, m).values)

    # stages ------------------------------------------------------------
    def _adopt(self, spec: SystemSpec, solution: Field):
        self.spec, self.solution = spec, solution
        self.spectrum = None
        self.hypotheses = None

    def _write(self, field_: Field, name: str):
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_field_csv(field_, self.out_dir / name)
        return name

    def _spectrum(self):
        if self.spectrum is None:
            self.spectrum = morse_spectrum(linearize(self.spec, self.solution), tol=self.tol)
        return self.spectrum

    def _hypotheses(self):
        if self.hypotheses is None:
            self.hypotheses = theorem_hypotheses(self.spec, self.solution, self.tol)
        return self.hypotheses

    def stage_solve(self, opts):
        seed = self.solution if opts.get("from_current") and self.solution else self.seed_field()
        res = newton_solve(self.spec, self.grid, seed, self.tol, self.symmetry_line)
        self.check("solve converged", res.converged,
                   f"status={res.status} residual={res.residual_norm:.3e}")
        if not res.converged:
            raise StageFailure(f"Newton stopped with status {res.status!r}")
        self._adopt(self.spec, res.solution)
        out = res.as_dict()
        out["min_value"] = float(res.solution.values.min())
        out["max_value"] = float(res.solution.values.max())
        if self.sc.system in ("lane_emden", "henon"):
            self.check("solution positive", out["min_value"] > 0.0,
                       f"min={out['min_value']:.3e}")
        out["solution_file"] = self._write(res.solution, "solution.csv")
        return out

    def _branch_path(self, opts) -> list:
        if "path" in opts:
            return [dict(p) for p in opts["path"]]
        lin = opts.get("linspace")
        if not lin:
            raise ConfigurationError("branch needs 'path' or 'linspace'")
        a, b, n = lin["from"], lin["to"], int(lin["steps"])
        keys = list(a)
        return [{k: float(np.round(a[k] + (b[k] - a[k]) * s / n, 12)) for k in keys}
                for s in range(n + 1)]

    def stage_branch(self, opts):
        path = self._branch_path(opts)
        seed = self.solution if self.solution is not None else self.seed_field()
        br: Branch = continuation_branch(self.family, path, seed, self.tol,
                                         step_min=float(opts.get("step_min", 1.0 / 64)),
                                         symmetry_line=self.symmetry_line)
        points = []
        diag = bool(opts.get("diagnostics", False))
        for n, pt in enumerate(br.points):
            d = pt.as_dict()
            d["solution_file"] = self._write(pt.solve.solution, f"branch_{n:03d}.csv")
            if diag:
                spec = self.family(pt.params)
                U = pt.solve.solution
                rep = foliated_schwarz_report(U, self.tol)
                d["radiality_defect"] = rep.radiality_defect
                d["classification"] = rep.classification
                caps = [check_fully_coupled_along(spec, U, cap_region(self.grid, e), self.tol)
                        .fully_coupled for e in self.grid.directions()]
                d["fully_coupled_caps"] = all(caps)
            points.append(d)
        self.check("branch complete", br.status == "complete", f"status={br.status}")
        if br.points:
            last = br.points[-1]
            self._adopt(self.family(last.params), last.solve.solution)
        out = {"status": br.status, "fold": br.fold, "points": points,
               "n_points": len(points)}
        # the start point is often a trivial, decoupled state
        summarized = points if opts.get("include_start", True) else points[1:]
        if summarized:
            idx = [p["morse_index"] for p in summarized]
            out["min_morse_index"], out["max_morse_index"] = min(idx), max(idx)
        if diag and summarized:
            out["max_radiality_defect"] = max(p["radiality_defect"] for p in summarized)
            out["all_fully_coupled_caps"] = all(p["fully_coupled_caps"] for p in summarized)
        return out

    def stage_spectrum(self, opts):
        sr = self._spectrum()
        k = int(opts.get("k", 4))
        if k > len(sr.eigenvalues):
            from .spectral import symmetric_spectrum
            sr_k = symmetric_spectrum(linearize(self.spec, self.solution), k=k, tol=self.tol)
            vals = sr_k.eigenvalues
        else:
            vals = sr.eigenvalues[:k]
        return {"eigenvalues": [float(v) for v in vals], "morse_index": sr.morse_index,
                "degenerate_modes": sr.degenerate_modes, "eps_eig": sr.eps_eig}

    def _region(self, name: str):
        if name in ("domain", "full"):
            return full_region(self.grid)
        if name.startswith("cap:"):
            return cap_region(self.grid, self.grid.direction(int(name[4:])))
        raise ConfigurationError(f"unknown region {name!r}; use 'domain' or 'cap:<k>'")

    def stage_principal(self, opts):
        region = self._region(str(opts.get("region", "domain")))
        D = linearize(self.spec, self.solution)
        pr = principal_eigenpair(D, region, self.tol, require_full_coupling=False)
        mp = maximum_principle_check(D, region, self.tol)
        sym = morse_spectrum(D, region, self.tol).eigenvalues[0]
        self.check(f"principal >= first symmetric eigenvalue on {region.name}",
                   pr.value >= sym - self.tol.eps_eig(sym),
                   f"principal={pr.value:.10g} symmetric={sym:.10g}")
        return {"region": region.name, "principal": pr.value, "first_symmetric": float(sym),
                "fully_coupled": pr.fully_coupled, "maximum_principle": mp.holds,
                "iterations": pr.iterations}

    def stage_scan(self, opts):
        dirs = opts.get("directions")
        if isinstance(dirs, int):
            stride = max(1, self.grid.n_theta // dirs)
            dirs = list(range(0, self.grid.n_theta, stride))
        sc = direction_scan(self.spec, self.solution, dirs, self.tol,
                            morse_index=self._spectrum().morse_index)
        if sc.nonempty_required:
            self.check("scan: qualifying set nonempty", bool(sc.qualifying),
                       f"morse_index={sc.morse_index}")
        if sc.morse_index == 1:
            self.check("scan: antipodal property", sc.antipodal_ok, "")
        out = sc.as_dict()
        out["n_directions"] = len(sc.values)
        return out

    def stage_rotate(self, opts):
        e0 = self.grid.direction(int(opts.get("e_start", 0)))
        res = rotating_plane(self.spec, self.solution, e0, self.tol)
        self.check("rotate: symmetric at stop", res.symmetric,
                   f"defect={res.symmetry_defect:.3e}")
        ptol = opts.get("principal_tol")
        if ptol is not None and res.principal_at_stop is not None:
            self.check("rotate: principal eigenvalue at stop near 0",
                       abs(res.principal_at_stop) <= float(ptol),
                       f"value={res.principal_at_stop:.3e}")
        return res.as_dict()

    def stage_schwarz(self, opts):
        rep = foliated_schwarz_report(self.solution, self.tol)
        sr = self._spectrum()
        hyp = self._hypotheses()
        out = rep.as_dict()
        out["morse_index"] = sr.morse_index
        out["hypotheses"] = hyp
        if all(hyp.values()) and sr.morse_index <= 2:
            self.check("index <= 2 under the hypotheses: radial or foliated Schwarz",
                       rep.classification in ("radial", "foliated_schwarz"), rep.classification)
        if sr.morse_index == 0 and hyp["fully_coupled"]:
            self.check("stable and fully coupled: radial", rep.classification == "radial",
                       rep.classification)
        return out

    def stage_coupling(self, opts):
        cr = coupling_residual(self.spec, self.solution)
        am = angular_mode_check(self.spec, self.solution)
        out = cr.as_dict()
        out["angular_mode"] = am.as_dict()
        return out

    def _directions(self, opts):
        n = int(opts.get("directions", min(32, self.grid.n_theta)))
        stride = max(1, self.grid.n_theta // n)
        return [self.grid.direction(k) for k in range(0, self.grid.n_theta, stride)]

    def stage_forms(self, opts):
        hyp = self._hypotheses()
        rows = [half_cap_form_check(self.spec, self.solution, e, self.tol, hyp)
                for e in self._directions(opts)]
        if all(hyp.values()):
            bad = [r.direction for r in rows if not r.holds]
            self.check("half-cap form of the positive part <= tolerance", not bad,
                       f"failing directions {bad}")
        worst = max(r.value - self.tol.tol_form_rel * r.scale for r in rows)
        return {"checks": [r.as_dict() for r in rows], "hypotheses": hyp,
                "worst_excess": float(worst)}

    def stage_reflection(self, opts):
        rows = []
        for e in self._directions(opts):
            rs = build_reflection_coefficients(self.spec, self.solution, e, tol=self.tol)
            d = rs.as_dict()
            d["fully_coupled"] = reflection_fully_coupled(rs, self.tol)
            rows.append(d)
        worst = max(r["max_offdiag"] for r in rows)
        if self._hypotheses()["cooperative"]:
            self.check("reflection: off-diagonal coefficients <= eps_sign",
                       worst <= self.tol.eps_sign, f"max={worst:.3e}")
        return {"directions": rows, "max_offdiag": worst,
                "max_residual": max(r["residual_norm"] for r in rows)}

    def stage_verify(self, opts):
        from .suites import run_suite
        suite = opts.get("suite")
        result = run_suite(suite, tol=self.tol)
        for a in result["assertions"]:
            self.check(f"{suite}: {a['name']}", a["passed"], a["detail"])
        return result

    def run(self, only: tuple | None = None) -> dict:
        for name, opts in self.sc.pipeline:
            if only is not None and name not in only:
                continue
            entry = {"stage": name, "options": _jsonable(opts), "status": "ok"}
            try:
                out = getattr(self, f"stage_{name}")(opts)
                self.outputs[name] = _jsonable(out)
                entry["output"] = self.outputs[name]
            except (StageFailure, RuntimeError, ValueError) as exc:
                if isinstance(exc, ConfigurationError):
                    raise
                entry["status"] = "failed"
                entry["error"] = f"{type(exc).__name__}: {exc}"
                self.stages.append(entry)
                self.check(f"stage {name} completed", False, entry["error"])
                break
            self.stages.append(entry)
        else:
            for path, spec in self.sc.expect.items():
                if only is None or path.split(".")[0] in only:
                    self.assertions.append(evaluate_expectation(self.outputs, path, spec))
        return self.report()

    def report(self) -> dict:
        return _jsonable({
            "schema_version": 1,
            "scenario": self.sc.echo(),
            "provenance": {
                "package": "coopsym", "version": __version__,
                "python": platform.python_version(), "numpy": np.__version__,
                "scipy": scipy.__version__, "grid": self.grid.describe(),
                "tolerances": self.tol.as_dict(),
            },
            "stages": self.stages,
            "assertions": self.assertions,
            "passed": all(a["passed"] for a in self.assertions),
        })


def run_scenario(scenario: Scenario, out_dir=None, only=None) -> tuple[dict, int]:
    pipe = Pipeline(scenario, out_dir)
    report = pipe.run(only)
    code = 0 if report["passed"] else 1
    if out_dir is not None:
        write_report(report, Path(out_dir) / "report.json")
    return report, code


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def write_report(report: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_report(report) + "\n")
    return path


def report_schema() -> dict:
    return json.loads((resources.files("coopsym") / "report.schema.json").read_text())


def validate_report(report: dict) -> None:
    import jsonschema
    jsonschema.validate(report, report_schema())
