"""Named property suites run by ``coopsym verify``.

Each suite evaluates a fixed fixture matrix and returns assertion records
``{"name", "passed", "detail"}`` plus the measured numbers.  Fixtures are
deterministic: random probes use a fixed seed.
"""
from __future__ import annotations

import platform

import numpy as np
import scipy
import scipy.optimize as opt
import scipy.sparse as sp

from . import __version__
from .config import DEFAULT, ConfigurationError, Tolerances
from .grid import Domain, Field, build_grid, cap_region, full_region, sector_region
from .solver import continuation_branch, diagonal_seed, newton_solve, scalar_seed
from .spectral import (CouplingMatrix, linearize, maximum_principle_check, morse_spectrum,
                       principal_eigenpair, symmetric_spectrum, _symmetric_operator)
from .symmetry import (build_reflection_coefficients, direction_scan, foliated_schwarz_report,
                       half_cap_form_check, reflection_difference, rotating_plane)
from .systems import builtin_system


class _Log:
    def __init__(self):
        self.assertions = []
        self.data = {}

    def check(self, name, passed, detail=""):
        self.assertions.append({"name": name, "passed": bool(passed), "detail": detail})


def _ball(n_r, n_theta):
    return build_grid(Domain.ball(), n_r, n_theta)


def lane_emden_diagonal(grid, p=3.0, tol: Tolerances = DEFAULT):
    spec = builtin_system("lane_emden", {"p": p, "q": p})
    z = scalar_seed(p, grid, tol=tol)
    return spec, diagonal_seed(z)


def exponential_solution(grid, lam, mu=None, tol: Tolerances = DEFAULT):
    mu = lam if mu is None else mu
    spec = builtin_system("exponential", {"lam": lam, "mu": mu})
    res = newton_solve(spec, grid, Field.zeros(grid, 2), tol)
    if not res.converged:
        raise RuntimeError(f"exponential solve failed: {res.status}")
    return spec, res.solution


def bump_profile(grid, axis: int = 0, concentration: float = 6.0):
    from .solver import first_eigenfunction
    _, phi = first_eigenfunction(grid)
    return phi * np.exp(concentration * (np.cos(grid.theta - grid.direction(axis).angle) - 1.0))


def annulus_nonradial(n_r=16, n_theta=128, p=3.0, tol: Tolerances = DEFAULT):
    """Diagonal Lane-Emden solution on the annulus [1, 2] concentrated about the x axis."""
    grid = build_grid(Domain.annulus(1.0, 2.0), n_r, n_theta)
    z = scalar_seed(p, grid, tol=tol, profile=bump_profile(grid), symmetry_line=0)
    return builtin_system("lane_emden", {"p": p, "q": p}), diagonal_seed(z)


def henon_nonradial(n_r=32, n_theta=64, alpha=2.0, tol: Tolerances = DEFAULT):
    grid = _ball(n_r, n_theta)
    spec = builtin_system("henon", {"p": 3.0, "q": 3.0, "alpha": alpha, "beta": alpha})
    prof = bump_profile(grid, 0, 4.0) * grid.r ** 2
    U0 = Field(grid, np.repeat((5.0 * prof / prof.max())[None], 2, axis=0))
    res = newton_solve(spec, grid, U0, tol, symmetry_line=0)
    if not res.converged:
        raise RuntimeError(f"Henon solve failed: {res.status}")
    return spec, res.solution


def rayleigh_minimizer(D: CouplingMatrix, region=None, seed: int = 0):
    """Minimize the discrete Rayleigh quotient of ``-Delta + C`` by L-BFGS.

    Returns ``(value, v, residual)`` where ``residual`` is the relative
    eigen-residual of the argmin in symmetric coordinates.
    """
    reg = full_region(D.grid) if region is None else region
    A = _symmetric_operator(reg, D.symmetric_part).tocsr()
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(A.shape[0])

    def fun(x):
        nx = x @ x
        Ax = A @ x
        q = (x @ Ax) / nx
        return q, 2.0 * (Ax - q * x) / nx

    res = opt.minimize(fun, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": 50000, "gtol": 1e-14, "ftol": 0.0, "maxcor": 50})
    x = res.x / np.linalg.norm(res.x)
    q = float(x @ (A @ x))
    resid = float(np.linalg.norm(A @ x - q * x))
    return q, x, resid


def _spectral_props(log: _Log, tol: Tolerances, grid_shape):
    nr, nt = grid_shape or (12, 24)
    grid = _ball(nr, nt)
    # v) the Rayleigh minimizer is an eigenfield
    D = CouplingMatrix.constant(grid, [[1.0, -2.0], [-0.5, 3.0]])
    q, _, resid = rayleigh_minimizer(D)
    lam1 = symmetric_spectrum(D, k=1, tol=tol).eigenvalues[0]
    scale = np.abs(_symmetric_operator(full_region(grid), D.symmetric_part)).max()
    log.check("v: Rayleigh minimizer is an eigenfield", resid <= 1e-6 * scale,
              f"residual={resid:.3e}, scale={scale:.3e}")
    log.check("v: minimum equals the first eigenvalue", abs(q - lam1) <= 1e-8 * max(1, abs(lam1)),
              f"min={q:.12g}, eig={lam1:.12g}")
    # vi) shrinking sectors push lambda_1 up without bound
    g2 = _ball(2 * nr, 4 * nt)
    D0 = CouplingMatrix.constant(g2, [[0.0]])
    lam_full = symmetric_spectrum(D0, tol=tol).eigenvalues[0]
    fracs = [0.5, 0.25, 0.125, 0.0625, 1.0 / 32]
    vals = [symmetric_spectrum(D0, sector_region(g2, g2.direction(0), f), tol=tol).eigenvalues[0]
            for f in fracs]
    log.data["sector_eigenvalues"] = dict(zip(map(str, fracs), vals))
    log.check("vi: sector eigenvalue increases as the sector shrinks",
              all(b > a for a, b in zip(vals, vals[1:])), f"{np.round(vals, 4).tolist()}")
    log.check("vi: exceeds 10 lambda_1 of the domain", vals[-1] > 10 * lam_full,
              f"{vals[-1]:.4g} vs {10 * lam_full:.4g}")
    # viii) one-signed simple first eigenfield for fully coupled fixtures
    fixtures = {
        "constant[[0,-1],[-4,0]]": CouplingMatrix.constant(grid, [[0.0, -1.0], [-4.0, 0.0]]),
        "lane_emden(3,3)": linearize(*lane_emden_diagonal(grid, tol=tol)),
        "exponential(0.3,0.1)": linearize(*exponential_solution(grid, 0.3, 0.1, tol)),
    }
    for name, Dx in fixtures.items():
        sr = symmetric_spectrum(Dx, k=2, tol=tol)
        w = sr.eigenfields[0].values
        one_signed = w.min() >= -1e-10 * np.abs(w).max()
        gap = sr.eigenvalues[1] - sr.eigenvalues[0]
        log.check(f"viii: {name} first eigenfield one-signed", one_signed, f"min={w.min():.3e}")
        log.check(f"viii: {name} first eigenvalue simple", gap > 1e-8 * max(1, abs(sr.eigenvalues[0])),
                  f"gap={gap:.4e}")
    # ix) entrywise increase of C never lowers lambda_1
    base = fixtures["lane_emden(3,3)"]
    lam0 = symmetric_spectrum(base, tol=tol).eigenvalues[0]
    rng = np.random.default_rng(7)
    worst = np.inf
    for _ in range(50):
        P = rng.uniform(0.0, 1.0, (2, 2, grid.size)) * rng.uniform(0, 5)
        P = 0.5 * (P + P.transpose(1, 0, 2))
        lam = symmetric_spectrum(CouplingMatrix(grid, base.entries + P), tol=tol).eigenvalues[0]
        worst = min(worst, lam - lam0)
    log.check("ix: 50 nonnegative perturbations never lower lambda_1",
              worst >= -tol.eps_eig(lam0), f"min increase={worst:.3e}")
    # principal >= symmetric, equality exactly in the symmetric case
    for a, b in [(1.0, 1.0), (1.0, 4.0), (9.0, 1.0)]:
        Dc = CouplingMatrix.constant(grid, [[0.0, -a], [-b, 0.0]])
        lt = principal_eigenpair(Dc, tol=tol).value
        ls = symmetric_spectrum(Dc, tol=tol).eigenvalues[0]
        log.check(f"principal >= symmetric for a={a:g}, b={b:g}", lt - ls >= -1e-8,
                  f"difference={lt - ls:.3e}")
        if a == b:
            log.check(f"equality for a=b={a:g}", abs(lt - ls) <= 1e-6, f"{abs(lt - ls):.3e}")
        else:
            log.check(f"strict for a={a:g}, b={b:g}", lt - ls > 1e-6, f"{lt - ls:.3e}")


def _mp_props(log: _Log, tol: Tolerances, grid_shape):
    nr, nt = grid_shape or (16, 32)
    grid = _ball(nr, nt)
    lam1 = symmetric_spectrum(CouplingMatrix.constant(grid, [[0.0]]), tol=tol).eigenvalues[0]
    log.data["lambda1"] = lam1
    for a, b in [(1.0, 1.0), (2.0, 8.0), (4.0, 9.0), (5.0, 7.0), (6.0, 6.0), (9.0, 16.0)]:
        D = CouplingMatrix.constant(grid, [[0.0, -a], [-b, 0.0]])
        mp = maximum_principle_check(D, tol=tol)
        expected = np.sqrt(a * b) < lam1
        log.check(f"a={a:g}, b={b:g}: holds iff sqrt(ab) < lambda_1", mp.holds == expected,
                  f"holds={mp.holds}, principal={mp.principal:.6g}")
        if mp.holds is False:
            psi = mp.certificate.values
            log.check(f"a={a:g}, b={b:g}: certificate nonnegative with nonpositive image",
                      psi.min() >= 0.0 and mp.certificate_defect <= 1e-8,
                      f"min={psi.min():.2e}, defect={mp.certificate_defect:.2e}")
    D = CouplingMatrix.constant(grid, [[0.5, 0.0], [0.0, 2.0]])
    log.check("nonnegative diagonal D: maximum principle holds",
              maximum_principle_check(D, tol=tol).holds is True)
    # a coupling that defeats the maximum principle on the domain but not on thin sectors
    g2 = _ball(2 * nr, 4 * nt)
    D = CouplingMatrix.constant(g2, [[0.0, -2 * lam1], [-2 * lam1, 0.0]])
    verdicts = [maximum_principle_check(D, sector_region(g2, g2.direction(0), f), tol).holds
                for f in (1.0, 0.25, 1.0 / 16)]
    log.data["small_measure_verdicts"] = verdicts
    log.check("small measure restores the maximum principle",
              verdicts[0] is False and verdicts[-1] is True, f"{verdicts}")


def _reflection_props(log: _Log, tol: Tolerances, grid_shape):
    shapes = [grid_shape] if grid_shape else [(16, 32), (32, 64)]
    for nr, nt in shapes:
        grid = _ball(nr, nt)
        spec, U = exponential_solution(grid, 0.3, tol=tol)
        J = spec.J(U)
        worst_off, worst_res, worst_diag = -np.inf, 0.0, 0.0
        for e in grid.directions()[:: max(1, nt // 8)]:
            rs = build_reflection_coefficients(spec, U, e, tol=tol)
            worst_off = max(worst_off, rs.max_offdiag)
            worst_res = max(worst_res, rs.residual_norm)
            same = np.all(rs.W.values == 0.0, axis=0)
            if same.any():
                worst_diag = max(worst_diag, float(np.abs(rs.B.entries[:, :, same]
                                                          + J[:, :, same]).max()))
        log.data[f"exponential {nr}x{nt}"] = {"max_offdiag": worst_off, "residual": worst_res,
                                              "symmetric_node_error": worst_diag}
        log.check(f"{nr}x{nt}: off-diagonal b_ij <= eps_sign", worst_off <= tol.eps_sign,
                  f"{worst_off:.3e}")
        log.check(f"{nr}x{nt}: symmetric nodes give -dF/du", worst_diag <= 1e-8,
                  f"{worst_diag:.3e}")
        log.check(f"{nr}x{nt}: reflection residual at solver accuracy",
                  worst_res <= 10 * tol.tol_res, f"{worst_res:.3e}")
    # closed-form mean value integral for the exponential coupling
    grid = _ball(8, 16)
    spec = builtin_system("exponential", {"lam": 0.7, "mu": 1.3})
    U = Field.from_function(grid, lambda r, t: [np.cos(r) + 0.4 * r * np.cos(t - 0.3),
                                                0.5 - r * r + 0.3 * r * np.sin(t)])
    e = grid.direction(1)
    rs = build_reflection_coefficients(spec, U, e, tol=tol)
    V = reflection_difference(U, e)
    Us = U.values - V.values
    diff = np.abs(V.values[1]) > 1e-8
    exact = -0.7 * (np.exp(U.values[1]) - np.exp(Us[1])) / V.values[1]
    err = float(np.abs(rs.B.entries[0, 1][diff] - exact[diff]).max())
    log.check("exponential b_12 matches the closed-form mean value", err <= 1e-10, f"{err:.2e}")
    # nonradial solution: the difference is one-signed on every cap
    spec, U = annulus_nonradial(tol=tol)
    rs = build_reflection_coefficients(spec, U, U.grid.direction(5), tol=tol)
    log.check("nonradial annulus: off-diagonal b_ij <= eps_sign", rs.max_offdiag <= tol.eps_sign,
              f"{rs.max_offdiag:.3e}")
    log.check("nonradial annulus: reflection residual at solver accuracy",
              rs.residual_norm <= 10 * tol.tol_res, f"{rs.residual_norm:.3e}")


def _endtoend_symmetry(log: _Log, tol: Tolerances, grid_shape):
    nr, nt = grid_shape or (24, 48)
    grid = _ball(nr, nt)
    cases = {
        "exponential(0.2)": exponential_solution(grid, 0.2, tol=tol),
        "lane_emden(3,3) ball": lane_emden_diagonal(grid, tol=tol),
        "lane_emden(3,3) annulus": annulus_nonradial(tol=tol),
        "henon(3,3,2,2) ball": henon_nonradial(tol=tol),
    }
    for name, (spec, U) in cases.items():
        sr = morse_spectrum(linearize(spec, U), tol=tol)
        rep = foliated_schwarz_report(U, tol)
        log.data[name] = {"morse_index": sr.morse_index, "degenerate": sr.degenerate_modes,
                          "classification": rep.classification}
        if sr.morse_index <= 2:
            log.check(f"{name}: index {sr.morse_index} gives radial or foliated Schwarz",
                      rep.classification in ("radial", "foliated_schwarz"), rep.classification)
        if sr.morse_index == 0:
            log.check(f"{name}: stable gives radial", rep.classification == "radial",
                      rep.classification)
        sc = direction_scan(spec, U, tol=tol, morse_index=sr.morse_index)
        log.check(f"{name}: qualifying directions exist", bool(sc.qualifying),
                  f"{len(sc.qualifying)} of {len(sc.values)}")
        if sr.morse_index == 1:
            log.check(f"{name}: antipodal property", sc.antipodal_ok)
        step = max(1, U.grid.n_theta // 16)
        forms = [half_cap_form_check(spec, U, e, tol) for e in U.grid.directions()[::step]]
        ratios = [f.value / f.scale for f in forms if f.scale > 0]
        log.check(f"{name}: half-cap forms nonpositive", all(f.holds for f in forms),
                  f"{len(ratios)} nonzero, max ratio {max(ratios, default=0.0):.3e}")
        signs = []
        for e in U.grid.directions():
            W = reflection_difference(U, e).values[:, cap_region(U.grid, e).nodes]
            signs.append(W.min() >= -1e-10 * U.sup() or W.max() <= 1e-10 * U.sup())
        if all(signs):
            log.check(f"{name}: one-signed differences imply foliated Schwarz",
                      rep.classification in ("radial", "foliated_schwarz"), rep.classification)
        if rep.classification == "foliated_schwarz":
            rp = rotating_plane(spec, U, U.grid.direction(rep.best_axis.index))
            axis_plane = rep.best_axis.angle % np.pi
            log.check(f"{name}: rotating plane stops on the symmetry axis",
                      rp.symmetric and abs(rp.plane_angle - axis_plane) < 1e-12,
                      f"plane={rp.plane_angle:.4f}, axis={axis_plane:.4f}")


SUITES = {
    "spectral_props": _spectral_props,
    "mp_props": _mp_props,
    "reflection_props": _reflection_props,
    "endtoend_symmetry": _endtoend_symmetry,
}


def run_suite(name: str, tol: Tolerances = DEFAULT, grid=None) -> dict:
    if name not in SUITES:
        raise ConfigurationError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    log = _Log()
    SUITES[name](log, tol, grid)
    from .scenario import _jsonable
    return _jsonable({"suite": name, "assertions": log.assertions, "data": log.data,
                      "passed": all(a["passed"] for a in log.assertions)})


def suite_report(name: str, tol: Tolerances = DEFAULT, grid=None) -> dict:
    """A report in the scenario report format for one suite run."""
    from .scenario import _jsonable
    result = run_suite(name, tol, grid)
    return _jsonable({
        "schema_version": 1,
        "scenario": {"name": f"verify:{name}", "suite": name,
                     "grid": None if grid is None else {"n_r": grid[0], "n_theta": grid[1]}},
        "provenance": {"package": "coopsym", "version": __version__,
                       "python": platform.python_version(), "numpy": np.__version__,
                       "scipy": scipy.__version__, "grid": None,
                       "tolerances": tol.as_dict()},
        "stages": [{"stage": "verify", "options": {"suite": name}, "status": "ok",
                    "output": {"data": result["data"]}}],
        "assertions": result["assertions"],
        "passed": result["passed"],
    })
