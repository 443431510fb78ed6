"""Damped Newton for ``L U = F(|x|, U)``, scalar seeding and parameter continuation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .config import DEFAULT, ConfigurationError, Tolerances
from .grid import Field, PolarGrid, mirror_permutation
from .systems import SystemSpec

log = logging.getLogger(__name__)

EvalFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SeedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveResult:
    solution: Field
    residual_norm: float
    iterations: int
    converged: bool
    status: str = "converged"
    history: tuple = ()
    sigma_min: float | None = None

    def as_dict(self) -> dict:
        return {"residual_norm": self.residual_norm, "iterations": self.iterations,
                "converged": self.converged, "status": self.status,
                "history": list(self.history), "sigma_min": self.sigma_min}


def residual(grid: PolarGrid, eval_F: EvalFn, U: np.ndarray) -> np.ndarray:
    """``L U - F(|x|, U)``, shape ``(m, n)``."""
    L = grid.laplacian
    with np.errstate(over="ignore", invalid="ignore"):
        return np.stack([L @ u for u in U]) - eval_F(grid.r, U)


def weighted_norm(grid: PolarGrid, R: np.ndarray) -> float:
    # a runaway trial step may overflow; inf simply fails the line search
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.sqrt(np.sum(R * R * grid.quad_weights)))
    return val if np.isfinite(val) else np.inf


def newton_matrix(grid: PolarGrid, Jac: np.ndarray) -> sp.csc_matrix:
    """Block matrix ``I (x) L - [diag J_ij]`` acting on component-major vectors."""
    m = Jac.shape[0]
    L = grid.laplacian
    rows = [[(L if i == j else None) for j in range(m)] for i in range(m)]
    for i in range(m):
        for j in range(m):
            B = -sp.diags(Jac[i, j])
            rows[i][j] = B if rows[i][j] is None else rows[i][j] + B
    return sp.bmat(rows, format="csc")


def symmetric_basis(grid: PolarGrid, line: int, m: int):
    """Prolongation ``P`` onto fields even under the reflection across ``line``
    and the representative rows ``S`` (one node per orbit)."""
    perm = mirror_permutation(grid, line)
    n = grid.size
    reps = np.flatnonzero(np.arange(n) <= perm)
    col = np.full(n, -1)
    col[reps] = np.arange(reps.size)
    col[perm[reps]] = np.arange(reps.size)
    P1 = sp.csr_matrix((np.ones(n), (np.arange(n), col)), shape=(n, reps.size))
    P = sp.block_diag([P1] * m, format="csr")
    S = np.concatenate([k * n + reps for k in range(m)])
    return P, S, perm


def smallest_singular_value(A: sp.csc_matrix, lu=None, iters: int = 30) -> float:
    """Relative estimate of ``sigma_min(A)`` by inverse iteration on ``A^T A``."""
    if lu is None:
        lu = sla.splu(A)
    x = np.ones(A.shape[0]) / np.sqrt(A.shape[0])
    s = np.inf
    for _ in range(iters):
        y = lu.solve(lu.solve(x), trans="T")
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm == 0:
            return 0.0
        s = 1.0 / np.sqrt(nrm)
        x = y / nrm
    scale = np.sqrt(sla.norm(A, 1) * sla.norm(A, np.inf))
    return float(s / scale)


def _newton(grid: PolarGrid, eval_F: EvalFn, eval_J: EvalFn, U0: np.ndarray,
            tol: Tolerances, symmetry_line: int | None = None) -> SolveResult:
    m = U0.shape[0]
    U = np.array(U0, dtype=float)
    if symmetry_line is not None:
        P, S, perm = symmetric_basis(grid, symmetry_line, m)
        U = 0.5 * (U + U[:, perm])

    def make(U_, status, hist, it, sig=None):
        return SolveResult(Field(grid, U_), hist[-1], it, status == "converged", status,
                           tuple(hist), sig)

    R = residual(grid, eval_F, U)
    nrm = weighted_norm(grid, R)
    hist = [nrm]
    if not np.isfinite(nrm):
        raise ValueError("initial guess gives a non-finite residual")
    for it in range(tol.max_iter + 1):
        if nrm <= tol.tol_res:
            return make(U, "converged", hist, it)
        if it == tol.max_iter:
            break
        A = newton_matrix(grid, eval_J(grid.r, U))
        rhs = R.ravel()
        if symmetry_line is not None:
            A = (A[S] @ P).tocsc()
            rhs = rhs[S]
        try:
            lu = sla.splu(A)
        except RuntimeError:
            return make(U, "singular", hist, it, 0.0)
        step = lu.solve(-rhs)
        if not np.all(np.isfinite(step)):
            return make(U, "singular", hist, it, 0.0)
        if symmetry_line is not None:
            step = P @ step
        step = step.reshape(U.shape)
        t = 1.0
        while True:
            trial = U + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                Rt = residual(grid, eval_F, trial)
            nt = weighted_norm(grid, Rt)
            if np.isfinite(nt) and nt <= (1.0 - 1e-4 * t) * nrm:
                break
            t *= tol.armijo
            if t < 1e-10:
                sig = smallest_singular_value(A, lu)
                status = "singular" if sig < tol.sigma_min else "line_search_failed"
                return make(U, status, hist, it, sig)
        U, R, nrm = trial, Rt, nt
        hist.append(nrm)
    return make(U, "max_iter", hist, tol.max_iter)


def newton_solve(spec: SystemSpec, grid: PolarGrid, initial: Field, tol: Tolerances = DEFAULT,
                 symmetry_line: int | None = None) -> SolveResult:
    """Damped Newton on ``R(U) = L U - F(|x|, U)``.

    With ``symmetry_line`` the iteration is restricted to fields even under
    the reflection across that grid line (an exact linear constraint).
    """
    if initial.grid is not grid and initial.grid.size != grid.size:
        raise ConfigurationError("initial field lives on another grid")
    if initial.m != spec.m:
        raise ConfigurationError(f"initial field has {initial.m} components, system has {spec.m}")
    return _newton(grid, spec.eval_F, spec.eval_J, initial.values, tol, symmetry_line)


def first_eigenfunction(grid: PolarGrid) -> tuple[float, np.ndarray]:
    """First Dirichlet eigenpair of the discrete ``-Delta``, positive, max 1."""
    s = np.sqrt(grid.quad_weights)
    A = sp.diags(s) @ grid.laplacian @ sp.diags(1.0 / s)
    A = (0.5 * (A + A.T)).tocsc()
    vals, vecs = sla.eigsh(A, k=1, sigma=-1.0, which="LM", v0=np.ones(grid.size))
    phi = vecs[:, 0] / s
    phi /= phi[np.argmax(np.abs(phi))]
    return float(vals[0]), phi


def scalar_seed(p: float, grid: PolarGrid, amplitude: float = 1.0,
                tol: Tolerances = DEFAULT, profile: np.ndarray | None = None,
                symmetry_line: int | None = None) -> Field:
    """Positive solution of the discrete ``-Delta z = |z|^(p-1) z``.

    Newton starts from ``amplitude * c * phi`` where ``phi`` is the first
    eigenfunction (or ``profile``) scaled to max 1 and ``c`` balances
    ``lambda_1 c = c^p``.
    """
    if p <= 1.0:
        raise ConfigurationError(f"scalar seed needs p > 1, got {p}")
    if not amplitude > 0.0:
        raise ConfigurationError("amplitude must be positive; z = 0 is excluded")
    lam1, phi = first_eigenfunction(grid)
    if profile is not None:
        phi = np.asarray(profile, dtype=float)
        phi = phi / np.max(np.abs(phi))
    c = amplitude * lam1 ** (1.0 / (p - 1.0))

    def F(r, Z):
        return np.abs(Z) ** (p - 1.0) * Z

    def J(r, Z):
        return (p * np.abs(Z) ** (p - 1.0))[None]

    res = _newton(grid, F, J, (c * phi)[None, :], tol, symmetry_line)
    z = res.solution.values[0]
    if not res.converged:
        raise SeedError(f"scalar Newton stopped with status {res.status!r}, "
                        f"residual {res.residual_norm:.3e} after {res.iterations} steps")
    if z.min() <= 0.0:
        raise SeedError(f"scalar Newton converged to a sign-changing solution (min z = {z.min():.3e})")
    return Field(grid, z)


def diagonal_seed(z: Field, m: int = 2) -> Field:
    return Field(z.grid, np.repeat(z.values[:1], m, axis=0))


@dataclass
class BranchPoint:
    params: dict
    solve: SolveResult
    morse_index: int
    principal_eig_cap: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"params": dict(self.params), "residual": self.solve.residual_norm,
                "iterations": self.solve.iterations, "morse_index": self.morse_index,
                "principal_eig_cap": {str(k): v for k, v in self.principal_eig_cap.items()}}


@dataclass
class Branch:
    points: list
    status: str = "complete"
    fold: dict | None = None

    def as_dict(self) -> dict:
        return {"status": self.status, "fold": self.fold,
                "points": [p.as_dict() for p in self.points]}


def continuation_branch(family: Callable[[Mapping[str, float]], SystemSpec],
                        param_path: Sequence[Mapping[str, float]], seed: Field,
                        tol: Tolerances = DEFAULT, step_min: float = 1.0 / 64,
                        symmetry_line: int | None = None,
                        index_fn: Callable | None = None) -> Branch:
    """Natural-parameter continuation along a polyline of parameter vectors.

    Between consecutive path vertices the parameters move linearly in a
    fraction ``s`` of the segment; a failed corrector halves the fraction
    down to ``step_min``.  The predictor is the secant through the last
    two accepted solutions.  Every path vertex becomes a branch point.
    """
    from .spectral import morse_index

    if index_fn is None:
        index_fn = morse_index
    points: list[BranchPoint] = []
    if not param_path:
        return Branch(points)
    grid = seed.grid
    keys = list(param_path[0])

    def vec(pr):
        return np.array([float(pr[k]) for k in keys])

    def solve_at(pv, guess):
        spec = family(dict(zip(keys, pv)))
        return spec, newton_solve(spec, grid, guess, tol, symmetry_line)

    spec, res = solve_at(vec(param_path[0]), seed)
    if not res.converged:
        raise RuntimeError(f"continuation failed at the first point ({res.status})")
    points.append(BranchPoint(dict(zip(keys, vec(param_path[0]))), res,
                              index_fn(spec, res.solution)))
    prev = None  # (param vector, solution values) of the previous accepted state
    cur = (vec(param_path[0]), res.solution.values)
    for target in param_path[1:]:
        a, b = cur[0], vec(target)
        s, frac = 0.0, 1.0
        while s < 1.0:
            frac = min(frac, 1.0 - s)
            pv = a + (s + frac) * (b - a)
            guess = cur[1]
            if prev is not None:
                dp = np.linalg.norm(cur[0] - prev[0])
                if dp > 0:
                    guess = cur[1] + (np.linalg.norm(pv - cur[0]) / dp) * (cur[1] - prev[1])
            spec, res = solve_at(pv, Field(grid, guess))
            if not res.converged:
                if res.status == "singular" or (res.sigma_min is not None
                                                and res.sigma_min < tol.sigma_min):
                    return Branch(points, "fold", {"params": dict(zip(keys, pv)),
                                                   "sigma_min": res.sigma_min})
                frac *= 0.5
                if frac < step_min:
                    return Branch(points, "step_underflow",
                                  {"params": dict(zip(keys, pv)), "sigma_min": res.sigma_min})
                continue
            prev, cur = cur, (pv, res.solution.values)
            s += frac
            frac = min(2.0 * frac, 1.0)
        points.append(BranchPoint(dict(zip(keys, cur[0])), res, index_fn(spec, res.solution)))
        log.info("branch point %s: residual %.2e, index %d", points[-1].params,
                 res.residual_norm, points[-1].morse_index)
    return Branch(points)
