"""Semilinear systems ``-Delta U = F(|x|, U)`` with exact Jacobians.

Every nonlinearity is evaluated vectorized over nodes: ``eval_F(r, U)``
takes radii of shape ``(n,)`` and values of shape ``(m, n)`` and returns
``(m, n)``; ``eval_J`` returns the Jacobian ``dF_i/du_j`` as ``(m, m, n)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .config import DEFAULT, ConfigurationError, Tolerances
from .grid import Field, Region, full_region

PairwiseFn = Callable[[np.ndarray, np.ndarray, np.ndarray, int, int], tuple]


@dataclass(frozen=True, eq=False)
class SystemSpec:
    name: str
    m: int
    params: Mapping[str, float]
    eval_F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    eval_J: Callable[[np.ndarray, np.ndarray], np.ndarray]
    pairwise: PairwiseFn | None = None
    # where dF_i/du_j is certified nondecreasing in every u_k:
    # "everywhere", "positive_cone" or None (not certified)
    convexity: str | None = None

    def __post_init__(self):
        if self.m < 2:
            raise ConfigurationError("a system needs m >= 2 components")

    def F(self, solution: Field) -> np.ndarray:
        return self.eval_F(solution.grid.r, solution.values)

    def J(self, solution: Field) -> np.ndarray:
        return self.eval_J(solution.grid.r, solution.values)

    def pair_terms(self) -> PairwiseFn:
        """The decomposition ``f_i = sum_k g_ik(|x|, u_i, u_k)``.

        For two equations the decomposition is ``g_12 = f_1``, ``g_21 = f_2``
        and is built from ``eval_F``/``eval_J`` when none was supplied.
        """
        if self.pairwise is not None:
            return self.pairwise
        if self.m != 2:
            raise ConfigurationError(
                f"system {self.name!r} has m={self.m} but no pairwise decomposition")

        def g(r, ui, uk, i, k):
            U = np.empty((2, np.size(ui)))
            U[i], U[k] = ui, uk
            J = self.eval_J(r, U)
            return self.eval_F(r, U)[i], J[i, i], J[i, k]

        return g

    def convex_along(self, solution: Field) -> bool:
        """Analytic certificate of the monotone-derivative hypothesis along ``solution``."""
        if self.convexity == "everywhere":
            return True
        if self.convexity == "positive_cone":
            return bool(np.all(solution.values >= 0.0))
        return False

    def describe(self) -> dict:
        return {"name": self.name, "m": self.m, "params": dict(self.params)}


def _spow(u, p):
    """Signed power ``|u|^(p-1) u``."""
    return np.abs(u) ** (p - 1.0) * u


def _dspow(u, p):
    return p * np.abs(u) ** (p - 1.0)


def _schrodinger(b=1.0, omega=1.0, q=2.0):
    if q < 2.0:
        raise ConfigurationError(
            f"schrodinger needs q >= 2 for a C^1 nonlinearity, got q={q}")
    w2 = omega * omega

    def F(r, U):
        u1, u2 = U
        a1, a2 = np.abs(u1), np.abs(u2)
        f1 = a1 ** (2 * q - 2) * u1 + b * a2 ** q * a1 ** (q - 2) * u1 - u1
        f2 = a2 ** (2 * q - 2) * u2 + b * a1 ** q * a2 ** (q - 2) * u2 - w2 * u2
        return np.stack([f1, f2])

    def J(r, U):
        u1, u2 = U
        a1, a2 = np.abs(u1), np.abs(u2)
        j11 = (2 * q - 1) * a1 ** (2 * q - 2) + b * (q - 1) * a2 ** q * a1 ** (q - 2) - 1.0
        j22 = (2 * q - 1) * a2 ** (2 * q - 2) + b * (q - 1) * a1 ** q * a2 ** (q - 2) - w2
        off = b * q * a1 ** (q - 2) * u1 * a2 ** (q - 2) * u2
        return np.array([[j11, off], [off, j22]])

    return F, J, "positive_cone" if b >= 0 else None


def _exponential(lam=1.0, mu=1.0):
    def F(r, U):
        return np.stack([lam * np.exp(U[1]), mu * np.exp(U[0])])

    def J(r, U):
        z = np.zeros_like(U[0])
        return np.array([[z, lam * np.exp(U[1])], [mu * np.exp(U[0]), z]])

    return F, J, "everywhere" if lam >= 0 and mu >= 0 else None


def _henon(p=3.0, q=3.0, alpha=0.0, beta=0.0):
    for name, val in (("p", p), ("q", q)):
        if val <= 1.0:
            raise ConfigurationError(f"exponent {name} must be > 1, got {val}")
    if alpha < 0 or beta < 0:
        raise ConfigurationError("Henon weights need alpha, beta >= 0")

    def F(r, U):
        return np.stack([r ** alpha * _spow(U[1], p), r ** beta * _spow(U[0], q)])

    def J(r, U):
        z = np.zeros_like(U[0])
        return np.array([[z, r ** alpha * _dspow(U[1], p)], [r ** beta * _dspow(U[0], q), z]])

    return F, J, "positive_cone"


def _lane_emden(p=3.0, q=3.0):
    return _henon(p, q, 0.0, 0.0)


_BUILTINS = {
    "schrodinger": (_schrodinger, {"b": 1.0, "omega": 1.0, "q": 2.0}),
    "exponential": (_exponential, {"lam": 1.0, "mu": 1.0}),
    "lane_emden": (_lane_emden, {"p": 3.0, "q": 3.0}),
    "henon": (_henon, {"p": 3.0, "q": 3.0, "alpha": 1.0, "beta": 1.0}),
}


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


def builtin_system(name: str, params: Mapping[str, float] | None = None) -> SystemSpec:
    if name not in _BUILTINS:
        raise ConfigurationError(f"unknown system {name!r}; choose from {builtin_names()}")
    make, defaults = _BUILTINS[name]
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigurationError(f"unknown parameters for {name}: {sorted(unknown)}")
    full = {k: float(params.get(k, v)) for k, v in defaults.items()}
    F, J, convexity = make(**full)
    return SystemSpec(name, 2, full, F, J, convexity=convexity)


@dataclass
class CouplingReport:
    cooperative: bool
    fully_coupled: bool = False
    witness: np.ndarray | None = None
    violations: list = field(default_factory=list)
    probe_violations: int = 0
    region_measure: float = 0.0

    def as_dict(self) -> dict:
        return {
            "cooperative": self.cooperative,
            "fully_coupled": self.fully_coupled,
            "witness": None if self.witness is None else self.witness.tolist(),
            "n_violations": len(self.violations),
            "probe_violations": self.probe_violations,
        }


def _as_region(solution: Field, region) -> Region:
    if region is None:
        return full_region(solution.grid)
    if isinstance(region, Region):
        return region
    from .grid import node_region
    return node_region(solution.grid, region)


def _probe_box(spec: SystemSpec, solution: Field, region: Region, points: int, margin: float):
    U = solution.values[:, region.nodes]
    lo, hi = U.min(axis=1), U.max(axis=1)
    pad = margin * (hi - lo)
    axes = [np.linspace(a - d, b + d, points) for a, b, d in zip(lo, hi, pad)]
    pts = np.array(list(itertools.product(*axes))).T
    radii = np.unique(solution.grid.r[region.nodes])
    if radii.size > 16:
        radii = radii[np.linspace(0, radii.size - 1, 16).astype(int)]
    r = np.repeat(radii, pts.shape[1])
    return r, np.tile(pts, (1, radii.size))


def check_cooperative(spec: SystemSpec, solution: Field, region=None,
                      tol: Tolerances = DEFAULT, probe_points: int = 5,
                      probe_margin: float = 0.0) -> CouplingReport:
    """Off-diagonal Jacobian entries >= -eps_sign along the solution and on a probe box."""
    reg = _as_region(solution, region)
    J = spec.J(solution)[:, :, reg.nodes]
    off = ~np.eye(spec.m, dtype=bool)
    bad = (J < -tol.eps_sign) & off[:, :, None]
    violations = [(int(reg.nodes[n]), int(i), int(j)) for i, j, n in zip(*np.nonzero(bad))]
    probe_bad = 0
    if probe_points > 0:
        r, P = _probe_box(spec, solution, reg, probe_points, probe_margin)
        Jp = spec.eval_J(r, P)
        probe_bad = int(np.sum(np.any((Jp < -tol.eps_sign) & off[:, :, None], axis=(0, 1))))
    return CouplingReport(cooperative=not violations and probe_bad == 0,
                          violations=violations, probe_violations=probe_bad,
                          region_measure=reg.measure)


def bipartitions(m: int):
    """All ordered splits ``(I, J)`` of ``{0..m-1}`` into nonempty parts."""
    idx = range(m)
    for size in range(1, m):
        for I in itertools.combinations(idx, size):
            yield I, tuple(k for k in idx if k not in I)


def irreducible(positive: np.ndarray) -> bool:
    """Every bipartition has a link ``i0 in I -> j0 in J`` in the boolean pattern."""
    m = positive.shape[0]
    return all(any(positive[i, j] for i in I for j in J) for I, J in bipartitions(m))


def check_fully_coupled_along(spec: SystemSpec, solution: Field, region=None,
                              tol: Tolerances = DEFAULT, **probe) -> CouplingReport:
    reg = _as_region(solution, region)
    report = check_cooperative(spec, solution, reg, tol, **probe)
    J = spec.J(solution)[:, :, reg.nodes]
    witness = np.einsum("ijn,n->ij", (J > tol.eps_pos).astype(float), reg.weights)
    np.fill_diagonal(witness, 0.0)
    report.witness = witness
    report.fully_coupled = report.cooperative and irreducible(witness > tol.mu_min * reg.measure)
    return report
