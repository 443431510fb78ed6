"""Linearizations ``-Delta + D(x)``, symmetric spectra and principal eigenvalues.

``D`` is stored node-wise as an ``(m, m, n_nodes)`` array.  The symmetric
eigenproblem ``(-Delta + C) W = lambda W`` with ``C = (D + D^t)/2`` is solved
in the coordinates ``v = W^{1/2} psi`` (``W`` the quadrature weights) where
the operator is an ordinary symmetric matrix.  The principal eigenvalue of
the possibly nonsymmetric cooperative operator is found by inverse iteration
on the positive cone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.sparse.csgraph import connected_components

from .config import DEFAULT, Tolerances
from .grid import Field, PolarGrid, Region, full_region
from .systems import SystemSpec, irreducible


class NotCooperativeError(ValueError):
    pass


class NotFullyCoupledError(ValueError):
    pass


class StagnationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    grid: PolarGrid
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 3 or e.shape[0] != e.shape[1] or e.shape[2] != self.grid.size:
            raise ValueError(f"coupling entries must be (m, m, {self.grid.size}), got {e.shape}")
        object.__setattr__(self, "entries", e)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def symmetric_part(self) -> np.ndarray:
        return 0.5 * (self.entries + self.entries.transpose(1, 0, 2))

    def symmetrized(self) -> "CouplingMatrix":
        return CouplingMatrix(self.grid, self.symmetric_part)

    @classmethod
    def constant(cls, grid: PolarGrid, matrix) -> "CouplingMatrix":
        M = np.asarray(matrix, dtype=float)
        return cls(grid, np.repeat(M[:, :, None], grid.size, axis=2))


def linearize(spec: SystemSpec, solution: Field) -> CouplingMatrix:
    """``D(x) = -J_F(|x|, U(x))``, the zeroth-order part of ``L_U``."""
    return CouplingMatrix(solution.grid, -spec.J(solution))


def _region(grid: PolarGrid, region) -> Region:
    return full_region(grid) if region is None else region


def _block_operator(region: Region, blocks: np.ndarray, lap=None) -> sp.csc_matrix:
    m = blocks.shape[0]
    lap = region.laplacian if lap is None else lap
    rows = []
    for i in range(m):
        row = []
        for j in range(m):
            B = sp.diags(blocks[i, j, region.nodes])
            row.append(lap + B if i == j else B)
        rows.append(row)
    return sp.bmat(rows, format="csc")


def _symmetric_operator(region: Region, C: np.ndarray) -> sp.csc_matrix:
    s = np.sqrt(region.weights)
    lap = sp.diags(s) @ region.laplacian @ sp.diags(1.0 / s)
    lap = 0.5 * (lap + lap.T)
    return _block_operator(region, C, lap.tocsr())


def _embed(region: Region, vec: np.ndarray, m: int) -> Field:
    vals = np.zeros((m, region.grid.size))
    vals[:, region.nodes] = vec.reshape(m, region.size)
    return Field(region.grid, vals)


@dataclass
class PrincipalResult:
    value: float
    field: Field
    iterations: int
    blocks: list = field(default_factory=list)
    fully_coupled: bool = True

    def as_dict(self) -> dict:
        return {"value": self.value, "iterations": self.iterations,
                "blocks": [list(b) for b in self.blocks], "fully_coupled": self.fully_coupled}


@dataclass
class SpectralResult:
    region: str
    eigenvalues: np.ndarray
    eigenfields: list
    morse_index: int
    degenerate_modes: int
    eps_eig: float
    principal: PrincipalResult | None = None

    def as_dict(self) -> dict:
        return {
            "region": self.region,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "morse_index": self.morse_index,
            "degenerate_modes": self.degenerate_modes,
            "principal": None if self.principal is None else self.principal.as_dict(),
        }


def region_operator(D: CouplingMatrix, region=None) -> sp.csc_matrix:
    """``-Delta + D`` on the region, acting on component-major region vectors."""
    return _block_operator(_region(D.grid, region), D.entries)


def quadratic_form(D: CouplingMatrix, psi: Field, region=None, check: bool = True) -> float:
    """``Q(psi) = int |grad psi|^2 + D(psi, psi)`` over the region.

    ``psi`` is masked to the region first.  The value coincides with the
    form of the symmetric part ``C``; with ``check`` the two are compared.
    """
    reg = _region(D.grid, region)
    v = psi.values[:, reg.nodes]
    w = reg.weights
    grad = sum(float(np.dot(vi * w, reg.laplacian @ vi)) for vi in v)
    zero_order = lambda M: float(np.einsum("in,ijn,jn,n->", v, M[:, :, reg.nodes], v, w))
    qd = grad + zero_order(D.entries)
    if check:
        qc = grad + zero_order(D.symmetric_part)
        scale = abs(grad) + float(np.einsum("in,in,n->", v, v, w)) * (1.0 + np.abs(D.entries).max())
        if abs(qd - qc) > 1e-12 * max(scale, 1e-300):
            raise AssertionError(f"Q_D={qd!r} differs from Q_C={qc!r}")
    return qd


def _spectrum_lower_bound(C: np.ndarray, region: Region) -> float:
    local = np.linalg.eigvalsh(C[:, :, region.nodes].transpose(2, 0, 1))
    return float(local.min())


def symmetric_spectrum(D: CouplingMatrix, region=None, k: int = 1,
                       tol: Tolerances = DEFAULT) -> SpectralResult:
    """The ``k`` smallest eigenpairs of ``-Delta + C`` on the region, ascending."""
    reg = _region(D.grid, region)
    m = D.m
    n = m * reg.size
    if k < 1 or k > n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    C = D.symmetric_part
    A = _symmetric_operator(reg, C)
    if n <= 600 or k >= n - 1:
        vals, vecs = la.eigh(A.toarray(), subset_by_index=[0, k - 1])
    else:
        shift = _spectrum_lower_bound(C, reg)
        shift -= 1.0 + 0.01 * abs(shift)
        for attempt in range(4):
            try:
                vals, vecs = sla.eigsh(A, k=k, sigma=shift, which="LM", tol=tol.eig_tol,
                                       v0=np.ones(n))
                break
            except (RuntimeError, sla.ArpackNoConvergence):
                shift -= 1.0 + abs(shift)
        else:
            raise RuntimeError("shift-invert eigensolver failed after reshifting")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    s = np.tile(np.sqrt(reg.weights), m)
    fields = []
    for col in vecs.T:
        psi = col / s
        if np.dot(psi, s * s) < 0:
            psi = -psi
        fields.append(_embed(reg, psi, m))
    eps = tol.eps_eig(vals[0])
    return SpectralResult(region=reg.name, eigenvalues=vals, eigenfields=fields,
                          morse_index=int(np.sum(vals < -eps)),
                          degenerate_modes=int(np.sum(np.abs(vals) <= eps)), eps_eig=eps)


def morse_spectrum(D: CouplingMatrix, region=None, tol: Tolerances = DEFAULT,
                   k0: int = 4) -> SpectralResult:
    """Enough of the spectrum to show every negative eigenvalue and one that is not."""
    reg = _region(D.grid, region)
    n = D.m * reg.size
    k = min(k0, n)
    while True:
        res = symmetric_spectrum(D, reg, k, tol)
        if res.eigenvalues[-1] >= -res.eps_eig or k == n:
            return res
        k = min(2 * k, n)


def morse_index(spec: SystemSpec, solution: Field, region=None,
                tol: Tolerances = DEFAULT) -> int:
    """Number of negative eigenvalues of the symmetrized linearization."""
    return morse_spectrum(linearize(spec, solution), region, tol).morse_index


def coupling_pattern(D: CouplingMatrix, region: Region, tol: Tolerances = DEFAULT):
    """Cooperativity flag and the boolean link pattern ``meas{d_ij < 0} > 0``."""
    d = D.entries[:, :, region.nodes]
    off = ~np.eye(D.m, dtype=bool)
    cooperative = not np.any((d > tol.eps_sign) & off[:, :, None])
    witness = np.einsum("ijn,n->ij", (d < -tol.eps_pos).astype(float), region.weights)
    np.fill_diagonal(witness, 0.0)
    return cooperative, witness > tol.mu_min * region.measure


def is_fully_coupled(D: CouplingMatrix, region=None, tol: Tolerances = DEFAULT) -> bool:
    reg = _region(D.grid, region)
    coop, links = coupling_pattern(D, reg, tol)
    return coop and irreducible(links)


def _power_iteration(A: sp.csc_matrix, w: np.ndarray, shift: float, tol: Tolerances):
    """Inverse iteration on ``(A + shift I)^{-1}`` from the constant vector.

    Right and left iterates run together so the eigenvalue estimate
    ``<phi, A psi> / <phi, psi>`` is accurate to second order.
    """
    n = A.shape[0]
    lu = sla.splu((A + shift * sp.identity(n, format="csc")).tocsc())
    x = np.ones(n)
    y = np.ones(n)
    lam_prev = np.inf
    for it in range(1, tol.power_max_iter + 1):
        x = lu.solve(x)
        y = lu.solve(y, trans="T")
        x /= np.linalg.norm(x)
        y /= np.linalg.norm(y)
        lam = float(y @ (A @ x)) / float(y @ x)
        if abs(lam - lam_prev) <= tol.power_tol * max(1.0, abs(lam)) and it > 2:
            return lam, x, it
        lam_prev = lam
    raise StagnationError(f"inverse iteration did not settle in {tol.power_max_iter} steps")


def _principal_block(reg: Region, D: np.ndarray, tol: Tolerances):
    A = _block_operator(reg, D)
    m = D.shape[0]
    d = D[:, :, reg.nodes]
    diag = np.array([d[i, i] for i in range(m)])
    off = np.abs(d).sum(axis=1) - np.abs(diag)
    shift = max(0.0, float(np.max(off - diag))) + 1.0
    lam, x, it = _power_iteration(A, np.tile(reg.weights, m), shift, tol)
    if x.sum() < 0:
        x = -x
    return lam, x, it


def principal_eigenpair(D: CouplingMatrix, region=None, tol: Tolerances = DEFAULT,
                        require_full_coupling: bool = True) -> PrincipalResult:
    """Principal eigenvalue and positive eigenfield of ``-Delta + D`` on the region.

    For a cooperative region that is not fully coupled (and
    ``require_full_coupling=False``) the value is the minimum over the
    irreducible diagonal blocks, and the field is the minimizing block's
    eigenfield padded with zeros.
    """
    reg = _region(D.grid, region)
    coop, links = coupling_pattern(D, reg, tol)
    if not coop:
        raise NotCooperativeError(f"positive off-diagonal coefficients on {reg.name}")
    full = irreducible(links)
    if not full and require_full_coupling:
        raise NotFullyCoupledError(f"-Delta + D is not fully coupled on {reg.name}")
    m = D.m
    if full:
        blocks = [tuple(range(m))]
    else:
        _, labels = connected_components(sp.csr_matrix(links.astype(float)), directed=True,
                                         connection="strong")
        blocks = [tuple(int(i) for i in np.flatnonzero(labels == c)) for c in np.unique(labels)]
    best = None
    total_it = 0
    for block in blocks:
        sub = D.entries[np.ix_(block, block)]
        lam, x, it = _principal_block(reg, sub, tol)
        total_it += it
        if best is None or lam < best[0]:
            best = (lam, x, block)
    lam, x, block = best
    vec = np.zeros((m, reg.size))
    vec[list(block)] = x.reshape(len(block), reg.size)
    psi = _embed(reg, vec, m)
    nrm = psi.norm()
    psi = psi.with_values(psi.values / nrm)
    return PrincipalResult(value=lam, field=psi, iterations=total_it, blocks=blocks,
                           fully_coupled=full)


@dataclass
class MaximumPrincipleResult:
    holds: bool | None
    principal: float
    certificate: Field | None = None
    certificate_defect: float = 0.0

    def as_dict(self) -> dict:
        return {"holds": self.holds, "principal": self.principal,
                "certificate_defect": self.certificate_defect}


def maximum_principle_check(D: CouplingMatrix, region=None,
                            tol: Tolerances = DEFAULT) -> MaximumPrincipleResult:
    """Weak maximum principle for ``-Delta + D`` decided by the sign of the principal eigenvalue.

    When it fails, the principal eigenfield ``Psi >= 0`` is returned as a
    counterexample: ``(-Delta + D) Psi = lambda Psi <= 0``.
    """
    reg = _region(D.grid, region)
    pr = principal_eigenpair(D, reg, tol, require_full_coupling=False)
    lam = pr.value
    if lam > tol.eps_mp:
        return MaximumPrincipleResult(True, lam)
    if lam >= -tol.eps_mp:
        return MaximumPrincipleResult(None, lam)
    psi = pr.field
    v = psi.values[:, reg.nodes]
    Av = (region_operator(D, reg) @ v.ravel()).reshape(v.shape)
    # positive part of (-Delta + D) Psi relative to its size: 0 for a genuine counterexample
    defect = float(np.max(np.maximum(Av, 0.0)) / max(np.abs(Av).max(), 1e-300))
    return MaximumPrincipleResult(False, lam, psi, defect)
