"""Reflection differences and the symmetry diagnostics built on them.

For a grid-aligned direction ``e`` the difference ``W = U - U o sigma_e``
solves ``-Delta W + B W = 0`` on the cap ``x . e > 0``, with ``B`` given by
segment integrals of the partial derivatives of the pairwise terms.  On top
of that: the positive-part form test, the scan of cap eigenvalues over
directions, the rotating plane, the foliated Schwarz classification and the
coupling residual for nonradial solutions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT, Tolerances
from .grid import (Direction, Field, angular_average, angular_derivative, cap_region,
                   mirror_permutation, reflect_field, reflection_permutation)
from .spectral import (CouplingMatrix, is_fully_coupled, linearize, morse_spectrum,
                       principal_eigenpair, quadratic_form, symmetric_spectrum)
from .systems import SystemSpec, check_cooperative, check_fully_coupled_along


def reflection_difference(solution: Field, e: Direction) -> Field:
    """``W^e = U - U o sigma_e``, antisymmetric under ``sigma_e`` node by node."""
    return Field(solution.grid, solution.values - reflect_field(solution, e).values)


def _gauss_legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class ReflectionSystem:
    direction: Direction
    W: Field
    B: CouplingMatrix
    residual_norm: float
    max_offdiag: float
    scale: float

    def as_dict(self) -> dict:
        return {"direction": self.direction.index, "residual_norm": self.residual_norm,
                "max_offdiag": self.max_offdiag, "w_norm": self.W.norm(), "scale": self.scale}


def build_reflection_coefficients(spec: SystemSpec, solution: Field, e: Direction,
                                  quad_order: int | None = None,
                                  tol: Tolerances = DEFAULT) -> ReflectionSystem:
    """Coefficients ``b_ij`` of the linear system satisfied by ``W^e``.

    ``b_ii = -int_0^1 sum_k dg_ik/du_i(r, t u_i + (1-t) u_i^s, u_k) dt`` and
    ``b_ik = -int_0^1 dg_ik/du_k(r, u_i^s, t u_k + (1-t) u_k^s) dt`` with
    ``u^s = u o sigma_e``.  Where a segment is degenerate the integrand is
    evaluated once at the common point.
    """
    quad_order = tol.quad_order if quad_order is None else quad_order
    g = spec.pair_terms()
    grid = solution.grid
    m = spec.m
    U = solution.values
    V = U[:, reflection_permutation(grid, e)]
    r = grid.r
    t, wt = _gauss_legendre(quad_order)
    B = np.zeros((m, m, grid.size))

    def segment(fn, a, b):
        """``int_0^1 fn(t a + (1-t) b) dt`` node-wise, exact where a == b."""
        pts = t[:, None] * a[None, :] + (1.0 - t[:, None]) * b[None, :]
        vals = np.stack([fn(p) for p in pts])
        quad = wt @ vals
        return np.where(a == b, fn(a), quad)

    for i in range(m):
        for k in range(m):
            if k == i:
                continue
            B[i, i] -= segment(lambda s: g(r, s, U[k], i, k)[1], U[i], V[i])
            B[i, k] = -segment(lambda s: g(r, V[i], s, i, k)[2], U[k], V[k])
    W = Field(grid, U - V)
    Bm = CouplingMatrix(grid, B)
    cap = cap_region(grid, e)
    L = grid.laplacian
    res = np.stack([L @ w for w in W.values]) + np.einsum("ijn,jn->in", B, W.values)
    rc = res[:, cap.nodes]
    residual_norm = float(np.sqrt(np.sum(rc * rc * cap.weights)))
    off = ~np.eye(m, dtype=bool)
    max_off = float(B[:, :, cap.nodes][off].max()) if m > 1 else 0.0
    return ReflectionSystem(e, W, Bm, residual_norm, max_off, float(np.abs(U).max()))


def reflection_fully_coupled(system: ReflectionSystem, tol: Tolerances = DEFAULT) -> bool:
    """Witness-measure test for the coupling of ``B`` on the cap."""
    return is_fully_coupled(system.B, cap_region(system.W.grid, system.direction), tol)


@dataclass
class FormCheck:
    direction: int
    value: float
    scale: float
    holds: bool
    hypotheses: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return not all(self.hypotheses.values())

    def as_dict(self) -> dict:
        return {"direction": self.direction, "value": self.value, "scale": self.scale,
                "holds": self.holds, "hypotheses": dict(self.hypotheses)}


def theorem_hypotheses(spec: SystemSpec, solution: Field, tol: Tolerances = DEFAULT) -> dict:
    """Cooperativity with full coupling along ``U``, convexity, pairwise structure."""
    rep = check_fully_coupled_along(spec, solution, tol=tol)
    try:
        spec.pair_terms()
        pairwise = True
    except Exception:
        pairwise = False
    return {"cooperative": rep.cooperative, "fully_coupled": rep.fully_coupled,
            "convex": spec.convex_along(solution), "pairwise": pairwise}


def half_cap_form_check(spec: SystemSpec, solution: Field, e: Direction,
                        tol: Tolerances = DEFAULT, hypotheses: dict | None = None) -> FormCheck:
    """``Q_U((W^e)^+; cap(e))`` against ``tol_form_rel * ||(W^e)^+||^2``."""
    grid = solution.grid
    cap = cap_region(grid, e)
    W = reflection_difference(solution, e).values
    # differences at rounding level are zero, not a sign
    floor = tol.eps_pos * max(1.0, solution.sup())
    Wp = np.zeros_like(W)
    Wp[:, cap.nodes] = np.where(W[:, cap.nodes] > floor, W[:, cap.nodes], 0.0)
    psi = Field(grid, Wp)
    value = quadratic_form(linearize(spec, solution), psi, cap)
    scale = float(np.sum(Wp * Wp * grid.quad_weights))
    hyp = theorem_hypotheses(spec, solution, tol) if hypotheses is None else hypotheses
    return FormCheck(e.index, value, scale, value <= tol.tol_form_rel * scale, hyp)


def _scan_directions(grid, directions, max_directions: int = 32):
    if directions is not None:
        return [d if isinstance(d, Direction) else grid.direction(int(d)) for d in directions]
    stride = max(1, grid.n_theta // max_directions)
    while (grid.n_theta // 2) % stride:
        stride -= 1
    return [grid.direction(k) for k in range(0, grid.n_theta, stride)]


@dataclass
class DirectionScan:
    values: dict
    qualifying: list
    morse_index: int
    eps_eig: float
    antipodal_ok: bool
    nonempty_required: bool

    @property
    def ok(self) -> bool:
        ok = bool(self.qualifying) or not self.nonempty_required
        if self.morse_index == 1:
            ok = ok and self.antipodal_ok
        return ok

    def as_dict(self) -> dict:
        return {"values": {str(k): v for k, v in self.values.items()},
                "qualifying": list(self.qualifying), "morse_index": self.morse_index,
                "antipodal_ok": self.antipodal_ok, "ok": self.ok}


def direction_scan(spec: SystemSpec, solution: Field, directions=None,
                   tol: Tolerances = DEFAULT, morse_index: int | None = None,
                   n_dims: int = 2) -> DirectionScan:
    """First symmetric cap eigenvalue of the linearization for each direction.

    With Morse index at most ``n_dims`` some direction must qualify
    (eigenvalue ``>= -eps_eig``); for index one at least one of ``e, -e``
    qualifies for every ``e``.
    """
    grid = solution.grid
    D = linearize(spec, solution)
    if morse_index is None:
        morse_index = morse_spectrum(D, tol=tol).morse_index
    dirs = _scan_directions(grid, directions)
    values = {}
    for e in dirs:
        values[e.index] = float(symmetric_spectrum(D, cap_region(grid, e), 1, tol).eigenvalues[0])
    lam_ref = max(abs(v) for v in values.values())
    eps = tol.eps_eig(lam_ref)
    qualifying = sorted(k for k, v in values.items() if v >= -eps)
    antipodal = True
    for k, v in values.items():
        opp = grid.direction(k).opposite().index
        if v < -eps and opp in values and values[opp] < -eps:
            antipodal = False
    return DirectionScan(values, qualifying, morse_index, eps, antipodal,
                         nonempty_required=morse_index <= n_dims)


@dataclass
class RotatingPlaneResult:
    start: int
    stop: int
    plane_angle: float
    steps: int
    symmetric: bool
    symmetry_defect: float
    principal_at_stop: float | None
    swapped: bool
    min_history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop, "plane_angle": self.plane_angle,
                "steps": self.steps, "symmetric": self.symmetric,
                "symmetry_defect": self.symmetry_defect,
                "principal_at_stop": self.principal_at_stop, "swapped": self.swapped}


class HypothesisError(ValueError):
    pass


def rotating_plane(spec: SystemSpec, solution: Field, e_start: Direction,
                   tol: Tolerances = DEFAULT, principal: bool = True) -> RotatingPlaneResult:
    """Rotate ``e`` in grid steps while ``W^e > 0`` on the cap; stop at the first failure.

    At the stopping direction the reflection symmetry ``U = U o sigma_e`` and
    the principal eigenvalue of the linearization on the cap are reported.
    """
    grid = solution.grid
    scale = max(solution.sup(), 1e-300)

    def cap_min(e):
        cap = cap_region(grid, e)
        return float(reflection_difference(solution, e).values[:, cap.nodes].min())

    def cap_max(e):
        cap = cap_region(grid, e)
        return float(reflection_difference(solution, e).values[:, cap.nodes].max())

    e0 = e_start
    swapped = False
    if cap_min(e0) < -tol.eps_pos * scale:
        if cap_max(e0) > tol.eps_pos * scale:
            raise HypothesisError(f"U - U o sigma_e changes sign on cap[{e0.index}]")
        e0 = e0.opposite()
        swapped = True
    history = []
    e = e0
    for step in range(grid.n_theta // 2 + 1):
        e = e0.rotated(step)
        mn = cap_min(e)
        history.append(mn)
        if not mn > tol.eps_pos * scale:
            break
    defect = float(np.abs(reflection_difference(solution, e).values).max() / scale)
    lam = None
    if principal:
        try:
            lam = principal_eigenpair(linearize(spec, solution), cap_region(grid, e), tol,
                                      require_full_coupling=False).value
        except ValueError:
            lam = None
    plane = float((e.angle + 0.5 * np.pi) % np.pi)
    return RotatingPlaneResult(e_start.index, e.index, plane, step, defect <= tol.tol_sym,
                               defect, lam, swapped, history)


# fields smaller than this in sup norm count as zero in the relative defects
ZERO_FLOOR = 1e-12


def _scale(solution: Field) -> float:
    return max(solution.sup(), ZERO_FLOOR)


def axial_defect(solution: Field, axis: int) -> float:
    """``||U - U o rho_p||_inf / ||U||_inf`` for the reflection ``rho_p`` fixing the axis ``p``."""
    scale = _scale(solution)
    perm = mirror_permutation(solution.grid, 2 * axis)
    return float(np.abs(solution.values - solution.values[:, perm]).max() / scale)


def monotonicity_defect(solution: Field, axis: int) -> np.ndarray:
    """Per component: weighted size of the angular increase away from the axis ``p``.

    On the half turning counterclockwise from ``p`` each component must be
    nonincreasing in ``theta``, on the other half nondecreasing.  Nodes on
    the axis itself are skipped.  Normalized by ``||U||_inf |Omega|``.
    """
    grid = solution.grid
    scale = _scale(solution)
    d = angular_derivative(solution).values
    phi = np.angle(np.exp(1j * (grid.theta - grid.direction(axis).angle)))
    upper = (phi > 1e-12) & (phi < np.pi - 1e-12)
    lower = (phi < -1e-12) & (phi > -np.pi + 1e-12)
    bad = np.where(upper, np.maximum(d, 0.0), 0.0) + np.where(lower, np.maximum(-d, 0.0), 0.0)
    return (bad * grid.quad_weights).sum(axis=1) / (scale * grid.domain.measure)


def radiality_defect(solution: Field) -> float:
    scale = _scale(solution)
    return float(np.abs(solution.values - angular_average(solution).values).max() / scale)


@dataclass
class SymmetryReport:
    best_axis: Direction
    axial_defect: float
    angular_monotonicity_defect: list
    radiality_defect: float
    classification: str
    max_angular_variation: float

    def as_dict(self) -> dict:
        return {"best_axis": self.best_axis.index, "best_axis_angle": self.best_axis.angle,
                "axial_defect": self.axial_defect,
                "angular_monotonicity_defect": list(self.angular_monotonicity_defect),
                "radiality_defect": self.radiality_defect,
                "max_angular_variation": self.max_angular_variation,
                "classification": self.classification}


def foliated_schwarz_report(solution: Field, tol: Tolerances = DEFAULT) -> SymmetryReport:
    """Axis, axial and monotonicity defects, radiality and the three-way class.

    The axis minimizes the axial defect.  Axes within tolerance of the
    minimum are ranked by monotonicity defect (this separates ``p`` from
    ``-p``) and then by index.
    """
    grid = solution.grid
    axes = np.arange(grid.n_theta)
    ax = np.array([axial_defect(solution, k) for k in axes])
    cand = axes[ax <= max(ax.min(), tol.tol_axial)]
    mono = {int(k): monotonicity_defect(solution, int(k)) for k in cand}
    worst = np.array([mono[int(k)].max() for k in cand])
    cand = cand[worst <= max(worst.min(), tol.tol_mono)]
    best = int(cand.min())
    rad = radiality_defect(solution)
    if rad <= tol.tol_radial:
        cls = "radial"
    elif ax[best] <= tol.tol_axial and mono[best].max() <= tol.tol_mono:
        cls = "foliated_schwarz"
    else:
        cls = "asymmetric"
    return SymmetryReport(grid.direction(best), float(ax[best]), [float(v) for v in mono[best]],
                          rad, cls, rad)


@dataclass
class CouplingResidual:
    values: np.ndarray
    sup: float
    weighted_sup: float
    u_theta_sup: float
    u_sup: float

    @property
    def radial_caveat(self) -> bool:
        """A pointwise residual on a solution whose ``U_theta`` vanishes."""
        return self.sup > 0.0 and self.u_theta_sup <= 1e-10 * max(self.u_sup, 1e-300)

    def as_dict(self) -> dict:
        return {"sup": self.sup, "weighted_sup": self.weighted_sup,
                "u_theta_sup": self.u_theta_sup, "radial_caveat": self.radial_caveat}


def coupling_residual(spec: SystemSpec, solution: Field) -> CouplingResidual:
    """Asymmetry of the Jacobian along ``U``.

    ``values`` holds ``|df_1/du_2 - df_2/du_1|`` for two equations and
    ``|sum_j (df_i/du_j - df_j/du_i) (U_theta)_j|`` per equation otherwise;
    ``weighted_sup`` is the sup of the latter in either case.
    """
    J = spec.J(solution)
    A = J - J.transpose(1, 0, 2)
    Ut = angular_derivative(solution).values
    weighted = np.abs(np.einsum("ijn,jn->in", A, Ut))
    if spec.m == 2:
        vals = np.abs(A[0, 1])
    else:
        vals = weighted
    return CouplingResidual(vals, float(vals.max()), float(weighted.max()),
                            float(np.abs(Ut).max()), solution.sup())


@dataclass
class AngularModeResult:
    residual: float
    u_theta_norm: float
    u_norm: float

    @property
    def relative_u_theta(self) -> float:
        return self.u_theta_norm / self.u_norm if self.u_norm else 0.0

    def as_dict(self) -> dict:
        return {"residual": self.residual, "u_theta_norm": self.u_theta_norm,
                "relative_u_theta": self.relative_u_theta}


def angular_mode_check(spec: SystemSpec, solution: Field) -> AngularModeResult:
    """``||(-Delta - J_F(U)) U_theta||`` and ``||U_theta||`` in weighted L2."""
    Ut = angular_derivative(solution)
    J = spec.J(solution)
    L = solution.grid.laplacian
    res = np.stack([L @ u for u in Ut.values]) - np.einsum("ijn,jn->in", J, Ut.values)
    return AngularModeResult(Field(solution.grid, res).norm(), Ut.norm(), solution.norm())
