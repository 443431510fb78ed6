import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopsym.config import DEFAULT
from coopsym.grid import Domain, Field, build_grid, cap_region, reflection_permutation
from coopsym.spectral import linearize
from coopsym.suites import (annulus_nonradial, exponential_solution, henon_nonradial,
                            lane_emden_diagonal)
from coopsym.symmetry import (HypothesisError, angular_mode_check, axial_defect,
                              build_reflection_coefficients, coupling_residual, direction_scan,
                              foliated_schwarz_report, half_cap_form_check,
                              monotonicity_defect, radiality_defect, reflection_difference,
                              reflection_fully_coupled, rotating_plane, theorem_hypotheses)
from coopsym.systems import builtin_system


_CACHE = {}


def annulus_fixture():
    # shared by the module fixture and the hypothesis test, which cannot take fixtures
    if "a" not in _CACHE:
        _CACHE["a"] = annulus_nonradial()
    return _CACHE["a"]


@pytest.fixture(scope="module")
def annulus():
    return annulus_fixture()


@pytest.fixture(scope="module")
def henon():
    return henon_nonradial()


@pytest.fixture(scope="module")
def radial():
    g = build_grid(Domain.ball(), 16, 32)
    return lane_emden_diagonal(g)


def test_reflection_difference_is_antisymmetric(annulus):
    _, U = annulus
    for k in (0, 5, 40):
        e = U.grid.direction(k)
        W = reflection_difference(U, e)
        P = reflection_permutation(U.grid, e)
        assert np.allclose(W.values[:, P], -W.values)


def test_reflection_coefficients_on_nonradial_solution(annulus):
    spec, U = annulus
    for k in (3, 17, 64, 100):
        sys_ = build_reflection_coefficients(spec, U, U.grid.direction(k))
        assert sys_.residual_norm <= 1e-8 * max(1.0, sys_.scale)
        assert sys_.max_offdiag <= DEFAULT.eps_sign
        assert reflection_fully_coupled(sys_)


def test_reflection_coefficients_reduce_to_jacobian_where_symmetric(radial):
    spec, U = radial
    sys_ = build_reflection_coefficients(spec, U, U.grid.direction(4))
    D = linearize(spec, U).entries
    assert np.allclose(sys_.B.entries, D, rtol=1e-8, atol=1e-8)


@settings(max_examples=10, deadline=None)
@given(order=st.integers(2, 12), k=st.integers(0, 127))
def test_reflection_coefficients_exact_for_cubic(order, k):
    # for p = q = 3 the integrands are quadratic in t: any order >= 2 is exact
    spec, U = annulus_fixture()
    e = U.grid.direction(k)
    ref = build_reflection_coefficients(spec, U, e, quad_order=12)
    got = build_reflection_coefficients(spec, U, e, quad_order=order)
    assert np.allclose(got.B.entries, ref.B.entries, rtol=1e-12, atol=1e-12)


def test_hypotheses_reported(radial):
    spec, U = radial
    hyp = theorem_hypotheses(spec, U)
    assert hyp == {"cooperative": True, "fully_coupled": True, "convex": True, "pairwise": True}


def test_half_cap_forms_nonpositive(annulus, henon):
    for spec, U in (annulus, henon):
        hyp = theorem_hypotheses(spec, U)
        for e in U.grid.directions()[:: max(1, U.grid.n_theta // 16)]:
            fc = half_cap_form_check(spec, U, e, hypotheses=hyp)
            assert fc.holds, (e.index, fc.value, fc.scale)
            assert not fc.flagged


def test_concave_nonlinearity_is_flagged(annulus):
    # -Delta u_1 = 2 - exp(-u_2): cooperative, but the coupling derivative decreases in u_2
    from coopsym.systems import SystemSpec

    def F(r, U):
        return np.stack([2.0 - np.exp(-U[1]), 2.0 - np.exp(-U[0])])

    def J(r, U):
        z = np.zeros_like(U[0])
        return np.array([[z, np.exp(-U[1])], [np.exp(-U[0]), z]])

    spec = SystemSpec("concave", 2, {}, F, J, convexity=None)
    _, U = annulus
    hyp = theorem_hypotheses(spec, U)
    assert hyp["cooperative"] and not hyp["convex"]
    fc = half_cap_form_check(spec, U, U.grid.direction(5), hypotheses=hyp)
    assert fc.flagged


def test_half_cap_form_trivial_on_radial(radial):
    spec, U = radial
    fc = half_cap_form_check(spec, U, U.grid.direction(2))
    assert fc.holds and fc.value == 0.0


def test_direction_scan_annulus(annulus):
    spec, U = annulus
    scan = direction_scan(spec, U)
    assert scan.morse_index == 1
    assert scan.nonempty_required and scan.qualifying
    assert scan.antipodal_ok and scan.ok


def test_rotating_plane_finds_axis(annulus):
    spec, U = annulus
    res = rotating_plane(spec, U, U.grid.direction(5))
    assert res.symmetric
    assert res.plane_angle == pytest.approx(0.0, abs=1e-12)
    assert res.principal_at_stop <= 1e-6


def test_rotating_plane_rejects_sign_changing_start():
    g = build_grid(Domain.ball(), 8, 16)
    spec = builtin_system("lane_emden")
    U = Field.from_function(g, lambda r, t: np.stack([(1 - r) * (2 + np.sin(2 * t))] * 2))
    with pytest.raises(HypothesisError):
        rotating_plane(spec, U, g.direction(1))


def test_rotating_plane_on_symmetric_state_stops_at_once(radial):
    spec, U = radial
    res = rotating_plane(spec, U, U.grid.direction(3))
    assert res.steps == 0 and res.symmetric


def test_foliated_schwarz_classification(annulus, henon, radial):
    for spec, U in (annulus, henon):
        rep = foliated_schwarz_report(U)
        assert rep.classification == "foliated_schwarz"
        assert rep.best_axis.index == 0
        assert rep.axial_defect <= DEFAULT.tol_axial
        assert max(rep.angular_monotonicity_defect) <= DEFAULT.tol_mono
    assert foliated_schwarz_report(radial[1]).classification == "radial"


def test_zero_field_counts_as_radial():
    g = build_grid(Domain.ball(), 4, 8)
    assert foliated_schwarz_report(Field.zeros(g, 2)).classification == "radial"


def test_asymmetric_field_detected():
    g = build_grid(Domain.ball(), 6, 24)
    U = Field.from_function(g, lambda r, t: np.stack(
        [(1 - r) * (2 + np.cos(t) + np.sin(3 * t)), (1 - r) * (2 + np.cos(t))]))
    assert foliated_schwarz_report(U).classification == "asymmetric"


@settings(max_examples=20, deadline=None)
@given(k=st.integers(0, 31), amp=st.floats(0.1, 2.0))
def test_symmetry_defects_of_rotated_bump(k, amp):
    g = build_grid(Domain.ball(), 6, 32)
    axis = g.direction(k)
    U = Field.from_function(g, lambda r, t: np.stack(
        [(1 - r * r) * np.exp(amp * np.cos(t - axis.angle))] * 2))
    assert axial_defect(U, k) <= 1e-12
    assert np.all(monotonicity_defect(U, k) <= 1e-12)
    assert radiality_defect(U) > 0.01
    assert foliated_schwarz_report(U).best_axis.index == k


def test_coupling_residual_vanishes_on_diagonal(annulus):
    spec, U = annulus
    res = coupling_residual(spec, U)
    assert res.sup == 0.0
    assert not res.radial_caveat


def test_coupling_residual_radial_caveat():
    # lam != mu: the Jacobian is not symmetric, but the solution is radial
    g = build_grid(Domain.ball(), 12, 24)
    spec, U = exponential_solution(g, 0.2, 0.6)
    res = coupling_residual(spec, U)
    assert res.sup > 0 and res.radial_caveat


def test_coupling_residual_diagonal_radial(radial):
    spec, U = radial
    res = coupling_residual(spec, U)
    assert res.sup == 0.0 and not res.radial_caveat


def test_angular_mode_check_reports_sizes(annulus):
    spec, U = annulus
    res = angular_mode_check(spec, U)
    assert res.u_theta_norm > 0 and res.u_norm > 0
    assert np.isfinite(res.residual)


def test_exponential_solutions_are_radial():
    g = build_grid(Domain.ball(), 12, 24)
    _, U = exponential_solution(g, 0.4)
    assert radiality_defect(U) <= 1e-10
    assert cap_region(g, g.direction(0)).size == g.size // 2
