import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopsym.config import ConfigurationError
from coopsym.grid import Domain, Field, build_grid, cap_region
from coopsym.systems import (bipartitions, builtin_names, builtin_system, check_cooperative,
                             check_fully_coupled_along, irreducible)

GRID = build_grid(Domain.ball(), 6, 16)

PARAMS = {
    "schrodinger": {"b": 1.5, "omega": 0.7, "q": 3.0},
    "exponential": {"lam": 0.3, "mu": 0.8},
    "lane_emden": {"p": 3.0, "q": 2.5},
    "henon": {"p": 3.0, "q": 2.0, "alpha": 1.0, "beta": 2.0},
}

finite = st.floats(-2.0, 2.0, allow_nan=False)


def numeric_jacobian(spec, r, U, h=1e-5):
    J = np.empty((2, 2, U.shape[1]))
    for j in range(2):
        dU = np.zeros_like(U)
        dU[j] = h
        J[:, j] = (spec.eval_F(r, U + dU) - spec.eval_F(r, U - dU)) / (2 * h)
    return J


def test_builtins_listed():
    assert builtin_names() == ["exponential", "henon", "lane_emden", "schrodinger"]


@pytest.mark.parametrize("name", sorted(PARAMS))
@settings(max_examples=30, deadline=None)
@given(u=st.lists(st.tuples(finite, finite), min_size=1, max_size=8),
       r=st.floats(0.05, 1.0))
def test_jacobian_matches_finite_differences(name, u, r):
    spec = builtin_system(name, PARAMS[name])
    U = np.array(u, dtype=float).T
    # keep away from the kinks of |u|^s where the derivative is not smooth
    U = np.where(np.abs(U) < 1e-2, 0.3, U)
    rr = np.full(U.shape[1], r)
    Jn = numeric_jacobian(spec, rr, U)
    Ja = spec.eval_J(rr, U)
    assert np.all(np.abs(Jn - Ja) <= 1e-6 * (1.0 + np.abs(Ja)))


@pytest.mark.parametrize("name", sorted(PARAMS))
def test_jacobian_on_100_random_probes(name):
    spec = builtin_system(name, PARAMS[name])
    rng = np.random.default_rng(11)
    U = rng.uniform(0.05, 2.0, (2, 100)) * rng.choice([-1.0, 1.0], (2, 100))
    r = rng.uniform(0.0, 1.0, 100)
    Jn = numeric_jacobian(spec, r, U)
    assert np.max(np.abs(Jn - spec.eval_J(r, U)) / (1.0 + np.abs(Jn))) <= 1e-6


def test_unknown_system_and_parameters():
    with pytest.raises(ConfigurationError):
        builtin_system("heat")
    with pytest.raises(ConfigurationError):
        builtin_system("exponential", {"nu": 1.0})


def test_parameter_domains():
    with pytest.raises(ConfigurationError):
        builtin_system("schrodinger", {"q": 1.5})
    with pytest.raises(ConfigurationError):
        builtin_system("lane_emden", {"p": 1.0})
    with pytest.raises(ConfigurationError):
        builtin_system("henon", {"alpha": -1.0})


def test_schrodinger_coupling_term():
    spec = builtin_system("schrodinger", {"b": 2.0, "omega": 1.0, "q": 2.0})
    U = np.array([[0.5], [0.25]])
    F = spec.eval_F(np.array([0.5]), U)
    # q = 2: f_1 = u1^3 + b u2^2 u1 - u1
    assert F[0, 0] == pytest.approx(0.125 + 2.0 * 0.0625 * 0.5 - 0.5)
    assert F[1, 0] == pytest.approx(0.25 ** 3 + 2.0 * 0.25 * 0.25 - 0.25)


def test_pair_terms_reconstruct_F():
    spec = builtin_system("henon", PARAMS["henon"])
    g = spec.pair_terms()
    rng = np.random.default_rng(1)
    U = rng.uniform(0.1, 1.0, size=(2, 10))
    r = rng.uniform(0.1, 1.0, size=10)
    F = spec.eval_F(r, U)
    J = spec.eval_J(r, U)
    for i, k in ((0, 1), (1, 0)):
        val, dii, dik = g(r, U[i], U[k], i, k)
        assert np.allclose(val, F[i])
        assert np.allclose(dii, J[i, i])
        assert np.allclose(dik, J[i, k])


@pytest.mark.parametrize("m,count", [(2, 2), (3, 6), (4, 14)])
def test_bipartitions_count(m, count):
    parts = list(bipartitions(m))
    assert len(parts) == count
    for I, J in parts:
        assert sorted(I + J) == list(range(m))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5).flatmap(
    lambda m: st.lists(st.booleans(), min_size=m * m, max_size=m * m).map(
        lambda b: np.array(b).reshape(m, m))))
def test_irreducible_matches_strong_connectivity(pattern):
    from scipy.sparse.csgraph import connected_components
    m = pattern.shape[0]
    adj = pattern & ~np.eye(m, dtype=bool)
    n, _ = connected_components(adj.astype(int), directed=True, connection="strong")
    assert irreducible(adj) == (n == 1)


def test_lane_emden_cooperative_and_fully_coupled_on_positive_state():
    spec = builtin_system("lane_emden")
    U = Field.from_function(GRID, lambda r, t: np.stack([1.1 - r * r] * 2))
    rep = check_fully_coupled_along(spec, U)
    assert rep.cooperative and rep.fully_coupled
    assert np.all(rep.witness[~np.eye(2, dtype=bool)] > 0)


def test_zero_state_is_not_fully_coupled():
    spec = builtin_system("lane_emden")
    rep = check_fully_coupled_along(spec, Field.zeros(GRID, 2))
    assert rep.cooperative and not rep.fully_coupled


def test_sign_changing_state_breaks_cooperativity():
    spec = builtin_system("schrodinger", {"b": 1.0, "omega": 1.0, "q": 2.0})
    U = Field.from_function(GRID, lambda r, t: np.stack([np.ones_like(r), r * np.cos(t)]))
    rep = check_cooperative(spec, U)
    assert not rep.cooperative
    assert rep.violations


def test_coupling_on_cap_only_sees_cap_nodes():
    spec = builtin_system("lane_emden")
    # component 2 vanishes on the right half, so the cap around e = (1, 0) decouples
    U = Field.from_function(
        GRID, lambda r, t: np.stack([np.ones_like(r), np.maximum(-r * np.cos(t), 0.0)]))
    e = GRID.direction(0)
    assert not check_fully_coupled_along(spec, U, cap_region(GRID, e)).fully_coupled
    assert check_fully_coupled_along(spec, U, cap_region(GRID, e.opposite())).fully_coupled


def test_convexity_certificates():
    U_pos = Field(GRID, np.ones((2, GRID.size)))
    U_neg = Field(GRID, -np.ones((2, GRID.size)))
    le = builtin_system("lane_emden")
    assert le.convex_along(U_pos) and not le.convex_along(U_neg)
    assert builtin_system("exponential").convex_along(U_neg)
