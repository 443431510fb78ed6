import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from coopsym.config import DEFAULT, ConfigurationError
from coopsym.grid import Domain, Field, build_grid, mirror_permutation
from coopsym.solver import (SeedError, continuation_branch, diagonal_seed, first_eigenfunction,
                            newton_solve, residual, scalar_seed, smallest_singular_value,
                            symmetric_basis, weighted_norm)
from coopsym.suites import bump_profile
from coopsym.systems import builtin_system

from oracles import lane_emden_ground_state

# frozen from tests/oracles.py: z(0) of the positive solution of -Delta z = z^3
LANE_EMDEN_Z0 = 3.573900981924888


def test_oracle_frozen():
    assert lane_emden_ground_state(3.0)[0] == pytest.approx(LANE_EMDEN_Z0, rel=1e-10)


def test_scalar_seed_matches_shooting_with_second_order():
    errs = []
    for n in (8, 16, 32):
        g = build_grid(Domain.ball(), n, 2 * n)
        z = scalar_seed(3.0, g)
        assert z.values.min() > 0
        errs.append(abs(z.values.max() - LANE_EMDEN_Z0))
    assert errs[-1] / LANE_EMDEN_Z0 < 1e-3
    assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8


def test_scalar_seed_profile_matches_shooting():
    g = build_grid(Domain.ball(), 32, 64)
    z = scalar_seed(3.0, g).values[0]
    _, zr = lane_emden_ground_state(3.0)
    assert np.max(np.abs(z - zr(g.r))) < 5e-3


def test_scalar_seed_rejections():
    g = build_grid(Domain.ball(), 8, 16)
    with pytest.raises(ConfigurationError):
        scalar_seed(1.0, g)
    with pytest.raises(ConfigurationError):
        scalar_seed(3.0, g, amplitude=0.0)
    # too small a start collapses onto -z or 0, which must not be accepted silently
    with pytest.raises(SeedError):
        scalar_seed(3.0, g, amplitude=0.7)


def test_first_eigenfunction_normalized():
    g = build_grid(Domain.ball(), 16, 32)
    lam, phi = first_eigenfunction(g)
    assert phi.max() == pytest.approx(1.0)
    assert phi.min() > 0
    assert np.allclose(g.laplacian @ phi, lam * phi, atol=1e-8)


def test_newton_solves_lane_emden_diagonal():
    g = build_grid(Domain.ball(), 16, 32)
    z = scalar_seed(3.0, g)
    spec = builtin_system("lane_emden")
    res = newton_solve(spec, g, diagonal_seed(z, 2).with_values(0.9 * diagonal_seed(z).values))
    assert res.converged and res.status == "converged"
    assert res.residual_norm <= DEFAULT.tol_res
    assert np.allclose(res.solution.values[0], z.values[0], atol=1e-8)
    assert res.history[-1] == res.residual_norm
    assert np.all(np.diff(res.history) < 0)


def test_newton_from_solution_takes_no_steps():
    g = build_grid(Domain.ball(), 8, 16)
    spec = builtin_system("exponential", {"lam": 0.0, "mu": 0.0})
    res = newton_solve(spec, g, Field.zeros(g, 2))
    assert res.converged and res.iterations == 0


def test_newton_reports_nonconvergence():
    g = build_grid(Domain.ball(), 8, 16)
    spec = builtin_system("exponential", {"lam": 5.0, "mu": 5.0})
    # beyond the fold of the minimal branch: no solution near zero
    res = newton_solve(spec, g, Field.zeros(g, 2), DEFAULT.override({"max_iter": 15}))
    assert not res.converged
    assert res.status in ("max_iter", "line_search_failed", "singular")


def test_residual_is_laplacian_minus_F():
    g = build_grid(Domain.ball(), 6, 12)
    spec = builtin_system("lane_emden")
    U = Field.from_function(
        g, lambda r, t: np.stack([1 - r * r, (1 - r * r) * (1 + 0.1 * np.cos(t))]))
    R = residual(g, spec.eval_F, U.values)
    expect = np.stack([g.laplacian @ U.values[i] for i in range(2)]) - spec.F(U)
    assert np.allclose(R, expect)
    assert weighted_norm(g, R) > 0


@settings(max_examples=20, deadline=None)
@given(nt=st.sampled_from([8, 16, 24]), line=st.integers(0, 63), m=st.integers(1, 3))
def test_symmetric_basis_spans_invariant_fields(nt, line, m):
    g = build_grid(Domain.ball(), 3, nt)
    line %= 2 * nt
    P, S, perm = symmetric_basis(g, line, m)
    n = m * g.size
    assert P.shape[0] == n
    # every column is invariant under the mirror, and P^T P is diagonal positive
    full_perm = np.concatenate([perm + k * g.size for k in range(m)])
    Pd = P.toarray()
    assert np.allclose(Pd[full_perm], Pd)
    G = Pd.T @ Pd
    assert np.allclose(G, np.diag(np.diag(G)))
    assert np.array_equal(perm, mirror_permutation(g, line))
    assert S is not None


@settings(max_examples=20, deadline=None)
@given(n=st.integers(3, 25), seed=st.integers(0, 1000))
def test_smallest_singular_value_relative(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    s = np.linalg.svd(A, compute_uv=False)[-1]
    scale = np.sqrt(np.abs(A).sum(axis=0).max() * np.abs(A).sum(axis=1).max())
    est = smallest_singular_value(sp.csc_matrix(A), iters=200)
    assert est == pytest.approx(s / scale, rel=1e-6)


def test_symmetric_newton_preserves_mirror_symmetry():
    g = build_grid(Domain.annulus(1.0, 2.0), 8, 32)
    spec = builtin_system("lane_emden")
    z = scalar_seed(3.0, g, profile=bump_profile(g), symmetry_line=0)
    res = newton_solve(spec, g, diagonal_seed(z).with_values(1.05 * diagonal_seed(z).values),
                       symmetry_line=0)
    perm = mirror_permutation(g, 0)
    assert res.converged
    assert np.allclose(res.solution.values[:, perm], res.solution.values, atol=1e-12)


def test_continuation_exponential_branch():
    g = build_grid(Domain.ball(), 8, 16)
    path = [{"lam": t, "mu": t} for t in np.linspace(0.0, 0.5, 6)]
    br = continuation_branch(lambda p: builtin_system("exponential", p), path, Field.zeros(g, 2))
    assert br.status == "complete" and br.fold is None
    assert len(br.points) == 6
    maxima = [pt.solve.solution.values.max() for pt in br.points]
    assert np.all(np.diff(maxima) > 0)
    assert all(pt.morse_index == 0 for pt in br.points)


def test_continuation_detects_fold():
    g = build_grid(Domain.ball(), 8, 16)
    path = [{"lam": t, "mu": t} for t in np.linspace(0.0, 3.0, 7)]
    br = continuation_branch(lambda p: builtin_system("exponential", p), path, Field.zeros(g, 2))
    assert br.status in ("fold", "step_underflow")
    assert br.points[-1].params["lam"] < 3.0


def test_continuation_empty_path():
    g = build_grid(Domain.ball(), 4, 8)
    br = continuation_branch(lambda p: builtin_system("exponential", p), [], Field.zeros(g, 2))
    assert br.points == []
