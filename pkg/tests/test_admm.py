"""Distributed solver: sweeps, consensus/dual updates, convergence."""

import numpy as np
import pytest

from fairalloc import (
    FeasibilityError,
    SolverOptions,
    consensus_update,
    dual_update,
    init_state,
    iterate,
    plan_to_vector,
    primal_residual,
    run,
)
from fairalloc.admm import SolverState, run_segment

from conftest import single_edge, small_scenario


def two_by_two(horizon=1):
    return small_scenario(
        [
            ("t1", "s1", ("linear", 2.0), ("linear", 1.0), ("linear", 0.5)),
            ("t1", "s2", ("log", 1.5), ("linear", 2.0), ("quadratic", 0.4)),
            ("t2", "s1", ("linear", 1.0), ("log", 1.0), ("linear", 0.2)),
            ("t2", "s2", ("linear", 2.5), ("linear", 0.5), ("quadratic", 0.6)),
        ],
        p_hi={"t1": 3.0, "t2": 2.0},
        q_hi={"s1": 2.0, "s2": 2.5},
        weights={"t1": 1.0, "t2": 2.0},
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# state plumbing


def test_init_state_sizes(fig1):
    state = init_state(fig1)
    assert state.iteration == 0
    for arr in (
        state.consensus,
        state.target_proposal,
        state.source_proposal,
        state.price,
    ):
        assert arr.shape == (10,)
        assert (arr == 0).all()


def test_init_state_scales_with_horizon():
    sc = two_by_two(horizon=3)
    assert init_state(sc).consensus.shape == (12,)


def test_init_state_rejects_infeasible():
    sc = single_edge(p_lo=5.0, p_hi=6.0, q_hi=4.0)
    with pytest.raises(FeasibilityError):
        init_state(sc)


def test_consensus_update_values():
    np.testing.assert_array_equal(
        consensus_update(np.array([2.0]), np.array([4.0])), [3.0]
    )
    x = np.array([0.3, 1.7])
    np.testing.assert_array_equal(consensus_update(x, x), x)
    np.testing.assert_array_equal(
        consensus_update(np.array([0.0]), np.array([1.0])), [0.5]
    )


def test_dual_update_values():
    assert dual_update(np.array([0.0]), np.array([3.0]), np.array([1.0]), 2.0)[0] == 2.0
    a = np.array([0.7])
    np.testing.assert_array_equal(dual_update(a, np.array([2.0]), np.array([2.0]), 5.0), a)
    assert dual_update(np.array([1.0]), np.array([0.0]), np.array([4.0]), 1.0)[0] == -1.0


def test_primal_residual_values():
    def state(pd, ps):
        n = len(pd)
        return SolverState(
            iteration=1,
            consensus=np.zeros(n),
            target_proposal=np.array(pd, dtype=float),
            source_proposal=np.array(ps, dtype=float),
            price=np.zeros(n),
        )

    assert primal_residual(state([1.0, 2.0], [1.0, 2.0])) == 0.0
    assert primal_residual(state([1.0, 2.3], [1.0, 2.0])) == pytest.approx(0.3)
    assert primal_residual(state([1.0, 2.0], [0.0, 2.0])) == 1.0


# ---------------------------------------------------------------------------
# iterate / run on analytic instances


def test_run_linear_lp_optimum():
    # maximize (2+3-1) z on [0,4]: the cap binds
    result = run(single_edge(), SolverOptions(tol=1e-8))
    assert result.converged
    assert result.plan.amounts[("t1", "s1", 1)] == pytest.approx(4.0, abs=1e-4)


def test_run_quadratic_interior_optimum():
    # maximize 5z - z^2 on [0,4]: optimum 2.5
    result = run(single_edge(c=("quadratic", 1.0)), SolverOptions(tol=1e-8))
    assert result.converged
    assert result.plan.amounts[("t1", "s1", 1)] == pytest.approx(2.5, abs=1e-4)


def test_run_zero_caps_give_zero_plan_immediately():
    sc = single_edge(d=("linear", 0.0), s=("linear", 0.0), c=("linear", 0.0), q_hi=0.0)
    result = run(sc, SolverOptions(tol=1e-8))
    assert result.converged
    assert result.iterations == 1
    assert all(v == 0.0 for v in result.plan.amounts.values())


def test_run_reports_non_convergence(fig1):
    result = run(fig1, SolverOptions(tol=1e-12, max_iters=3))
    assert not result.converged
    assert result.iterations == 3
    assert len(result.trajectory) == 3


def test_consensus_identity_every_iteration(fig1):
    opts = SolverOptions()
    state = init_state(fig1)
    for _ in range(25):
        state = iterate(fig1, state, opts)
        expected = 0.5 * (state.target_proposal + state.source_proposal)
        np.testing.assert_array_equal(state.consensus, expected)
        assert (state.target_proposal >= 0).all()
        assert (state.source_proposal >= 0).all()
        assert (state.consensus >= 0).all()


def test_converged_state_is_a_fixed_point():
    sc = single_edge(c=("quadratic", 1.0))
    result = run(sc, SolverOptions(tol=1e-10))
    again = iterate(sc, result.state, SolverOptions())
    assert np.abs(again.consensus - result.state.consensus).max() < 1e-8
    assert np.abs(again.price - result.state.price).max() < 1e-8


def test_dual_symmetry_replay(fig1):
    """Tracking separate per-side multipliers never splits them.

    The target-side multiplier moves by eta*(proposal - consensus) and the
    source-side one by eta*(consensus - proposal); with midpoint consensus
    both increments equal (eta/2)(pi_d - pi_s), so the two tracks stay
    identical to the engine's single merged price.
    """
    eta = 1.0
    opts = SolverOptions(eta=eta)
    state = init_state(fig1)
    alpha_d = np.zeros(10)
    alpha_s = np.zeros(10)
    for _ in range(30):
        state = iterate(fig1, state, opts)
        alpha_d = alpha_d + eta * (state.target_proposal - state.consensus)
        alpha_s = alpha_s + eta * (state.consensus - state.source_proposal)
        # equal up to accumulated rounding of the midpoint consensus
        np.testing.assert_allclose(alpha_d, alpha_s, atol=1e-12, rtol=0)
        np.testing.assert_allclose(alpha_d, state.price, atol=1e-12, rtol=0)


def test_feasibility_of_limit(fig1):
    result = run(fig1, SolverOptions(tol=1e-8))
    assert result.converged
    c = fig1.compiled
    pi_d = result.state.target_proposal
    pi_s = result.state.source_proposal
    for x in range(fig1.n_targets):
        total = pi_d[c.target_groups[x]].sum()
        assert c.p_lo[x] - 1e-8 <= total <= c.p_hi[x] + 1e-8
    for y in range(fig1.n_sources):
        total = pi_s[c.source_groups[y]].sum()
        assert c.q_lo[y] - 1e-8 <= total <= c.q_hi[y] + 1e-8
    # consensus bound violation is at most the tolerance scale
    consensus = plan_to_vector(fig1, result.plan)
    for x in range(fig1.n_targets):
        assert consensus[c.target_groups[x]].sum() <= c.p_hi[x] + 1e-6


# ---------------------------------------------------------------------------
# trajectory recording and determinism


def test_record_cadence(fig1):
    result = run(fig1, SolverOptions(tol=1e-8, record_every=10))
    ks = [r.iteration for r in result.trajectory]
    assert ks == sorted(ks)
    assert all(k % 10 == 0 for k in ks[:-1])
    assert ks[-1] == result.iterations  # final iteration always recorded


def test_trajectory_records_fields(fig1):
    result = run(fig1, SolverOptions(tol=1e-8, max_iters=50))
    rec = result.trajectory[0]
    assert rec.iteration == 1
    assert rec.reference_residual is None
    assert rec.segment == 0
    assert rec.primal_residual >= 0


def test_reference_residual_tracks_final_plan(fig1):
    ref = run(fig1, SolverOptions(tol=1e-8)).plan
    result = run(fig1, SolverOptions(tol=1e-8), reference=ref)
    residuals = [r.reference_residual for r in result.trajectory]
    assert all(r is not None for r in residuals)
    assert residuals[-1] < 1e-6
    assert residuals[0] > residuals[-1]


def test_same_options_reproduce_identical_trajectories(fig1):
    a = run(fig1, SolverOptions(tol=1e-8))
    b = run(fig1, SolverOptions(tol=1e-8))
    assert len(a.trajectory) == len(b.trajectory)
    for ra, rb in zip(a.trajectory, b.trajectory):
        assert ra == rb
    np.testing.assert_array_equal(a.state.consensus, b.state.consensus)


@pytest.mark.parametrize("threads", [2, 4])
def test_thread_count_does_not_change_results(fig1, threads):
    seq = run(fig1, SolverOptions(tol=1e-8))
    par = run(fig1, SolverOptions(tol=1e-8, threads=threads))
    assert seq.iterations == par.iterations
    np.testing.assert_array_equal(seq.state.consensus, par.state.consensus)
    np.testing.assert_array_equal(seq.state.price, par.state.price)
    for ra, rb in zip(seq.trajectory, par.trajectory):
        assert ra == rb


def test_run_segment_stops_at_boundary(fig1):
    records = []
    state = init_state(fig1)
    state, converged = run_segment(
        fig1, state, SolverOptions(tol=1e-8), records, end_iteration=40,
        stop_on_tol=False,
    )
    assert state.iteration == 40
    assert not converged
    assert records[-1].iteration == 40


@pytest.mark.parametrize(
    "kwargs",
    [
        {"eta": 0.0},
        {"tol": 0.0},
        {"tol": -1.0},
        {"max_iters": 0},
        {"record_every": 0},
        {"inner_tol": 0.0},
        {"threads": 0},
    ],
)
def test_solver_options_validation(kwargs):
    with pytest.raises(ValueError):
        SolverOptions(**kwargs)
