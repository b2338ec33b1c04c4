"""Capped-simplex projection and per-node subproblem solvers."""

import numpy as np
import pytest

from fairalloc import (
    CappedSimplex,
    project,
    solve_source_subproblem,
    solve_target_subproblem,
)
from fairalloc.projection import project_rows

from conftest import single_edge, small_scenario


def brute_distance(v, box, step):
    """Smallest squared distance from v to any grid point of the set."""
    axes = [np.arange(0.0, box.upper + step / 2, step)] * box.size
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.size)
    sums = mesh.sum(axis=1)
    ok = (sums >= box.lower - 1e-9) & (sums <= box.upper + 1e-9)
    d2 = ((mesh[ok] - v) ** 2).sum(axis=1)
    return float(d2.min())


# ---------------------------------------------------------------------------
# project


@pytest.mark.parametrize(
    "v,lower,upper,expected",
    [
        ((1.0, 1.0), 0.0, 4.0, (1.0, 1.0)),  # already feasible
        ((3.0, 3.0), 0.0, 4.0, (2.0, 2.0)),  # equal split of the cap
        ((5.0, 1.0), 0.0, 4.0, (4.0, 0.0)),
        ((0.5, 0.5), 2.0, 4.0, (1.0, 1.0)),  # lifted to the lower bound
    ],
)
def test_project_reference_points(v, lower, upper, expected):
    box = CappedSimplex(size=2, lower=lower, upper=upper)
    np.testing.assert_allclose(project(np.array(v), box), expected, atol=1e-9)


def test_project_matches_fine_grid():
    # independent check of the two derived cases via brute-force search
    for v, lower in [((5.0, 1.0), 0.0), ((0.5, 0.5), 2.0)]:
        box = CappedSimplex(size=2, lower=lower, upper=4.0)
        w = project(np.array(v), box)
        ours = float(((w - np.array(v)) ** 2).sum())
        assert ours <= brute_distance(np.array(v), box, 0.001) + 1e-9


def test_project_single_coordinate_clamps():
    assert project(np.array([5.0]), CappedSimplex(1, 0.0, 4.0))[0] == 4.0
    assert project(np.array([-1.0]), CappedSimplex(1, 0.0, 4.0))[0] == 0.0
    assert project(np.array([0.5]), CappedSimplex(1, 2.0, 4.0))[0] == 2.0
    assert project(np.array([3.0]), CappedSimplex(1, 0.0, 4.0))[0] == 3.0


def test_capped_simplex_validation():
    with pytest.raises(ValueError):
        CappedSimplex(size=0, lower=0.0, upper=1.0)
    with pytest.raises(ValueError):
        CappedSimplex(size=2, lower=-1.0, upper=1.0)
    with pytest.raises(ValueError):
        CappedSimplex(size=2, lower=2.0, upper=1.0)


def random_box(rng, n):
    lower = float(rng.uniform(0, 2)) if rng.random() < 0.4 else 0.0
    return CappedSimplex(size=n, lower=lower, upper=lower + float(rng.uniform(0, 4)))


def test_project_properties():
    """Feasibility, idempotence, nonexpansiveness on random inputs."""
    rng = np.random.default_rng(2024)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        box = random_box(rng, n)
        u = rng.normal(0, 3, n)
        v = rng.normal(0, 3, n)
        pu, pv = project(u, box), project(v, box)
        assert (pu >= -1e-12).all()
        assert box.lower - 1e-9 <= pu.sum() <= box.upper + 1e-9
        assert np.abs(project(pu, box) - pu).max() <= 1e-10
        assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-10


def test_project_rows_matches_scalar_project():
    rng = np.random.default_rng(77)
    rows, width = 40, 6
    V = rng.normal(0, 3, (rows, width))
    mask = np.zeros((rows, width), dtype=bool)
    lower = np.zeros(rows)
    upper = np.zeros(rows)
    boxes = []
    for r in range(rows):
        n = int(rng.integers(1, width + 1))
        mask[r, :n] = True
        box = random_box(rng, n)
        boxes.append(box)
        lower[r], upper[r] = box.lower, box.upper
    out = project_rows(V, lower, upper, mask)
    for r, box in enumerate(boxes):
        n = box.size
        np.testing.assert_allclose(
            out[r, :n], project(V[r, :n], box), atol=1e-10, rtol=0
        )
        assert (out[r, n:] == 0).all()  # padding stays zero


# ---------------------------------------------------------------------------
# target subproblem


def test_target_subproblem_pure_proximal():
    sc = small_scenario(
        [
            ("t1", "s1", ("linear", 0.0), ("linear", 1.0), ("linear", 0.0)),
            ("t1", "s2", ("linear", 0.0), ("linear", 1.0), ("linear", 0.0)),
        ],
        p_hi={"t1": 4.0},
        q_hi={"s1": 4.0, "s2": 4.0},
    )
    res = solve_target_subproblem(
        sc, "t1", np.array([1.0, 1.0]), np.zeros(2), eta=1.0
    )
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-7)


def test_target_subproblem_fairness_root():
    # single edge, only the fairness term pulls: optimum solves v^2+v-1=0
    sc = single_edge(d=("linear", 0.0), weight=1.0)
    res = solve_target_subproblem(sc, "t1", np.zeros(1), np.zeros(1), eta=1.0)
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    assert res.x[0] == pytest.approx(golden, abs=1e-7)

    # grid verification at step 1e-5
    grid = np.arange(0.0, 4.0 + 1e-9, 1e-5)
    vals = -np.log1p(grid) + 0.5 * grid**2
    assert abs(grid[np.argmin(vals)] - res.x[0]) < 2e-5


def test_target_subproblem_cap_binds():
    sc = small_scenario(
        [
            ("t1", "s1", ("linear", 2.0), ("linear", 0.0), ("linear", 0.0)),
            ("t1", "s2", ("linear", 2.0), ("linear", 0.0), ("linear", 0.0)),
        ],
        p_hi={"t1": 4.0},
        q_hi={"s1": 4.0, "s2": 4.0},
    )
    res = solve_target_subproblem(sc, "t1", np.zeros(2), np.zeros(2), eta=1.0)
    np.testing.assert_allclose(res.x, [2.0, 2.0], atol=1e-7)


# ---------------------------------------------------------------------------
# source subproblem


def test_source_subproblem_pure_proximal():
    sc = single_edge(s=("linear", 1.0), c=("linear", 1.0))  # net-zero margin
    res = solve_source_subproblem(sc, "s1", np.array([1.0]), np.zeros(1), eta=1.0)
    assert res.x[0] == pytest.approx(1.0, abs=1e-7)


def test_source_subproblem_linear_cost():
    sc = single_edge(s=("linear", 3.0), c=("linear", 1.0))
    res = solve_source_subproblem(sc, "s1", np.zeros(1), np.zeros(1), eta=1.0)
    assert res.x[0] == pytest.approx(2.0, abs=1e-7)


def test_source_subproblem_quadratic_cost():
    sc = single_edge(s=("linear", 3.0), c=("quadratic", 1.0))
    res = solve_source_subproblem(sc, "s1", np.zeros(1), np.zeros(1), eta=1.0)
    assert res.x[0] == pytest.approx(1.0, abs=1e-7)


def test_source_subproblem_price_sign():
    # a positive price credits the source side: the optimum moves up
    sc = single_edge(s=("linear", 1.0), c=("linear", 1.0))
    base = solve_source_subproblem(sc, "s1", np.array([1.0]), np.zeros(1), eta=1.0)
    paid = solve_source_subproblem(sc, "s1", np.array([1.0]), np.array([0.5]), eta=1.0)
    assert paid.x[0] > base.x[0] + 0.1


def test_target_subproblem_price_sign():
    # a positive price charges the target side: the optimum moves down
    sc = single_edge(d=("linear", 1.0))
    base = solve_target_subproblem(sc, "t1", np.array([1.0]), np.zeros(1), eta=1.0)
    paid = solve_target_subproblem(sc, "t1", np.array([1.0]), np.array([0.5]), eta=1.0)
    assert paid.x[0] < base.x[0] - 0.1


# ---------------------------------------------------------------------------
# randomized subproblem checks


def random_subproblem_scenario(rng):
    def util():
        if rng.random() < 0.5:
            return ("log", float(rng.uniform(0.3, 3.0)))
        return ("linear", float(rng.uniform(0.0, 2.0)))

    def cost():
        if rng.random() < 0.5:
            return ("quadratic", float(rng.uniform(0.3, 2.0)))
        return ("linear", float(rng.uniform(0.0, 1.0)))

    n = int(rng.integers(1, 3))
    sources = {f"s{i}": float(rng.uniform(0.5, 3.0)) for i in range(1, n + 1)}
    edges = [("t1", s, util(), util(), cost()) for s in sources]
    lo = float(rng.uniform(0, 1)) if rng.random() < 0.3 else 0.0
    return small_scenario(
        edges,
        p_hi={"t1": lo + float(rng.uniform(0.5, 3.0))},
        q_hi=sources,
        p_lo={"t1": lo},
        weights={"t1": float(rng.uniform(0, 4))},
    )


def subproblem_objective(sc, x, v, consensus, price, eta):
    c = sc.compiled
    g = c.target_groups[x]
    val = (
        -(c.tgain_lin[g] * v).sum()
        - (c.tgain_log[g] * np.log1p(v)).sum()
        - c.weights[x] * np.log1p(v.sum())
        + (price * v).sum()
        + 0.5 * eta * ((v - consensus) ** 2).sum()
    )
    return float(val)


def test_target_subproblem_kkt_and_uniqueness():
    rng = np.random.default_rng(321)
    for _ in range(150):
        sc = random_subproblem_scenario(rng)
        n = sc.n_edges
        consensus = rng.uniform(-0.5, 2.0, n)
        price = rng.normal(0, 1, n)
        eta = float(rng.uniform(0.3, 3.0))
        res = solve_target_subproblem(sc, "t1", consensus, price, eta)
        assert res.converged
        assert res.pg_norm < 1e-6

        # shifting anchor and price together preserves the objective up to
        # a constant, so the solver starts elsewhere but must land on the
        # same (unique) minimizer
        shift = rng.normal(0, 1, n)
        res2 = solve_target_subproblem(
            sc, "t1", consensus + shift, price + eta * shift, eta
        )
        assert np.abs(res2.x - res.x).max() < 1e-6


def test_target_subproblem_beats_grid():
    # grid step 1e-3 over the full simplex box, so caps stay small here
    rng = np.random.default_rng(654)
    for _ in range(10):
        n = int(rng.integers(1, 3))
        sources = {f"s{i}": 2.0 for i in range(1, n + 1)}
        edges = [
            (
                "t1",
                s,
                ("log", float(rng.uniform(0.3, 3.0))),
                ("linear", 1.0),
                ("linear", 0.0),
            )
            for s in sources
        ]
        lo = float(rng.uniform(0, 0.3)) if rng.random() < 0.3 else 0.0
        sc = small_scenario(
            edges,
            p_hi={"t1": lo + float(rng.uniform(0.4, 1.2))},
            q_hi=sources,
            p_lo={"t1": lo},
            weights={"t1": float(rng.uniform(0, 4))},
        )
        consensus = rng.uniform(0, 1.0, n)
        price = rng.normal(0, 0.5, n)
        res = solve_target_subproblem(sc, "t1", consensus, price, eta=1.0)
        ours = subproblem_objective(sc, 0, res.x, consensus, price, 1.0)

        c = sc.compiled
        step = 1e-3
        axes = [np.arange(0.0, c.p_hi[0] + step / 2, step)] * n
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        sums = mesh.sum(axis=1)
        ok = (sums >= c.p_lo[0] - 1e-9) & (sums <= c.p_hi[0] + 1e-9)
        pts = mesh[ok]
        vals = (
            -(pts @ c.tgain_lin)
            - (np.log1p(pts) @ c.tgain_log)
            - c.weights[0] * np.log1p(pts.sum(axis=1))
            + pts @ price
            + 0.5 * ((pts - consensus) ** 2).sum(axis=1)
        )
        assert ours <= float(vals.min()) + 1e-4


def test_source_subproblem_beats_grid():
    rng = np.random.default_rng(987)
    for _ in range(10):
        sc = single_edge(
            s=("linear", float(rng.uniform(0, 3))),
            c=("quadratic", float(rng.uniform(0.2, 1.5))),
            q_hi=float(rng.uniform(0.4, 1.2)),
        )
        consensus = rng.uniform(0, 1.0, 1)
        price = rng.normal(0, 0.5, 1)
        res = solve_source_subproblem(sc, "s1", consensus, price, eta=1.0)
        assert res.pg_norm < 1e-6

        c = sc.compiled
        grid = np.arange(0.0, c.q_hi[0] + 5e-4, 1e-3)[:, None]
        vals = (
            -(grid @ (c.sgain_lin - c.cost_lin))
            + (grid**2) @ c.cost_quad
            - grid @ price
            + 0.5 * ((grid - consensus) ** 2).sum(axis=1)
        )
        ours = (
            -float(c.sgain_lin[0] - c.cost_lin[0]) * res.x[0]
            + float(c.cost_quad[0]) * res.x[0] ** 2
            - price[0] * res.x[0]
            + 0.5 * (res.x[0] - consensus[0]) ** 2
        )
        assert ours <= float(vals.min()) + 1e-4
