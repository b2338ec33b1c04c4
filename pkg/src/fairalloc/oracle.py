"""Independent reference solvers for validating the distributed engine.

Two routes that share no iteration machinery with the consensus solver:

- :func:`solve_centralized` maximizes social utility directly with
  projected gradient ascent.  Projection onto the whole coupled feasible
  set (all target and source capped simplices at once) uses alternating
  per-side sweeps with Dykstra corrections, finished by an exact
  active-set solve so the returned point is the true projection, not
  merely a member of the set.
- :func:`grid_search` exhaustively enumerates a regular grid; tractable
  only for tiny instances, it depends on no optimization theory at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    Scenario,
    TransportPlan,
    plan_from_vector,
    utility_gradient,
    utility_of_vector,
)
from .projection import CappedSimplex, project

#: Largest variable count :func:`grid_search` accepts.
GRID_LIMIT = 4


@dataclass(frozen=True)
class OracleOptions:
    """Reference-solver knobs.

    ``step_rule`` selects the ascent stepping: ``"backtracking"`` (line
    search seeded by a Barzilai-Borwein step; default) or ``"fixed"``
    (conservative inverse-curvature step).
    """

    step_rule: str = "backtracking"
    tol: float = 1e-10
    max_iters: int = 20000
    grid_resolution: float = 1e-3

    def __post_init__(self):
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError(
                f"step_rule must be 'backtracking' or 'fixed', got {self.step_rule!r}"
            )
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.grid_resolution <= 0:
            raise ValueError(
                f"grid_resolution must be positive, got {self.grid_resolution}"
            )


@dataclass(frozen=True, eq=False)
class CentralizedResult:
    plan: TransportPlan
    objective: float
    iterations: int
    converged: bool
    pg_norm: float


@dataclass(frozen=True, eq=False)
class GridResult:
    plan: TransportPlan
    objective: float
    n_evaluated: int


# ---------------------------------------------------------------------------
# Joint feasible set


def _project_side(scenario, v, side):
    c = scenario.compiled
    groups = c.target_groups if side == "t" else c.source_groups
    lo = c.p_lo if side == "t" else c.q_lo
    hi = c.p_hi if side == "t" else c.q_hi
    w = v.copy()
    for i, g in enumerate(groups):
        if len(g):
            w[g] = project(v[g], CappedSimplex(len(g), float(lo[i]), float(hi[i])))
    return w


def feasibility_violation(scenario: Scenario, v: np.ndarray) -> float:
    """Largest constraint violation of ``v`` (0 when feasible)."""
    c = scenario.compiled
    v = np.asarray(v, dtype=float)
    worst = max(0.0, -float(v.min(initial=0.0)))
    t_tot = scenario.target_totals(v)
    s_tot = scenario.source_totals(v)
    worst = max(worst, float((c.p_lo - t_tot).max(initial=0.0)))
    worst = max(worst, float((t_tot - c.p_hi).max(initial=0.0)))
    worst = max(worst, float((c.q_lo - s_tot).max(initial=0.0)))
    worst = max(worst, float((s_tot - c.q_hi).max(initial=0.0)))
    return worst


def _exact_projection(scenario, v, x, eps=1e-7, rounds=60):
    """Exact projection of ``v`` via active-set refinement seeded at ``x``.

    ``x`` is an approximately projected point (from the alternating
    sweeps); its near-zero coordinates and near-binding node sums seed
    the working sets.  Each round solves the equality-constrained
    projection on the guess, then repairs the first inconsistency found:
    negative free coordinates are zeroed, wrong-signed multipliers
    release their constraint, violated bounds activate, and zero
    coordinates with downhill pressure are freed.  Returns the
    KKT-verified projection, or None if no consistent set is found
    within ``rounds``.
    """
    c = scenario.compiled
    n = x.size
    zero = x < eps

    def group(side, i):
        return c.target_groups[i] if side == "t" else c.source_groups[i]

    active = []  # (side, node, bound, sign); sign 0 marks an equality bound
    for side, count, lo, hi in (
        ("t", scenario.n_targets, c.p_lo, c.p_hi),
        ("s", scenario.n_sources, c.q_lo, c.q_hi),
    ):
        for i in range(count):
            total = x[group(side, i)].sum()
            if hi[i] - lo[i] < 1e-15:
                active.append((side, i, hi[i], 0))
            elif total >= hi[i] - eps:
                active.append((side, i, hi[i], +1))
            elif lo[i] > 0 and total <= lo[i] + eps:
                active.append((side, i, lo[i], -1))

    for _ in range(rounds):
        m = len(active)
        free = ~zero
        if m == 0:
            w = np.where(free, np.maximum(v, 0.0), 0.0)
            mult = np.zeros(n)
            theta = np.empty(0)
        else:
            A = np.zeros((m, n))
            rhs = np.empty(m)
            for j, (side, i, bound, _) in enumerate(active):
                A[j, group(side, i)] = 1.0
                A[j, zero] = 0.0
                rhs[j] = A[j] @ v - bound
            theta, *_ = np.linalg.lstsq(A @ A.T, rhs, rcond=None)
            mult = np.zeros(n)
            for j, (side, i, _, _) in enumerate(active):
                mult[group(side, i)] += theta[j]
            w = np.where(free, v - mult, 0.0)

        # 1) free coordinate driven negative -> clamp it to the zero set
        neg = free & (w < -1e-12)
        if neg.any():
            zero = zero | neg
            continue
        w = np.maximum(w, 0.0)

        # 2) wrong-signed node multiplier -> release that constraint
        worst_j, worst_val = -1, -1e-9
        for j, (_, _, _, sign) in enumerate(active):
            if sign and sign * theta[j] < worst_val:
                worst_j, worst_val = j, sign * theta[j]
        if worst_j >= 0:
            active.pop(worst_j)
            continue

        # 3) violated inactive node bound -> activate the worst one
        candidate, worst = None, 1e-9
        for side, count, lo, hi in (
            ("t", scenario.n_targets, c.p_lo, c.p_hi),
            ("s", scenario.n_sources, c.q_lo, c.q_hi),
        ):
            for i in range(count):
                if any(a[0] == side and a[1] == i for a in active):
                    continue
                total = w[group(side, i)].sum()
                if total - hi[i] > worst:
                    candidate, worst = (side, i, hi[i], +1), total - hi[i]
                elif lo[i] - total > worst:
                    candidate, worst = (side, i, lo[i], -1), lo[i] - total
        if candidate is not None:
            active.append(candidate)
            continue

        # 4) zero coordinate wants to rise -> free it
        rising = zero & (v - mult > 1e-8)
        if rising.any():
            zero = zero & ~rising
            continue

        if feasibility_violation(scenario, w) > 1e-9:
            return None
        return w
    return None


def project_onto_feasible_set(
    scenario: Scenario, v: np.ndarray, tol: float = 1e-10, max_sweeps: int = 2000
) -> np.ndarray:
    """Euclidean projection onto the coupled feasible set of a scenario.

    Alternates target-side and source-side projections with Dykstra
    correction terms; from the second sweep on, attempts the exact
    active-set finish and returns it once it verifies within ``tol``.
    """
    v = np.asarray(v, dtype=float)
    x = np.maximum(v, 0.0)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for sweep in range(max_sweeps):
        y = _project_side(scenario, x + p, "t")
        p = x + p - y
        x = _project_side(scenario, y + q, "s")
        q = y + q - x
        if sweep >= 1:
            w = _exact_projection(scenario, v, x)
            if w is not None and feasibility_violation(scenario, w) < tol:
                return w
    return x


# ---------------------------------------------------------------------------
# Centralized reference solve


def solve_centralized(
    scenario: Scenario,
    options: OracleOptions | None = None,
    *,
    x0: np.ndarray | None = None,
) -> CentralizedResult:
    """Maximize social utility by projected gradient ascent.

    Stops when the unit-step projected-gradient displacement
    ``|x - P(x + grad)|`` drops below ``options.tol``.  The default
    backtracking rule seeds an Armijo line search with a
    Barzilai-Borwein step; ``step_rule="fixed"`` uses the inverse
    curvature bound instead.
    """
    opts = options or OracleOptions()
    c = scenario.compiled
    n = scenario.n_variables
    start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    x = project_onto_feasible_set(scenario, start)
    g = utility_gradient(scenario, x)

    if opts.step_rule == "fixed":
        degrees = np.array([len(g_) for g_ in c.target_groups], dtype=float)
        curvature = (
            float((c.tgain_log + c.sgain_log).max(initial=0.0))
            + 2.0 * float(c.cost_quad.max(initial=0.0))
            + float((c.weights * degrees).max(initial=0.0))
        )
        step = 1.0 / max(curvature, 1e-12)
        pg = np.inf
        for it in range(opts.max_iters):
            reference = project_onto_feasible_set(scenario, x + g)
            pg = float(np.linalg.norm(x - reference))
            if pg < opts.tol:
                return _centralized_result(scenario, x, it, True, pg)
            x = project_onto_feasible_set(scenario, x + step * g)
            g = utility_gradient(scenario, x)
        return _centralized_result(scenario, x, opts.max_iters, False, pg)

    step = 1.0
    pg = np.inf
    for it in range(opts.max_iters):
        reference = project_onto_feasible_set(scenario, x + g)
        pg = float(np.linalg.norm(x - reference))
        if pg < opts.tol:
            return _centralized_result(scenario, x, it, True, pg)
        fx = utility_of_vector(scenario, x)
        t = step
        moved = False
        for _ in range(60):
            cand = project_onto_feasible_set(scenario, x + t * g)
            d = cand - x
            if not d.any():
                break
            gain = utility_of_vector(scenario, cand) - fx
            if gain >= 1e-4 * (g @ d) - 1e-12 * (1.0 + abs(fx)):
                moved = True
                break
            t *= 0.5
        if not moved:
            # no ascent direction left at line-search resolution
            return _centralized_result(scenario, x, it, False, pg)
        g_new = utility_gradient(scenario, cand)
        s_vec = cand - x
        y_vec = g_new - g
        sy = -(s_vec @ y_vec)
        step = (s_vec @ s_vec) / sy if sy > 1e-18 else 2.0 * t
        step = min(max(step, 1e-10), 1e6)
        x, g = cand, g_new
    return _centralized_result(scenario, x, opts.max_iters, False, pg)


def _centralized_result(scenario, x, iterations, converged, pg):
    return CentralizedResult(
        plan=plan_from_vector(scenario, x),
        objective=utility_of_vector(scenario, x),
        iterations=iterations,
        converged=converged,
        pg_norm=pg,
    )


# ---------------------------------------------------------------------------
# Exhaustive grid search


def grid_search(
    scenario: Scenario, options: OracleOptions | None = None
) -> GridResult:
    """Enumerate the feasible grid at ``options.grid_resolution``.

    Refuses scenarios with more than ``GRID_LIMIT`` (edge, period)
    variables.  Grid points run over ``[0, min(target cap, source cap)]``
    per variable; node-sum feasibility is enforced within 1e-9.  Ties
    resolve to the lexicographically smallest point (variable order).
    """
    opts = options or OracleOptions()
    n = scenario.n_variables
    if n > GRID_LIMIT:
        raise ValueError(
            f"grid search supports at most {GRID_LIMIT} variables, got {n}"
        )
    c = scenario.compiled
    h = opts.grid_resolution
    axes = []
    for e_idx in range(scenario.n_edges):
        cap = min(
            float(c.p_hi[c.target_of[e_idx * scenario.horizon]]),
            float(c.q_hi[c.source_of[e_idx * scenario.horizon]]),
        )
        points = int(np.floor(cap / h + 1e-9))
        axes.extend([np.arange(points + 1) * h] * scenario.horizon)

    coef_lin = c.tgain_lin + c.sgain_lin - c.cost_lin
    coef_log = c.tgain_log + c.sgain_log
    if len(axes) > 1:
        mesh = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(
            -1, n - 1
        )
    else:
        mesh = np.zeros((1, 0))
    best_val, best_pt = -np.inf, None
    n_evaluated = 0
    for v0 in axes[0]:
        pts = np.empty((mesh.shape[0], n))
        pts[:, 0] = v0
        pts[:, 1:] = mesh
        ok = np.ones(len(pts), dtype=bool)
        for x_i in range(scenario.n_targets):
            total = pts[:, c.target_groups[x_i]].sum(axis=1)
            ok &= (total >= c.p_lo[x_i] - 1e-9) & (total <= c.p_hi[x_i] + 1e-9)
        for y_i in range(scenario.n_sources):
            total = pts[:, c.source_groups[y_i]].sum(axis=1)
            ok &= (total >= c.q_lo[y_i] - 1e-9) & (total <= c.q_hi[y_i] + 1e-9)
        if not ok.any():
            continue
        sub = pts[ok]
        n_evaluated += len(sub)
        vals = sub @ coef_lin + np.log1p(sub) @ coef_log - (sub * sub) @ c.cost_quad
        for x_i in range(scenario.n_targets):
            vals += c.weights[x_i] * np.log1p(
                sub[:, c.target_groups[x_i]].sum(axis=1)
            )
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_pt = float(vals[j]), sub[j]
    if best_pt is None:
        raise ValueError("no feasible grid point found")
    return GridResult(
        plan=plan_from_vector(scenario, best_pt),
        objective=best_val,
        n_evaluated=n_evaluated,
    )
