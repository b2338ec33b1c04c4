"""Projections onto per-node feasible sets and exact per-node subproblems.

A node's feasible set is a *capped simplex*: nonnegative shipments whose
sum lies in a closed interval.  Projection works by bisection on the
shift multiplier with an exact active-set pivot once the support is
identified, so returned sums sit on the bound to machine precision.

The strictly convex per-node subproblems are minimized by projected
gradient with Armijo backtracking; trial steps follow a Barzilai-Borwein
rule clamped to a safe inverse-Lipschitz floor where sufficient decrease
is guaranteed.

Batched variants operate on row-packed matrices (one node per row, padded
to the widest node and masked).  Each row's result depends only on that
row, which the solver relies on for reproducible multi-threaded runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Scenario

#: Sentinel for padded entries fed to the row projection: large and negative,
#: so padding never leaves zero.
_PAD = 1e30


@dataclass(frozen=True)
class CappedSimplex:
    """The set ``{v >= 0 (componentwise) : lower <= sum(v) <= upper}``."""

    size: int
    lower: float
    upper: float

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        if not (0.0 <= self.lower <= self.upper):
            raise ValueError(
                f"need 0 <= lower <= upper, got [{self.lower}, {self.upper}]"
            )

    def contains(self, v: np.ndarray, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        s = float(v.sum())
        return (
            v.shape == (self.size,)
            and float(v.min(initial=0.0)) >= -tol
            and self.lower - tol <= s <= self.upper + tol
        )


def project(v: np.ndarray, box: CappedSimplex) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``box``.

    Single-coordinate boxes clamp directly.  Otherwise the shifted
    threshold ``w(lam) = max(v - lam, 0)`` is bisected until the sum
    matches the violated bound within 1e-12, with an exact pivot on the
    current support short-circuiting the bisection.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (box.size,):
        raise ValueError(f"expected shape ({box.size},), got {v.shape}")
    if box.size == 1:
        return np.clip(v, max(0.0, box.lower), box.upper)
    lower, upper = box.lower, box.upper
    w = np.maximum(v, 0.0)
    s = w.sum()
    if lower - 1e-15 <= s <= upper + 1e-15:
        return w
    target = upper if s > upper else lower
    lo = v.min() - (upper + 1.0)
    hi = v.max() + max(lower, 0.0) + 1.0
    for _ in range(100):
        lam = 0.5 * (lo + hi)
        active = v - lam > 0
        n_active = int(active.sum())
        if n_active:
            lam_exact = (v[active].sum() - target) / n_active
            w_exact = np.maximum(v - lam_exact, 0.0)
            if abs(w_exact.sum() - target) <= 1e-12 * max(1.0, abs(target)):
                return w_exact
        w = np.maximum(v - lam, 0.0)
        s = w.sum()
        if abs(s - target) <= 1e-12 or hi - lo < 1e-14:
            break
        if s > target:
            lo = lam
        else:
            hi = lam
    return w


def project_rows(
    V: np.ndarray, lower: np.ndarray, upper: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Row-wise :func:`project` for packed node matrices.

    Row ``r`` of ``V`` holds one node's values padded to the common
    width; ``mask`` flags real entries.  Padded entries come back as 0.
    """
    Vm = np.where(mask, V, -_PAD)
    w = np.maximum(Vm, 0.0)
    s = w.sum(axis=1)
    need = (s < lower - 1e-15) | (s > upper + 1e-15)
    if not need.any():
        return w
    target = np.where(s > upper, upper, lower)
    vmin = np.where(mask, V, _PAD).min(axis=1)
    vmax = np.where(mask, V, -_PAD).max(axis=1)
    lo = vmin - (upper + 1.0)
    hi = vmax + np.maximum(lower, 0.0) + 1.0
    out = w.copy()
    done = ~need
    for _ in range(100):
        lam = 0.5 * (lo + hi)
        shifted = Vm - lam[:, None]
        active = shifted > 0
        n_active = active.sum(axis=1)
        sum_active = np.where(active, Vm, 0.0).sum(axis=1)
        lam_exact = (sum_active - target) / np.maximum(n_active, 1)
        w_exact = np.maximum(Vm - lam_exact[:, None], 0.0)
        s_exact = w_exact.sum(axis=1)
        good = (
            (~done)
            & (n_active > 0)
            & (np.abs(s_exact - target) <= 1e-12 * np.maximum(1.0, np.abs(target)))
        )
        if good.any():
            out[good] = w_exact[good]
            done = done | good
            if done.all():
                break
        w_bis = np.maximum(shifted, 0.0)
        s_bis = w_bis.sum(axis=1)
        go_up = (~done) & (s_bis > target)
        go_down = (~done) & ~go_up
        lo = np.where(go_up, lam, lo)
        hi = np.where(go_down, lam, hi)
        out[~done] = w_bis[~done]
        if (hi - lo).max() < 1e-14:
            break
    return out


def phase_lipschitz(
    log_coef: np.ndarray,
    quad_coef: np.ndarray,
    weights: np.ndarray | None,
    eta: float,
    width: int,
) -> float:
    """Curvature bound for a phase's subproblem objectives on the feasible set.

    Must be computed over the *whole* phase (all rows) and passed to every
    chunk, so chunked and sequential runs take identical steps.
    """
    lip = eta + float(log_coef.max(initial=0.0)) + 2.0 * float(quad_coef.max(initial=0.0))
    if weights is not None:
        lip += float(weights.max(initial=0.0)) * width
    return lip


def minimize_rows(
    anchors: np.ndarray,
    price: np.ndarray,
    lin: np.ndarray,
    log_coef: np.ndarray,
    quad_coef: np.ndarray,
    weights: np.ndarray | None,
    lower: np.ndarray,
    upper: np.ndarray,
    mask: np.ndarray,
    eta: float,
    lip: float,
    tol: float = 1e-8,
    max_iters: int = 10000,
    step0: np.ndarray | None = None,
):
    """Minimize every row's subproblem over its capped simplex.

    Row ``r`` minimizes, over ``v >= 0`` with ``lower[r] <= sum v <= upper[r]``::

        sum_j [ -lin*v - log_coef*log1p(v) + quad_coef*v^2 + price*v
                + eta/2 (v - anchors)^2 ]  -  weights[r]*log1p(sum_j v)

    (``weights=None`` drops the coupling term; callers fold any sign into
    ``price``.)  Returns ``(x, steps, converged, pg_norm, iterations)``
    where ``steps`` seeds the next call's ``step0`` for warm-started
    solvers and ``pg_norm`` is the per-row projected-gradient residual.
    """
    R, _ = anchors.shape

    def fun(V):
        row = (
            -lin * V
            - log_coef * np.log1p(np.where(mask, V, 0.0))
            + quad_coef * V * V
            + price * V
            + 0.5 * eta * (V - anchors) ** 2
        )
        t = np.where(mask, row, 0.0).sum(axis=1)
        if weights is not None:
            t = t - weights * np.log1p(np.where(mask, V, 0.0).sum(axis=1))
        return t

    def grad(V):
        g = (
            -lin
            - log_coef / (1.0 + V)
            + 2.0 * quad_coef * V
            + price
            + eta * (V - anchors)
        )
        if weights is not None:
            g = g - (weights / (1.0 + np.where(mask, V, 0.0).sum(axis=1)))[:, None]
        return np.where(mask, g, eta * V)

    safe = 1.0 / max(lip, 1e-12)  # descent guaranteed at or below this step
    step_hi = 1e4 * safe
    step = np.full(R, safe) if step0 is None else np.clip(step0, safe, step_hi)
    X = project_rows(anchors, lower, upper, mask)
    G = grad(X)
    done = np.zeros(R, dtype=bool)
    pgn = np.zeros(R)
    iterations = 0
    for it in range(max_iters):
        iterations = it
        PG = X - project_rows(X - G, lower, upper, mask)
        pgn = np.abs(np.where(mask, PG, 0.0)).max(axis=1)
        done = done | (pgn < tol)
        if done.all():
            break
        fX = fun(X)
        t = step.copy()
        live = ~done
        accepted = np.zeros(R, dtype=bool)
        Xc = X.copy()
        for _ in range(30):
            trial = ~accepted & live
            if not trial.any():
                break
            C = project_rows(X - t[:, None] * G, lower, upper, mask)
            D = C - X
            fC = fun(C)
            slope = np.where(mask, G * D, 0.0).sum(axis=1)
            ok = trial & (fC <= fX + 1e-4 * slope)
            # at the safe step decrease is guaranteed up to roundoff: accept
            floor = trial & ~ok & (t <= safe * 1.0000001)
            accepted = accepted | ok | floor
            Xc = np.where((ok | floor)[:, None], C, Xc)
            t = np.where(trial & ~ok & ~floor, np.maximum(0.5 * t, safe), t)
        Gn = grad(Xc)
        Sv = Xc - X
        Yv = Gn - G
        sy = np.where(mask, Sv * Yv, 0.0).sum(axis=1)
        ss = np.where(mask, Sv * Sv, 0.0).sum(axis=1)
        done = done | (live & (ss == 0.0))  # cannot move at the safe step
        new_step = np.where(sy > 1e-18, ss / np.maximum(sy, 1e-300), step_hi)
        step = np.where(live, np.clip(new_step, safe, step_hi), step)
        X, G = Xc, Gn
    if not done.all():
        # iteration cap: refresh the reported residual at the final point
        PG = X - project_rows(X - G, lower, upper, mask)
        pgn = np.abs(np.where(mask, PG, 0.0)).max(axis=1)
    return X, step, done.copy(), pgn, iterations


@dataclass(frozen=True)
class SubproblemResult:
    """Solution of a single node's proposal subproblem."""

    x: np.ndarray
    converged: bool
    iterations: int
    pg_norm: float


def _solve_single(
    group, consensus, price, lin, log_coef, quad_coef, weight, lower, upper, eta, tol, max_iters
) -> SubproblemResult:
    m = len(group)
    consensus = np.asarray(consensus, dtype=float)
    price = np.asarray(price, dtype=float)
    if consensus.shape != (m,) or price.shape != (m,):
        raise ValueError(f"consensus/price slices must have shape ({m},)")
    mask = np.ones((1, m), dtype=bool)
    weights = None if weight is None else np.array([weight])
    lip = phase_lipschitz(log_coef, quad_coef, weights, eta, m)
    x, _, converged, pgn, iterations = minimize_rows(
        consensus[None, :],
        price[None, :],
        lin[None, :],
        log_coef[None, :],
        quad_coef[None, :],
        weights,
        np.array([lower]),
        np.array([upper]),
        mask,
        eta,
        lip,
        tol=tol,
        max_iters=max_iters,
    )
    return SubproblemResult(
        x=x[0].copy(),
        converged=bool(converged[0]),
        iterations=iterations,
        pg_norm=float(pgn[0]),
    )


def solve_target_subproblem(
    scenario: Scenario,
    target: str | int,
    consensus: np.ndarray,
    price: np.ndarray,
    eta: float,
    *,
    tol: float = 1e-8,
    max_iters: int = 10000,
) -> SubproblemResult:
    """Exactly solve one target's proposal subproblem.

    ``consensus`` and ``price`` are slices over the target's incident
    variables (order: ``scenario.compiled.target_groups[x]``).  Minimizes
    the negated receiving utility plus fairness term, priced consensus
    deviation included::

        -sum d(v) - weight*log1p(sum v) + price.v + eta/2 |v - consensus|^2

    subject to the target's capped simplex.
    """
    x = scenario.target_index[target] if isinstance(target, str) else int(target)
    c = scenario.compiled
    g = c.target_groups[x]
    return _solve_single(
        g,
        consensus,
        price,
        c.tgain_lin[g],
        c.tgain_log[g],
        np.zeros(len(g)),
        float(c.weights[x]),
        float(c.p_lo[x]),
        float(c.p_hi[x]),
        eta,
        tol,
        max_iters,
    )


def solve_source_subproblem(
    scenario: Scenario,
    source: str | int,
    consensus: np.ndarray,
    price: np.ndarray,
    eta: float,
    *,
    tol: float = 1e-8,
    max_iters: int = 10000,
) -> SubproblemResult:
    """Exactly solve one source's proposal subproblem.

    Minimizes the negated sending margin with the price credited to the
    source side::

        -sum (s(w) - c(w)) - price.w + eta/2 |consensus - w|^2

    subject to the source's capped simplex.  ``consensus`` and ``price``
    are slices over ``scenario.compiled.source_groups[y]``.
    """
    y = scenario.source_index[source] if isinstance(source, str) else int(source)
    c = scenario.compiled
    g = c.source_groups[y]
    price = -np.asarray(price, dtype=float)
    return _solve_single(
        g,
        consensus,
        price,
        (c.sgain_lin - c.cost_lin)[g],
        c.sgain_log[g],
        c.cost_quad[g],
        None,
        float(c.q_lo[y]),
        float(c.q_hi[y]),
        eta,
        tol,
        max_iters,
    )
