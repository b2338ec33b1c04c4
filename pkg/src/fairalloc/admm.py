"""Distributed consensus solver.

Each iteration runs a Jacobi sweep: every target and every source
independently proposes shipments on its incident (edge, period)
variables by exactly minimizing its own priced subproblem around the
current consensus; the two proposals are then averaged into the new
consensus and the per-variable prices absorb half the disagreement::

    consensus <- (target_proposal + source_proposal) / 2
    price     <- price + eta/2 * (target_proposal - source_proposal)

Both phases read the same pre-sweep consensus and prices, so node order
within a sweep is irrelevant.  Per-node subproblems are solved as packed
row batches (see :mod:`fairalloc.projection`); each row depends only on
its own data, which keeps chunked multi-threaded runs bitwise identical
to sequential ones.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .metrics import IterationRecord, Trajectory
from .model import (
    FeasibilityError,
    Scenario,
    TransportPlan,
    check_feasibility,
    plan_from_vector,
    plan_to_vector,
    utility_of_vector,
)
from .projection import minimize_rows, phase_lipschitz


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the distributed solver.

    ``eta`` is the consensus penalty weight; ``tol`` bounds both the
    proposal disagreement and the consensus step at convergence.  The
    ``inner_*`` values control the per-node subproblem solves.
    """

    eta: float = 1.0
    tol: float = 1e-6
    max_iters: int = 10000
    record_every: int = 1
    inner_tol: float = 1e-8
    inner_max_iters: int = 10000
    threads: int = 1

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        if self.inner_tol <= 0:
            raise ValueError(f"inner_tol must be positive, got {self.inner_tol}")
        if self.inner_max_iters < 1:
            raise ValueError(
                f"inner_max_iters must be >= 1, got {self.inner_max_iters}"
            )
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True, eq=False)
class SolverState:
    """Solver variables after ``iteration`` full sweeps.

    All arrays follow the canonical (edge, period) variable order of the
    scenario they were produced for.  Treat instances as immutable.
    """

    iteration: int
    consensus: np.ndarray
    target_proposal: np.ndarray
    source_proposal: np.ndarray
    price: np.ndarray


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of :func:`run`: final plan, state, and iteration records."""

    plan: TransportPlan
    state: SolverState
    trajectory: Trajectory
    converged: bool
    iterations: int


def init_state(scenario: Scenario) -> SolverState:
    """All-zero starting state; rejects scenarios that fail the
    sufficient feasibility conditions."""
    report = check_feasibility(scenario)
    if not report.feasible:
        raise FeasibilityError(
            "scenario is not guaranteed feasible: " + "; ".join(report.failures())
        )
    n = scenario.n_variables
    return SolverState(
        iteration=0,
        consensus=np.zeros(n),
        target_proposal=np.zeros(n),
        source_proposal=np.zeros(n),
        price=np.zeros(n),
    )


def consensus_update(
    target_proposal: np.ndarray, source_proposal: np.ndarray
) -> np.ndarray:
    """Midpoint of the two proposals."""
    return 0.5 * (np.asarray(target_proposal) + np.asarray(source_proposal))


def dual_update(
    price: np.ndarray,
    target_proposal: np.ndarray,
    source_proposal: np.ndarray,
    eta: float,
) -> np.ndarray:
    """Price step absorbing half the proposal disagreement."""
    return np.asarray(price) + 0.5 * eta * (
        np.asarray(target_proposal) - np.asarray(source_proposal)
    )


def primal_residual(state: SolverState) -> float:
    """Largest absolute disagreement between the two proposals."""
    diff = state.target_proposal - state.source_proposal
    return float(np.abs(diff).max(initial=0.0))


# ---------------------------------------------------------------------------
# Packed workspace and engine


def _pack(groups, width_floor=1):
    """Pack index groups into (rows, max_width) index/mask matrices."""
    width = max(width_floor, max((len(g) for g in groups), default=0))
    idx = np.zeros((len(groups), width), dtype=np.intp)
    mask = np.zeros((len(groups), width), dtype=bool)
    for r, g in enumerate(groups):
        idx[r, : len(g)] = g
        mask[r, : len(g)] = True
    return idx, mask


@lru_cache(maxsize=16)
def _workspace(scenario: Scenario):
    c = scenario.compiled
    t_idx, t_mask = _pack(c.target_groups)
    s_idx, s_mask = _pack(c.source_groups)

    def gather(vec, idx, mask):
        return np.where(mask, vec[idx], 0.0)

    return {
        "t_idx": t_idx,
        "t_mask": t_mask,
        "s_idx": s_idx,
        "s_mask": s_mask,
        "t_lin": gather(c.tgain_lin, t_idx, t_mask),
        "t_log": gather(c.tgain_log, t_idx, t_mask),
        "t_quad": np.zeros_like(t_idx, dtype=float),
        "s_lin": gather(c.sgain_lin - c.cost_lin, s_idx, s_mask),
        "s_log": gather(c.sgain_log, s_idx, s_mask),
        "s_quad": gather(c.cost_quad, s_idx, s_mask),
        "weights": c.weights,
        "p_lo": c.p_lo,
        "p_hi": c.p_hi,
        "q_lo": c.q_lo,
        "q_hi": c.q_hi,
    }


class _Engine:
    """One solver run's mutable machinery: workspace, step caches, threads.

    Step caches warm-start the per-row line searches between sweeps; they
    affect only the path of the inner solves, never their fixed points.
    """

    def __init__(self, scenario: Scenario, options: SolverOptions):
        self.scenario = scenario
        self.options = options
        self.ws = _workspace(scenario)
        eta = options.eta
        self.lip_t = phase_lipschitz(
            self.ws["t_log"],
            self.ws["t_quad"],
            self.ws["weights"],
            eta,
            self.ws["t_mask"].shape[1],
        )
        self.lip_s = phase_lipschitz(
            self.ws["s_log"], self.ws["s_quad"], None, eta, self.ws["s_mask"].shape[1]
        )
        self.steps_t = None
        self.steps_s = None
        self._executor = (
            ThreadPoolExecutor(max_workers=options.threads)
            if options.threads > 1
            else None
        )

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _phase(self, side, consensus, price_signed, lip, step0):
        ws = self.ws
        idx, mask = ws[side + "_idx"], ws[side + "_mask"]
        opts = self.options
        anchors = np.where(mask, consensus[idx], 0.0)
        price = np.where(mask, price_signed[idx], 0.0)
        lin, log_coef, quad = ws[side + "_lin"], ws[side + "_log"], ws[side + "_quad"]
        weights = ws["weights"] if side == "t" else None
        lower = ws["p_lo"] if side == "t" else ws["q_lo"]
        upper = ws["p_hi"] if side == "t" else ws["q_hi"]
        rows = anchors.shape[0]
        if self._executor is None or rows < 2 * opts.threads:
            X, steps, _, _, _ = minimize_rows(
                anchors,
                price,
                lin,
                log_coef,
                quad,
                weights,
                lower,
                upper,
                mask,
                opts.eta,
                lip,
                tol=opts.inner_tol,
                max_iters=opts.inner_max_iters,
                step0=step0,
            )
            return X, steps, idx, mask
        chunks = np.array_split(np.arange(rows), opts.threads)
        X = np.empty_like(anchors)
        steps = np.empty(rows)

        def work(rows_sel):
            return minimize_rows(
                anchors[rows_sel],
                price[rows_sel],
                lin[rows_sel],
                log_coef[rows_sel],
                quad[rows_sel],
                None if weights is None else weights[rows_sel],
                lower[rows_sel],
                upper[rows_sel],
                mask[rows_sel],
                opts.eta,
                lip,
                tol=opts.inner_tol,
                max_iters=opts.inner_max_iters,
                step0=None if step0 is None else step0[rows_sel],
            )

        futures = [
            (sel, self._executor.submit(work, sel)) for sel in chunks if len(sel)
        ]
        for sel, fut in futures:
            Xc, stepc, _, _, _ = fut.result()
            X[sel] = Xc
            steps[sel] = stepc
        return X, steps, idx, mask

    def step(self, state: SolverState):
        """One full sweep; returns (new_state, residual, consensus_delta)."""
        eta = self.options.eta
        consensus, price = state.consensus, state.price
        XT, self.steps_t, t_idx, t_mask = self._phase(
            "t", consensus, price, self.lip_t, self.steps_t
        )
        XS, self.steps_s, s_idx, s_mask = self._phase(
            "s", consensus, -price, self.lip_s, self.steps_s
        )
        n = consensus.shape[0]
        target_proposal = np.empty(n)
        source_proposal = np.empty(n)
        target_proposal[t_idx[t_mask]] = XT[t_mask]
        source_proposal[s_idx[s_mask]] = XS[s_mask]
        new_consensus = consensus_update(target_proposal, source_proposal)
        new_price = dual_update(price, target_proposal, source_proposal, eta)
        res = float(np.abs(target_proposal - source_proposal).max(initial=0.0))
        delta = float(np.abs(new_consensus - consensus).max(initial=0.0))
        new_state = SolverState(
            iteration=state.iteration + 1,
            consensus=new_consensus,
            target_proposal=target_proposal,
            source_proposal=source_proposal,
            price=new_price,
        )
        return new_state, res, delta


def iterate(
    scenario: Scenario, state: SolverState, options: SolverOptions | None = None
) -> SolverState:
    """One full sweep as a pure step: returns the successor state."""
    engine = _Engine(scenario, options or SolverOptions())
    try:
        new_state, _, _ = engine.step(state)
    finally:
        engine.close()
    return new_state


def run_segment(
    scenario: Scenario,
    state: SolverState,
    options: SolverOptions,
    records: list,
    *,
    segment: int = 0,
    end_iteration: int | None = None,
    stop_on_tol: bool = True,
    reference_vector: np.ndarray | None = None,
) -> tuple[SolverState, bool]:
    """Advance ``state`` until convergence or ``end_iteration`` sweeps.

    Appends :class:`IterationRecord` rows to ``records`` on the
    ``record_every`` cadence (the final iteration is always recorded).
    With ``stop_on_tol`` False the segment runs to ``end_iteration``
    regardless of convergence, as online runs between events do.
    """
    end = options.max_iters if end_iteration is None else end_iteration
    engine = _Engine(scenario, options)
    converged = False
    try:
        while state.iteration < end:
            state, res, delta = engine.step(state)
            k = state.iteration
            converged = stop_on_tol and res < options.tol and delta < options.tol
            if converged or k >= end or k % options.record_every == 0:
                ref = (
                    None
                    if reference_vector is None
                    else float(np.linalg.norm(state.consensus - reference_vector))
                )
                records.append(
                    IterationRecord(
                        iteration=k,
                        social_utility=utility_of_vector(scenario, state.consensus),
                        primal_residual=res,
                        reference_residual=ref,
                        segment=segment,
                    )
                )
            if converged:
                break
    finally:
        engine.close()
    return state, converged


def run(
    scenario: Scenario,
    options: SolverOptions | None = None,
    *,
    initial_state: SolverState | None = None,
    reference: TransportPlan | None = None,
) -> RunResult:
    """Solve a scenario from scratch (or from ``initial_state``).

    Converged means both the proposal disagreement and the consensus
    step dropped below ``options.tol``; otherwise the run stops at
    ``options.max_iters`` with ``converged=False`` (still returning the
    last state and trajectory).
    """
    options = options or SolverOptions()
    state = init_state(scenario) if initial_state is None else initial_state
    ref_vec = None if reference is None else plan_to_vector(scenario, reference)
    records: list[IterationRecord] = []
    state, converged = run_segment(
        scenario,
        state,
        options,
        records,
        reference_vector=ref_vec,
    )
    return RunResult(
        plan=plan_from_vector(scenario, state.consensus),
        state=state,
        trajectory=Trajectory(tuple(records)),
        converged=converged,
        iterations=state.iteration,
    )
