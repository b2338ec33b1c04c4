"""Scikit-learn style wrappers around the solvers.

The solvers are hyperparameter-configured procedures producing fitted
attributes, which maps cleanly onto the estimator protocol:
``get_params``/``set_params``/``clone`` work, ``fit`` returns ``self``
and exposes ``plan_``, ``trajectory_``, ``converged_`` and ``n_iter_``.
Unlike supervised estimators, ``fit`` takes a scenario (object, mapping
in the file schema, or path) instead of an ``(X, y)`` pair, and
``predict`` returns the fitted plan's amounts mapping.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import scenario_io
from .admm import SolverOptions, run
from .model import Scenario, TransportPlan, build_scenario, social_utility
from .online import EventSchedule, run_online
from .oracle import OracleOptions, solve_centralized

_SCENARIO_FIELDS = ("targets", "sources", "edges", "bounds", "fairness", "horizon")


def as_scenario(X) -> Scenario:
    """Coerce estimator input into a validated :class:`Scenario`."""
    if isinstance(X, Scenario):
        return X
    if isinstance(X, Mapping):
        unknown = set(X) - set(_SCENARIO_FIELDS)
        if unknown:
            raise ValueError(f"scenario mapping has unknown fields {sorted(unknown)}")
        return build_scenario(
            targets=X.get("targets", ()),
            sources=X.get("sources", ()),
            edges=X.get("edges", ()),
            bounds=X.get("bounds", {}),
            fairness=X.get("fairness"),
            horizon=X.get("horizon", 1),
        )
    if isinstance(X, (str, Path)):
        return scenario_io.load_scenario(X)
    raise TypeError(
        f"expected a Scenario, a scenario mapping, or a path, got {type(X).__name__}"
    )


class DistributedTransportSolver(BaseEstimator):
    """Consensus-based distributed solver as an estimator.

    Parameters mirror :class:`~fairalloc.admm.SolverOptions`.
    ``reference`` may be None, ``"centralized"`` (compute the
    centralized optimum first and track the distance to it), or a
    :class:`~fairalloc.model.TransportPlan`.

    Attributes after ``fit``: ``scenario_``, ``plan_``, ``state_``,
    ``trajectory_``, ``converged_``, ``n_iter_``.
    """

    def __init__(
        self,
        eta: float = 1.0,
        tol: float = 1e-6,
        max_iters: int = 10000,
        record_every: int = 1,
        inner_tol: float = 1e-8,
        inner_max_iters: int = 10000,
        threads: int = 1,
        reference=None,
    ):
        self.eta = eta
        self.tol = tol
        self.max_iters = max_iters
        self.record_every = record_every
        self.inner_tol = inner_tol
        self.inner_max_iters = inner_max_iters
        self.threads = threads
        self.reference = reference

    def _options(self) -> SolverOptions:
        return SolverOptions(
            eta=self.eta,
            tol=self.tol,
            max_iters=self.max_iters,
            record_every=self.record_every,
            inner_tol=self.inner_tol,
            inner_max_iters=self.inner_max_iters,
            threads=self.threads,
        )

    def fit(self, X, y=None):
        scenario = as_scenario(X)
        if self.reference is None:
            ref = None
        elif self.reference == "centralized":
            ref = solve_centralized(scenario).plan
        elif isinstance(self.reference, TransportPlan):
            ref = self.reference
        else:
            raise ValueError(
                "reference must be None, 'centralized', or a TransportPlan"
            )
        result = run(scenario, self._options(), reference=ref)
        self.scenario_ = scenario
        self.plan_ = result.plan
        self.state_ = result.state
        self.trajectory_ = result.trajectory
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        return self

    def predict(self, X=None) -> dict:
        """Amounts mapping of the fitted plan (``X`` is ignored)."""
        check_is_fitted(self, "plan_")
        return dict(self.plan_.amounts)

    def score(self, X=None, y=None) -> float:
        """Social utility of the fitted plan."""
        check_is_fitted(self, "plan_")
        return social_utility(self.plan_, self.scenario_)


class CentralizedTransportSolver(BaseEstimator):
    """Centralized projected-ascent reference solver as an estimator.

    Attributes after ``fit``: ``scenario_``, ``plan_``, ``objective_``,
    ``converged_``, ``n_iter_``, ``pg_norm_``.
    """

    def __init__(
        self,
        step_rule: str = "backtracking",
        tol: float = 1e-10,
        max_iters: int = 20000,
    ):
        self.step_rule = step_rule
        self.tol = tol
        self.max_iters = max_iters

    def fit(self, X, y=None):
        scenario = as_scenario(X)
        result = solve_centralized(
            scenario,
            OracleOptions(
                step_rule=self.step_rule, tol=self.tol, max_iters=self.max_iters
            ),
        )
        self.scenario_ = scenario
        self.plan_ = result.plan
        self.objective_ = result.objective
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        self.pg_norm_ = result.pg_norm
        return self

    def predict(self, X=None) -> dict:
        check_is_fitted(self, "plan_")
        return dict(self.plan_.amounts)

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "objective_")
        return self.objective_


class OnlineTransportSolver(BaseEstimator):
    """Distributed solver with scheduled network revisions.

    ``schedule`` is an :class:`~fairalloc.online.EventSchedule` or a
    path to an event file (None means no events).  ``reference`` may be
    None or ``"centralized"`` (per-segment centralized optima).

    Attributes after ``fit``: ``scenarios_`` (one per segment),
    ``plan_``, ``state_``, ``trajectory_``, ``converged_``, ``n_iter_``.
    """

    def __init__(
        self,
        schedule=None,
        eta: float = 1.0,
        tol: float = 1e-6,
        max_iters: int = 10000,
        record_every: int = 1,
        inner_tol: float = 1e-8,
        inner_max_iters: int = 10000,
        threads: int = 1,
        reference=None,
    ):
        self.schedule = schedule
        self.eta = eta
        self.tol = tol
        self.max_iters = max_iters
        self.record_every = record_every
        self.inner_tol = inner_tol
        self.inner_max_iters = inner_max_iters
        self.threads = threads
        self.reference = reference

    def fit(self, X, y=None):
        scenario = as_scenario(X)
        if self.schedule is None:
            schedule = EventSchedule(events=())
        elif isinstance(self.schedule, EventSchedule):
            schedule = self.schedule
        elif isinstance(self.schedule, (str, Path)):
            schedule = scenario_io.load_events(self.schedule)
        else:
            raise ValueError("schedule must be None, an EventSchedule, or a path")
        if self.reference not in (None, "centralized"):
            raise ValueError("reference must be None or 'centralized'")
        options = SolverOptions(
            eta=self.eta,
            tol=self.tol,
            max_iters=self.max_iters,
            record_every=self.record_every,
            inner_tol=self.inner_tol,
            inner_max_iters=self.inner_max_iters,
            threads=self.threads,
        )
        result = run_online(scenario, schedule, options, reference=self.reference)
        self.scenarios_ = result.scenarios
        self.scenario_ = result.scenarios[-1]
        self.plan_ = result.plan
        self.state_ = result.state
        self.trajectory_ = result.trajectory
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        return self

    def predict(self, X=None) -> dict:
        check_is_fitted(self, "plan_")
        return dict(self.plan_.amounts)

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "plan_")
        return social_utility(self.plan_, self.scenario_)
