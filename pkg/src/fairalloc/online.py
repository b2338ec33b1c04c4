"""Mid-run network revisions: typed change events and the online solve loop.

Events fire at iteration boundaries: an event with ``at_iteration=k``
applies after sweep ``k`` completes (``k=0`` means before any sweep).
Between events the solver keeps iterating to the boundary even if
already converged, so iteration numbers stay aligned with the schedule;
only the final stretch stops early on tolerance.  Surviving (edge,
period) variables carry their consensus, proposals and prices over an
event unchanged; new variables start at zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .admm import SolverOptions, SolverState, init_state, run_segment
from .metrics import IterationRecord, Trajectory
from .model import (
    FeasibilityError,
    Scenario,
    TransportPlan,
    build_scenario,
    check_feasibility,
    plan_from_vector,
    plan_to_vector,
)
from .oracle import solve_centralized


class EventError(ValueError):
    """A change event cannot be applied to the current scenario."""


@dataclass(frozen=True)
class ChangeEvent:
    """One scheduled revision of the network.

    Mutations apply in a fixed order: node additions, edge additions,
    edge removals, node removals (cascading to their incident edges),
    then bound/function/fairness updates; the revised scenario is fully
    revalidated afterwards.  Descriptors mirror the scenario file
    schema: ``add_targets`` maps id to ``{p_lo?, p_hi, weight?}``,
    ``add_sources`` to ``{q_lo?, q_hi}``, ``add_edges`` items are full
    edge objects, ``update_*`` entries are partial overrides.
    """

    at_iteration: int
    add_targets: Mapping[str, Mapping] = field(default_factory=dict)
    add_sources: Mapping[str, Mapping] = field(default_factory=dict)
    remove_targets: Sequence[str] = ()
    remove_sources: Sequence[str] = ()
    add_edges: Sequence[Mapping] = ()
    remove_edges: Sequence[tuple[str, str]] = ()
    update_bounds: Mapping = field(default_factory=dict)
    update_functions: Sequence[Mapping] = ()
    update_fairness: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if (
            isinstance(self.at_iteration, bool)
            or not isinstance(self.at_iteration, int)
            or self.at_iteration < 0
        ):
            raise ValueError(
                f"at_iteration must be a nonnegative integer, got {self.at_iteration!r}"
            )
        object.__setattr__(self, "remove_targets", tuple(self.remove_targets))
        object.__setattr__(self, "remove_sources", tuple(self.remove_sources))
        object.__setattr__(self, "add_edges", tuple(self.add_edges))
        object.__setattr__(
            self, "remove_edges", tuple((t, s) for t, s in self.remove_edges)
        )
        object.__setattr__(self, "update_functions", tuple(self.update_functions))


@dataclass(frozen=True)
class EventSchedule:
    """Events ordered by strictly increasing ``at_iteration``."""

    events: tuple[ChangeEvent, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        times = [e.at_iteration for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(
                f"event times must be strictly increasing, got {times}"
            )

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True, eq=False)
class OnlineResult:
    """Outcome of :func:`run_online`.

    ``scenarios`` holds the network as solved in each segment (initial
    plus one per applied event); trajectory records carry the segment
    index they belong to.  ``converged`` refers to the final segment.
    """

    plan: TransportPlan
    state: SolverState
    trajectory: Trajectory
    scenarios: tuple[Scenario, ...]
    converged: bool
    iterations: int


def _check_keys(desc, allowed, label):
    if not isinstance(desc, Mapping):
        raise EventError(f"{label}: expected an object, got {desc!r}")
    unknown = set(desc) - set(allowed)
    if unknown:
        raise EventError(f"{label}: unknown fields {sorted(unknown)}")


def apply_event(
    scenario: Scenario, state: SolverState, event: ChangeEvent
) -> tuple[Scenario, SolverState]:
    """Apply one event, returning the revised scenario and carried state.

    Surviving (edge, period) variables keep their values exactly; new
    ones start at zero; the iteration counter is preserved.  Raises
    :class:`EventError` for inconsistent mutations,
    :class:`~fairalloc.model.ScenarioError` if the revised scenario
    fails validation, and :class:`~fairalloc.model.FeasibilityError`
    if it fails the feasibility conditions.
    """
    targets = list(scenario.targets)
    sources = list(scenario.sources)
    edges = {
        (e.target, e.source): {
            "d": e.target_utility,
            "s": e.source_utility,
            "c": e.transport_cost,
        }
        for e in scenario.edges
    }
    t_bounds = {
        t: {"p_lo": b.lo, "p_hi": b.hi}
        for t, b in zip(scenario.targets, scenario.target_bounds)
    }
    s_bounds = {
        s: {"q_lo": b.lo, "q_hi": b.hi}
        for s, b in zip(scenario.sources, scenario.source_bounds)
    }
    weights = dict(zip(scenario.targets, scenario.fairness_weights))

    for tid, desc in event.add_targets.items():
        if tid in targets or tid in sources:
            raise EventError(f"add_targets: id {tid!r} already exists")
        _check_keys(desc, ("p_lo", "p_hi", "weight"), f"add_targets[{tid!r}]")
        if "p_hi" not in desc:
            raise EventError(f"add_targets[{tid!r}]: missing p_hi")
        targets.append(tid)
        t_bounds[tid] = {"p_lo": desc.get("p_lo", 0.0), "p_hi": desc["p_hi"]}
        weights[tid] = desc.get("weight", 0.0)
    for sid, desc in event.add_sources.items():
        if sid in targets or sid in sources:
            raise EventError(f"add_sources: id {sid!r} already exists")
        _check_keys(desc, ("q_lo", "q_hi"), f"add_sources[{sid!r}]")
        if "q_hi" not in desc:
            raise EventError(f"add_sources[{sid!r}]: missing q_hi")
        sources.append(sid)
        s_bounds[sid] = {"q_lo": desc.get("q_lo", 0.0), "q_hi": desc["q_hi"]}

    for raw in event.add_edges:
        _check_keys(raw, ("target", "source", "d", "s", "c"), "add_edges entry")
        key = (raw.get("target"), raw.get("source"))
        if key[0] not in targets:
            raise EventError(f"add_edges: unknown target {key[0]!r}")
        if key[1] not in sources:
            raise EventError(f"add_edges: unknown source {key[1]!r}")
        if key in edges:
            raise EventError(f"add_edges: edge {key!r} already exists")
        edges[key] = {"d": raw.get("d"), "s": raw.get("s"), "c": raw.get("c")}

    for key in event.remove_edges:
        if key not in edges:
            raise EventError(f"remove_edges: no edge {key!r}")
        del edges[key]

    for tid in event.remove_targets:
        if tid not in targets:
            raise EventError(f"remove_targets: unknown target {tid!r}")
        targets.remove(tid)
        del t_bounds[tid], weights[tid]
        edges = {k: v for k, v in edges.items() if k[0] != tid}
    for sid in event.remove_sources:
        if sid not in sources:
            raise EventError(f"remove_sources: unknown source {sid!r}")
        sources.remove(sid)
        del s_bounds[sid]
        edges = {k: v for k, v in edges.items() if k[1] != sid}

    _check_keys(event.update_bounds, ("targets", "sources"), "update_bounds")
    for side, store, keys, known in (
        ("targets", t_bounds, ("p_lo", "p_hi"), targets),
        ("sources", s_bounds, ("q_lo", "q_hi"), sources),
    ):
        for nid, patch in event.update_bounds.get(side, {}).items():
            if nid not in known:
                raise EventError(f"update_bounds.{side}: unknown id {nid!r}")
            _check_keys(patch, keys, f"update_bounds.{side}[{nid!r}]")
            store[nid].update(patch)

    for raw in event.update_functions:
        _check_keys(raw, ("target", "source", "d", "s", "c"), "update_functions entry")
        key = (raw.get("target"), raw.get("source"))
        if key not in edges:
            raise EventError(f"update_functions: no edge {key!r}")
        for role in ("d", "s", "c"):
            if role in raw:
                edges[key][role] = raw[role]

    for tid, value in event.update_fairness.items():
        if tid not in targets:
            raise EventError(f"update_fairness: unknown target {tid!r}")
        if isinstance(value, Mapping):
            _check_keys(value, ("weight",), f"update_fairness[{tid!r}]")
            value = value.get("weight", 0.0)
        weights[tid] = value

    revised = build_scenario(
        targets=targets,
        sources=sources,
        edges=[
            {"target": t, "source": s, **fns} for (t, s), fns in edges.items()
        ],
        bounds={"targets": t_bounds, "sources": s_bounds},
        fairness=weights,
        horizon=scenario.horizon,
    )
    report = check_feasibility(revised)
    if not report.feasible:
        raise FeasibilityError(
            "revised scenario is not guaranteed feasible: "
            + "; ".join(report.failures())
        )

    old_pos = {key: i for i, key in enumerate(scenario.variable_keys)}

    def carry(vec):
        out = np.zeros(revised.n_variables)
        for j, key in enumerate(revised.variable_keys):
            i = old_pos.get(key)
            if i is not None:
                out[j] = vec[i]
        return out

    carried = SolverState(
        iteration=state.iteration,
        consensus=carry(state.consensus),
        target_proposal=carry(state.target_proposal),
        source_proposal=carry(state.source_proposal),
        price=carry(state.price),
    )
    return revised, carried


def run_online(
    scenario: Scenario,
    schedule: EventSchedule,
    options: SolverOptions | None = None,
    *,
    reference: str | Sequence[TransportPlan] | None = None,
    initial_state: SolverState | None = None,
) -> OnlineResult:
    """Solve while applying scheduled events at their iteration boundaries.

    ``reference`` may be None, ``"centralized"`` (solve each segment's
    network centrally and report the distance to that optimum in the
    trajectory), or a sequence of plans, one per segment.  Events
    scheduled beyond ``options.max_iters`` never fire and are reported
    with a warning.
    """
    options = options or SolverOptions()
    state = init_state(scenario) if initial_state is None else initial_state
    events = []
    for ev in schedule.events:
        if ev.at_iteration < state.iteration:
            raise EventError(
                f"event at k={ev.at_iteration} precedes the starting iteration "
                f"{state.iteration}"
            )
        if ev.at_iteration > options.max_iters:
            warnings.warn(
                f"event at k={ev.at_iteration} is beyond max_iters="
                f"{options.max_iters} and will not fire",
                stacklevel=2,
            )
        else:
            events.append(ev)

    if isinstance(reference, str):
        if reference != "centralized":
            raise ValueError(
                f"reference must be None, 'centralized', or a sequence of "
                f"plans, got {reference!r}"
            )
    elif reference is not None:
        reference = list(reference)
        if len(reference) != len(events) + 1:
            raise ValueError(
                f"expected one reference plan per segment "
                f"({len(events) + 1}), got {len(reference)}"
            )

    def segment_reference(current, index):
        if reference is None:
            return None
        if reference == "centralized":
            return plan_to_vector(current, solve_centralized(current).plan)
        return plan_to_vector(current, reference[index])

    records: list[IterationRecord] = []
    scenarios: list[Scenario] = []
    current = scenario
    segment = 0
    for ev in events:
        scenarios.append(current)
        state, _ = run_segment(
            current,
            state,
            options,
            records,
            segment=segment,
            end_iteration=ev.at_iteration,
            stop_on_tol=False,
            reference_vector=segment_reference(current, segment),
        )
        current, state = apply_event(current, state, ev)
        segment += 1
    scenarios.append(current)
    state, converged = run_segment(
        current,
        state,
        options,
        records,
        segment=segment,
        end_iteration=options.max_iters,
        stop_on_tol=True,
        reference_vector=segment_reference(current, segment),
    )
    return OnlineResult(
        plan=plan_from_vector(current, state.consensus),
        state=state,
        trajectory=Trajectory(tuple(records)),
        scenarios=tuple(scenarios),
        converged=converged,
        iterations=state.iteration,
    )
