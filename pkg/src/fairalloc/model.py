"""Data model for multi-period resource allocation over bipartite networks.

A :class:`Scenario` couples a bipartite graph (target nodes receiving a
divisible resource from source nodes) with per-edge utility and cost
functions, per-node shipment bounds over the whole horizon, per-target
fairness weights, and a planning horizon.  :func:`build_scenario` is the
single validating constructor; solvers consume the compiled array views
exposed by :attr:`Scenario.compiled`.

Variable ordering convention: one nonnegative variable per (edge, period),
laid out edge-major in scenario edge order, periods ascending within an
edge.  All dense vectors passed between modules follow this order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

LINEAR = "linear"
LOG = "log"
QUADRATIC = "quadratic"

#: Allowed kinds for the two utility roles and for the cost role.
UTILITY_KINDS = (LINEAR, LOG)
COST_KINDS = (LINEAR, QUADRATIC)


class ScenarioError(ValueError):
    """Scenario data failed validation; ``violations`` lists every problem."""

    def __init__(self, violations: Sequence[str]):
        self.violations = tuple(violations)
        n = len(self.violations)
        head = "invalid scenario (%d problem%s):" % (n, "" if n == 1 else "s")
        super().__init__("\n".join([head, *("  - " + v for v in self.violations)]))


class FeasibilityError(ValueError):
    """The scenario fails the sufficient feasibility conditions."""


class PlanMismatchError(ValueError):
    """A plan's keys do not line up with the scenario's (edge, period) set."""


@dataclass(frozen=True)
class FunctionSpec:
    """One-coefficient scalar function attached to an edge role.

    ``kind`` is one of ``"linear"`` (``a*z``), ``"log"`` (``a*log(1+z)``)
    or ``"quadratic"`` (``a*z**2``); ``coef`` is the nonnegative ``a``.
    """

    kind: str
    coef: float

    def value(self, z: float) -> float:
        if self.kind == LINEAR:
            return self.coef * z
        if self.kind == LOG:
            return self.coef * math.log1p(z)
        if self.kind == QUADRATIC:
            return self.coef * z * z
        raise ValueError(f"unknown function kind: {self.kind!r}")

    def derivative(self, z: float) -> float:
        if self.kind == LINEAR:
            return self.coef
        if self.kind == LOG:
            return self.coef / (1.0 + z)
        if self.kind == QUADRATIC:
            return 2.0 * self.coef * z
        raise ValueError(f"unknown function kind: {self.kind!r}")


def eval_function(spec: FunctionSpec, z: float) -> float:
    """Evaluate ``spec`` at shipment level ``z`` (must be >= 0)."""
    if z < 0:
        raise ValueError(f"shipment level must be >= 0, got {z!r}")
    return spec.value(z)


def eval_derivative(spec: FunctionSpec, z: float) -> float:
    """First derivative of ``spec`` at shipment level ``z`` (must be >= 0)."""
    if z < 0:
        raise ValueError(f"shipment level must be >= 0, got {z!r}")
    return spec.derivative(z)


@dataclass(frozen=True)
class Edge:
    """Directed source -> target shipping lane with its three functions."""

    target: str
    source: str
    target_utility: FunctionSpec
    source_utility: FunctionSpec
    transport_cost: FunctionSpec


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]`` bounding a node's total shipment."""

    lo: float
    hi: float


@dataclass(frozen=True)
class _Compiled:
    """Dense per-variable coefficient views used by the numerical modules."""

    tgain_lin: np.ndarray
    tgain_log: np.ndarray
    sgain_lin: np.ndarray
    sgain_log: np.ndarray
    cost_lin: np.ndarray
    cost_quad: np.ndarray
    target_of: np.ndarray  # variable -> target index
    source_of: np.ndarray  # variable -> source index
    target_groups: tuple[np.ndarray, ...]  # target index -> variable indices
    source_groups: tuple[np.ndarray, ...]
    weights: np.ndarray  # fairness weight per target
    p_lo: np.ndarray
    p_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray


@dataclass(frozen=True)
class Scenario:
    """Validated allocation problem.  Construct through :func:`build_scenario`."""

    targets: tuple[str, ...]
    sources: tuple[str, ...]
    edges: tuple[Edge, ...]
    target_bounds: tuple[Interval, ...]
    source_bounds: tuple[Interval, ...]
    fairness_weights: tuple[float, ...]
    horizon: int

    # -- basic sizes ---------------------------------------------------

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_variables(self) -> int:
        return len(self.edges) * self.horizon

    # -- index maps ----------------------------------------------------

    @cached_property
    def target_index(self) -> Mapping[str, int]:
        return {t: i for i, t in enumerate(self.targets)}

    @cached_property
    def source_index(self) -> Mapping[str, int]:
        return {s: i for i, s in enumerate(self.sources)}

    @cached_property
    def edge_index(self) -> Mapping[tuple[str, str], int]:
        return {(e.target, e.source): i for i, e in enumerate(self.edges)}

    @cached_property
    def variable_keys(self) -> tuple[tuple[str, str, int], ...]:
        """Canonical (target, source, period) key per variable; periods 1-based."""
        return tuple(
            (e.target, e.source, t)
            for e in self.edges
            for t in range(1, self.horizon + 1)
        )

    @cached_property
    def compiled(self) -> _Compiled:
        T = self.horizon
        n = self.n_variables
        tgain_lin = np.zeros(n)
        tgain_log = np.zeros(n)
        sgain_lin = np.zeros(n)
        sgain_log = np.zeros(n)
        cost_lin = np.zeros(n)
        cost_quad = np.zeros(n)
        target_of = np.zeros(n, dtype=np.intp)
        source_of = np.zeros(n, dtype=np.intp)
        for i, e in enumerate(self.edges):
            sl = slice(i * T, (i + 1) * T)
            for spec, lin, curved in (
                (e.target_utility, tgain_lin, tgain_log),
                (e.source_utility, sgain_lin, sgain_log),
                (e.transport_cost, cost_lin, cost_quad),
            ):
                (lin if spec.kind == LINEAR else curved)[sl] = spec.coef
            target_of[sl] = self.target_index[e.target]
            source_of[sl] = self.source_index[e.source]
        target_groups = tuple(
            np.flatnonzero(target_of == x) for x in range(self.n_targets)
        )
        source_groups = tuple(
            np.flatnonzero(source_of == y) for y in range(self.n_sources)
        )
        return _Compiled(
            tgain_lin=tgain_lin,
            tgain_log=tgain_log,
            sgain_lin=sgain_lin,
            sgain_log=sgain_log,
            cost_lin=cost_lin,
            cost_quad=cost_quad,
            target_of=target_of,
            source_of=source_of,
            target_groups=target_groups,
            source_groups=source_groups,
            weights=np.array(self.fairness_weights, dtype=float),
            p_lo=np.array([b.lo for b in self.target_bounds]),
            p_hi=np.array([b.hi for b in self.target_bounds]),
            q_lo=np.array([b.lo for b in self.source_bounds]),
            q_hi=np.array([b.hi for b in self.source_bounds]),
        )

    # -- dense helpers -------------------------------------------------

    def target_totals(self, x: np.ndarray) -> np.ndarray:
        """Per-target shipment totals of a dense plan vector."""
        return np.bincount(
            self.compiled.target_of, weights=x, minlength=self.n_targets
        )

    def source_totals(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(
            self.compiled.source_of, weights=x, minlength=self.n_sources
        )


@dataclass(frozen=True)
class TransportPlan:
    """Shipment amounts keyed by (target, source, period); periods 1-based.

    The mapping is treated as immutable; keys must cover each scenario
    edge-period pair exactly once when paired with a scenario.
    """

    horizon: int
    amounts: Mapping[tuple[str, str, int], float]

    def total(self) -> float:
        return float(sum(self.amounts.values()))


def plan_from_vector(scenario: Scenario, x: np.ndarray) -> TransportPlan:
    """Wrap a dense vector (canonical variable order) as a keyed plan."""
    x = np.asarray(x, dtype=float)
    if x.shape != (scenario.n_variables,):
        raise PlanMismatchError(
            f"expected vector of length {scenario.n_variables}, got shape {x.shape}"
        )
    amounts = {key: float(v) for key, v in zip(scenario.variable_keys, x)}
    return TransportPlan(horizon=scenario.horizon, amounts=amounts)


def plan_to_vector(scenario: Scenario, plan: TransportPlan) -> np.ndarray:
    """Dense vector of a plan, failing loudly on any key mismatch."""
    if plan.horizon != scenario.horizon:
        raise PlanMismatchError(
            f"plan horizon {plan.horizon} != scenario horizon {scenario.horizon}"
        )
    keys = scenario.variable_keys
    key_set = set(keys)
    missing = [k for k in keys if k not in plan.amounts]
    extra = [k for k in plan.amounts if k not in key_set]
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing keys: %s" % ", ".join(map(str, missing[:5])))
        if extra:
            parts.append("unexpected keys: %s" % ", ".join(map(str, extra[:5])))
        raise PlanMismatchError("; ".join(parts))
    return np.array([plan.amounts[k] for k in keys], dtype=float)


def utility_of_vector(scenario: Scenario, x: np.ndarray) -> float:
    """Social utility of a dense plan vector (fast path used by solvers)."""
    c = scenario.compiled
    x = np.asarray(x, dtype=float)
    u = float(
        (c.tgain_lin + c.sgain_lin - c.cost_lin) @ x
        + (c.tgain_log + c.sgain_log) @ np.log1p(x)
        - c.cost_quad @ (x * x)
    )
    totals = scenario.target_totals(x)
    return u + float(c.weights @ np.log1p(totals))


def utility_gradient(scenario: Scenario, x: np.ndarray) -> np.ndarray:
    """Gradient of :func:`utility_of_vector` at ``x`` (per-variable)."""
    c = scenario.compiled
    x = np.asarray(x, dtype=float)
    totals = scenario.target_totals(x)
    fair_pull = (c.weights / (1.0 + totals))[c.target_of]
    return (
        (c.tgain_lin + c.sgain_lin - c.cost_lin)
        + (c.tgain_log + c.sgain_log) / (1.0 + x)
        - 2.0 * c.cost_quad * x
        + fair_pull
    )


def social_utility(plan: TransportPlan | np.ndarray, scenario: Scenario) -> float:
    """Total welfare of a plan: edge utilities minus transport costs, plus
    fairness terms ``weight * log(1 + target total)``."""
    if isinstance(plan, TransportPlan):
        x = plan_to_vector(scenario, plan)
    else:
        x = np.asarray(plan, dtype=float)
    return utility_of_vector(scenario, x)


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of the sufficient feasibility conditions.

    ``feasible`` is True when every check passed; the conditions are
    sufficient, not necessary, so a False merely means feasibility is
    not guaranteed by them.
    """

    feasible: bool
    checks: tuple[tuple[str, bool], ...]

    def failures(self) -> tuple[str, ...]:
        return tuple(desc for desc, ok in self.checks if not ok)


def check_feasibility(scenario: Scenario) -> FeasibilityReport:
    """Evaluate the per-target and aggregate supply-coverage conditions."""
    c = scenario.compiled
    checks = []
    for x, t in enumerate(scenario.targets):
        reachable = float(c.q_hi[np.unique(c.source_of[c.target_groups[x]])].sum())
        ok = reachable >= c.p_lo[x]
        checks.append(
            (
                "target %r: reachable supply %.6g covers minimum intake %.6g"
                % (t, reachable, c.p_lo[x]),
                ok,
            )
        )
    total_supply = float(c.q_hi.sum())
    total_demand = float(c.p_lo.sum())
    checks.append(
        (
            "aggregate supply %.6g covers total minimum intake %.6g"
            % (total_supply, total_demand),
            total_supply >= total_demand,
        )
    )
    return FeasibilityReport(
        feasible=all(ok for _, ok in checks), checks=tuple(checks)
    )


# ---------------------------------------------------------------------------
# Validating constructor


def _as_number(value, name, violations, *, minimum=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        violations.append(f"{name}: expected a number, got {value!r}")
        return 0.0
    v = float(value)
    if not math.isfinite(v):
        violations.append(f"{name}: must be finite, got {value!r}")
        return 0.0
    if minimum is not None and v < minimum:
        violations.append(f"{name}: must be >= {minimum:g}, got {v:g}")
    return v


def _parse_function(raw, name, allowed, violations) -> FunctionSpec:
    fallback = FunctionSpec(LINEAR, 0.0)
    if isinstance(raw, FunctionSpec):
        spec = raw
    elif isinstance(raw, Mapping):
        unknown = set(raw) - {"kind", "coef"}
        if unknown:
            violations.append(f"{name}: unknown fields {sorted(unknown)}")
        if "kind" not in raw or "coef" not in raw:
            violations.append(f"{name}: needs 'kind' and 'coef'")
            return fallback
        coef = _as_number(raw["coef"], f"{name}.coef", violations, minimum=0.0)
        spec = FunctionSpec(raw["kind"], coef)
    else:
        violations.append(f"{name}: expected a function object, got {raw!r}")
        return fallback
    if spec.kind not in allowed:
        violations.append(
            f"{name}: kind {spec.kind!r} not allowed (expected one of {list(allowed)})"
        )
        return fallback
    if spec.coef < 0 or not math.isfinite(spec.coef):
        violations.append(f"{name}: coefficient must be finite and >= 0")
        return fallback
    return spec


def _parse_ids(raw, name, violations) -> tuple[str, ...]:
    if not isinstance(raw, (list, tuple)) or not raw:
        violations.append(f"{name}: expected a non-empty list of ids")
        return ()
    ids = []
    for item in raw:
        if not isinstance(item, str) or not item:
            violations.append(f"{name}: ids must be non-empty strings, got {item!r}")
        else:
            ids.append(item)
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        violations.append(f"{name}: duplicate ids {sorted(dupes)}")
    return tuple(ids)


def _parse_interval(raw, name, lo_key, hi_key, violations) -> Interval:
    if not isinstance(raw, Mapping):
        violations.append(f"{name}: expected an object with {lo_key}/{hi_key}")
        return Interval(0.0, 0.0)
    unknown = set(raw) - {lo_key, hi_key}
    if unknown:
        violations.append(f"{name}: unknown fields {sorted(unknown)}")
    lo = _as_number(raw.get(lo_key, 0.0), f"{name}.{lo_key}", violations, minimum=0.0)
    hi = _as_number(raw.get(hi_key), f"{name}.{hi_key}", violations) if hi_key in raw else None
    if hi is None:
        violations.append(f"{name}: missing {hi_key}")
        hi = lo
    if hi < lo:
        violations.append(f"{name}: {hi_key} {hi:g} below {lo_key} {lo:g}")
    return Interval(lo, hi)


def build_scenario(
    *,
    targets: Iterable[str],
    sources: Iterable[str],
    edges: Iterable,
    bounds: Mapping,
    fairness: Mapping | None = None,
    horizon: int = 1,
) -> Scenario:
    """Validate raw scenario parts and build a :class:`Scenario`.

    Accepts JSON-shaped data: ``edges`` items are mappings with keys
    ``target``, ``source``, ``d``, ``s``, ``c`` (or :class:`Edge`
    instances); ``bounds`` holds ``{"targets": {id: {p_lo, p_hi}},
    "sources": {id: {q_lo, q_hi}}}``; ``fairness`` maps target ids to
    ``{"weight": w}`` (missing targets default to weight 0).

    Raises :class:`ScenarioError` carrying the full list of violations.
    """
    violations: list[str] = []
    target_ids = _parse_ids(list(targets), "targets", violations)
    source_ids = _parse_ids(list(sources), "sources", violations)
    shared = set(target_ids) & set(source_ids)
    if shared:
        violations.append(f"ids used on both sides: {sorted(shared)}")

    if isinstance(horizon, bool) or not isinstance(horizon, int):
        violations.append(f"horizon: expected a positive integer, got {horizon!r}")
        horizon = 1
    elif horizon < 1:
        violations.append(f"horizon: must be >= 1, got {horizon}")
        horizon = 1

    parsed_edges: list[Edge] = []
    seen_pairs: set[tuple[str, str]] = set()
    for pos, raw in enumerate(edges):
        name = f"edges[{pos}]"
        if isinstance(raw, Edge):
            raw = {
                "target": raw.target,
                "source": raw.source,
                "d": raw.target_utility,
                "s": raw.source_utility,
                "c": raw.transport_cost,
            }
        if not isinstance(raw, Mapping):
            violations.append(f"{name}: expected an edge object, got {raw!r}")
            continue
        unknown = set(raw) - {"target", "source", "d", "s", "c"}
        if unknown:
            violations.append(f"{name}: unknown fields {sorted(unknown)}")
        t, s = raw.get("target"), raw.get("source")
        if t not in target_ids:
            violations.append(f"{name}: unknown target {t!r}")
            continue
        if s not in source_ids:
            violations.append(f"{name}: unknown source {s!r}")
            continue
        if (t, s) in seen_pairs:
            violations.append(f"{name}: duplicate edge ({t!r}, {s!r})")
            continue
        seen_pairs.add((t, s))
        parsed_edges.append(
            Edge(
                target=t,
                source=s,
                target_utility=_parse_function(
                    raw.get("d"), f"{name}.d", UTILITY_KINDS, violations
                ),
                source_utility=_parse_function(
                    raw.get("s"), f"{name}.s", UTILITY_KINDS, violations
                ),
                transport_cost=_parse_function(
                    raw.get("c"), f"{name}.c", COST_KINDS, violations
                ),
            )
        )

    if not parsed_edges:
        violations.append("edges: at least one edge is required")
    else:
        used_t = {e.target for e in parsed_edges}
        used_s = {e.source for e in parsed_edges}
        for t in target_ids:
            if t not in used_t:
                violations.append(f"targets: isolated node {t!r} (no incident edge)")
        for s in source_ids:
            if s not in used_s:
                violations.append(f"sources: isolated node {s!r} (no incident edge)")

    if not isinstance(bounds, Mapping):
        violations.append("bounds: expected an object with 'targets' and 'sources'")
        bounds = {}
    else:
        unknown = set(bounds) - {"targets", "sources"}
        if unknown:
            violations.append(f"bounds: unknown fields {sorted(unknown)}")

    def side_bounds(side, ids, lo_key, hi_key):
        raw_side = bounds.get(side, {})
        if not isinstance(raw_side, Mapping):
            violations.append(f"bounds.{side}: expected an object keyed by id")
            raw_side = {}
        unknown_ids = set(raw_side) - set(ids)
        if unknown_ids:
            violations.append(f"bounds.{side}: unknown ids {sorted(unknown_ids)}")
        out = []
        for i in ids:
            if i not in raw_side:
                violations.append(f"bounds.{side}: missing entry for {i!r}")
                out.append(Interval(0.0, 0.0))
            else:
                out.append(
                    _parse_interval(
                        raw_side[i], f"bounds.{side}[{i!r}]", lo_key, hi_key, violations
                    )
                )
        return tuple(out)

    target_bounds = side_bounds("targets", target_ids, "p_lo", "p_hi")
    source_bounds = side_bounds("sources", source_ids, "q_lo", "q_hi")

    weights = dict.fromkeys(target_ids, 0.0)
    if fairness is not None:
        if not isinstance(fairness, Mapping):
            violations.append("fairness: expected an object keyed by target id")
        else:
            for key, raw in fairness.items():
                if key not in weights:
                    violations.append(f"fairness: unknown target {key!r}")
                    continue
                if isinstance(raw, Mapping):
                    unknown = set(raw) - {"weight"}
                    if unknown:
                        violations.append(
                            f"fairness[{key!r}]: unknown fields {sorted(unknown)}"
                        )
                    raw = raw.get("weight", 0.0)
                weights[key] = _as_number(
                    raw, f"fairness[{key!r}].weight", violations, minimum=0.0
                )

    if violations:
        raise ScenarioError(violations)
    return Scenario(
        targets=target_ids,
        sources=source_ids,
        edges=tuple(parsed_edges),
        target_bounds=target_bounds,
        source_bounds=source_bounds,
        fairness_weights=tuple(weights[t] for t in target_ids),
        horizon=horizon,
    )
