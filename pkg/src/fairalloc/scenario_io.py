"""Strict JSON reading and writing for scenarios, plans, and event files.

Schemas are closed: unknown fields are rejected, not ignored.  Malformed
JSON and wrong file shape raise :class:`ParseError`; semantically
invalid scenario content surfaces as
:class:`~fairalloc.model.ScenarioError` from :func:`build_scenario`.

An edge whose three coefficients are all zero contributes nothing and is
normalized to edge removal: dropped from scenario files, and converted
to a removal when an event update zeroes all three roles.  Both cases
warn.
"""

from __future__ import annotations

import json
import math
import warnings
from typing import Mapping

from .model import Scenario, TransportPlan, build_scenario
from .online import ChangeEvent, EventSchedule


class ParseError(ValueError):
    """Input file is malformed: invalid JSON or wrong schema shape."""


def _load_json(path_or_file, what: str):
    try:
        if hasattr(path_or_file, "read"):
            return json.load(path_or_file)
        with open(path_or_file, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"{what}: {exc}") from exc


def _dump_json(payload, path_or_file) -> None:
    if hasattr(path_or_file, "write"):
        json.dump(payload, path_or_file, indent=2)
        path_or_file.write("\n")
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def _require_object(raw, what: str, required, optional=()):
    if not isinstance(raw, Mapping):
        raise ParseError(f"{what}: expected a JSON object")
    unknown = set(raw) - set(required) - set(optional)
    if unknown:
        raise ParseError(f"{what}: unknown fields {sorted(unknown)}")
    missing = set(required) - set(raw)
    if missing:
        raise ParseError(f"{what}: missing fields {sorted(missing)}")


def _is_zero_triple(raw) -> bool:
    try:
        return all(float(raw[role]["coef"]) == 0.0 for role in ("d", "s", "c"))
    except (KeyError, TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# Scenario files


def load_scenario(path_or_file) -> Scenario:
    """Read and validate a scenario file.

    Top-level fields: ``targets``, ``sources``, ``edges``, ``bounds``,
    ``horizon`` (required) and ``fairness`` (optional).
    """
    raw = _load_json(path_or_file, "scenario")
    _require_object(
        raw,
        "scenario",
        ("targets", "sources", "edges", "bounds", "horizon"),
        ("fairness",),
    )
    edges = raw["edges"]
    if not isinstance(edges, list):
        raise ParseError("scenario: 'edges' must be a list")
    kept = []
    for entry in edges:
        if isinstance(entry, Mapping) and _is_zero_triple(entry):
            warnings.warn(
                "edge (%r, %r): all coefficients are zero; treating as absent"
                % (entry.get("target"), entry.get("source")),
                stacklevel=2,
            )
            continue
        kept.append(entry)
    return build_scenario(
        targets=raw["targets"],
        sources=raw["sources"],
        edges=kept,
        bounds=raw["bounds"],
        fairness=raw.get("fairness"),
        horizon=raw["horizon"],
    )


def dump_scenario(scenario: Scenario, path_or_file) -> None:
    """Write a scenario in the file schema accepted by :func:`load_scenario`."""
    payload = {
        "targets": list(scenario.targets),
        "sources": list(scenario.sources),
        "edges": [
            {
                "target": e.target,
                "source": e.source,
                "d": {"kind": e.target_utility.kind, "coef": e.target_utility.coef},
                "s": {"kind": e.source_utility.kind, "coef": e.source_utility.coef},
                "c": {"kind": e.transport_cost.kind, "coef": e.transport_cost.coef},
            }
            for e in scenario.edges
        ],
        "bounds": {
            "targets": {
                t: {"p_lo": b.lo, "p_hi": b.hi}
                for t, b in zip(scenario.targets, scenario.target_bounds)
            },
            "sources": {
                s: {"q_lo": b.lo, "q_hi": b.hi}
                for s, b in zip(scenario.sources, scenario.source_bounds)
            },
        },
        "fairness": {
            t: {"weight": w}
            for t, w in zip(scenario.targets, scenario.fairness_weights)
        },
        "horizon": scenario.horizon,
    }
    _dump_json(payload, path_or_file)


# ---------------------------------------------------------------------------
# Plan files


def load_plan(path_or_file) -> TransportPlan:
    """Read a plan file: ``{"horizon": T, "amounts": [{target, source,
    period, amount}, ...]}`` with 1-based periods."""
    raw = _load_json(path_or_file, "plan")
    _require_object(raw, "plan", ("horizon", "amounts"))
    horizon = raw["horizon"]
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
        raise ParseError(f"plan: horizon must be a positive integer, got {horizon!r}")
    if not isinstance(raw["amounts"], list):
        raise ParseError("plan: 'amounts' must be a list")
    amounts: dict[tuple[str, str, int], float] = {}
    for pos, entry in enumerate(raw["amounts"]):
        label = f"plan.amounts[{pos}]"
        _require_object(entry, label, ("target", "source", "period", "amount"))
        target, source, period, amount = (
            entry["target"],
            entry["source"],
            entry["period"],
            entry["amount"],
        )
        if not isinstance(target, str) or not isinstance(source, str):
            raise ParseError(f"{label}: target/source must be strings")
        if isinstance(period, bool) or not isinstance(period, int) or not (
            1 <= period <= horizon
        ):
            raise ParseError(
                f"{label}: period must be an integer in [1, {horizon}], got {period!r}"
            )
        if isinstance(amount, bool) or not isinstance(amount, (int, float)):
            raise ParseError(f"{label}: amount must be a number, got {amount!r}")
        if amount < 0 or not math.isfinite(amount):
            raise ParseError(f"{label}: amount must be finite and >= 0, got {amount!r}")
        key = (target, source, period)
        if key in amounts:
            raise ParseError(f"{label}: duplicate entry for {key!r}")
        amounts[key] = float(amount)
    return TransportPlan(horizon=horizon, amounts=amounts)


def dump_plan(plan: TransportPlan, path_or_file) -> None:
    """Write a plan in the file schema accepted by :func:`load_plan`."""
    payload = {
        "horizon": plan.horizon,
        "amounts": [
            {"target": t, "source": s, "period": p, "amount": a}
            for (t, s, p), a in plan.amounts.items()
        ],
    }
    _dump_json(payload, path_or_file)


# ---------------------------------------------------------------------------
# Event files


_EVENT_FIELDS = (
    "at_iteration",
    "add_targets",
    "add_sources",
    "remove_targets",
    "remove_sources",
    "add_edges",
    "remove_edges",
    "update_bounds",
    "update_functions",
    "update_fairness",
)


def load_events(path_or_file) -> EventSchedule:
    """Read an event file: a JSON list of event objects.

    Each object needs ``at_iteration``; the optional mutation fields
    mirror :class:`~fairalloc.online.ChangeEvent`.  ``remove_edges``
    entries are ``{"target": ..., "source": ...}`` objects.
    """
    raw = _load_json(path_or_file, "events")
    if not isinstance(raw, list):
        raise ParseError("events: expected a JSON list of event objects")
    events = []
    for pos, entry in enumerate(raw):
        label = f"events[{pos}]"
        _require_object(entry, label, ("at_iteration",), _EVENT_FIELDS)
        removals = []
        for r_pos, ref in enumerate(entry.get("remove_edges", [])):
            _require_object(
                ref, f"{label}.remove_edges[{r_pos}]", ("target", "source")
            )
            removals.append((ref["target"], ref["source"]))
        added = []
        for a_pos, edge in enumerate(entry.get("add_edges", [])):
            if isinstance(edge, Mapping) and _is_zero_triple(edge):
                warnings.warn(
                    "%s.add_edges[%d]: all coefficients are zero; ignoring the edge"
                    % (label, a_pos),
                    stacklevel=2,
                )
                continue
            added.append(edge)
        updates = []
        for u_pos, patch in enumerate(entry.get("update_functions", [])):
            if isinstance(patch, Mapping) and _is_zero_triple(patch):
                warnings.warn(
                    "%s.update_functions[%d]: all coefficients are zero; "
                    "treating as edge removal" % (label, u_pos),
                    stacklevel=2,
                )
                removals.append((patch.get("target"), patch.get("source")))
                continue
            updates.append(patch)
        try:
            events.append(
                ChangeEvent(
                    at_iteration=entry["at_iteration"],
                    add_targets=entry.get("add_targets", {}),
                    add_sources=entry.get("add_sources", {}),
                    remove_targets=entry.get("remove_targets", ()),
                    remove_sources=entry.get("remove_sources", ()),
                    add_edges=added,
                    remove_edges=removals,
                    update_bounds=entry.get("update_bounds", {}),
                    update_functions=updates,
                    update_fairness=entry.get("update_fairness", {}),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{label}: {exc}") from exc
    try:
        return EventSchedule(events=tuple(events))
    except ValueError as exc:
        raise ParseError(f"events: {exc}") from exc
