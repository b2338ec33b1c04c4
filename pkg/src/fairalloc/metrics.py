"""Run trajectories, reference residuals, and CSV export."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

from .model import PlanMismatchError, TransportPlan

CSV_HEADER = "k,social_utility,primal_residual,reference_residual,segment"


@dataclass(frozen=True)
class IterationRecord:
    """One recorded solver iteration.

    ``reference_residual`` is the Euclidean distance of the consensus
    plan to the active reference plan, or None when no reference is set.
    ``segment`` counts network revisions in online runs (0 otherwise).
    """

    iteration: int
    social_utility: float
    primal_residual: float
    reference_residual: float | None = None
    segment: int = 0


@dataclass(frozen=True)
class Trajectory:
    """Ordered iteration records of a solver run."""

    records: tuple[IterationRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[IterationRecord]:
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    @property
    def final(self) -> IterationRecord | None:
        return self.records[-1] if self.records else None

    def segment_ids(self) -> tuple[int, ...]:
        seen = dict.fromkeys(r.segment for r in self.records)
        return tuple(seen)


def residual_to_reference(plan: TransportPlan, reference: TransportPlan) -> float:
    """Euclidean distance between two plans over their (edge, period) keys.

    The key sets must match exactly; anything else raises
    :class:`~fairalloc.model.PlanMismatchError`.
    """
    if plan.horizon != reference.horizon:
        raise PlanMismatchError(
            f"plan horizon {plan.horizon} != reference horizon {reference.horizon}"
        )
    keys = set(plan.amounts)
    ref_keys = set(reference.amounts)
    if keys != ref_keys:
        parts = []
        only_plan = keys - ref_keys
        only_ref = ref_keys - keys
        if only_plan:
            parts.append(
                "keys only in plan: %s" % ", ".join(map(str, sorted(only_plan)[:5]))
            )
        if only_ref:
            parts.append(
                "keys only in reference: %s" % ", ".join(map(str, sorted(only_ref)[:5]))
            )
        raise PlanMismatchError("; ".join(parts))
    return math.sqrt(
        sum(
            (plan.amounts[k] - reference.amounts[k]) ** 2
            for k in sorted(plan.amounts)
        )
    )


def _format(x: float) -> str:
    return "%.17g" % x


def export_csv(trajectory: Trajectory, path_or_file) -> None:
    """Write a trajectory as CSV: ``k,social_utility,primal_residual,
    reference_residual,segment`` with 17-significant-digit floats, UTF-8
    and LF line endings.  ``reference_residual`` is empty when absent."""
    if hasattr(path_or_file, "write"):
        _write_csv(trajectory, path_or_file)
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="\n") as fh:
            _write_csv(trajectory, fh)


def _write_csv(trajectory: Trajectory, fh) -> None:
    fh.write(CSV_HEADER + "\n")
    for r in trajectory:
        ref = "" if r.reference_residual is None else _format(r.reference_residual)
        fh.write(
            "%d,%s,%s,%s,%d\n"
            % (
                r.iteration,
                _format(r.social_utility),
                _format(r.primal_residual),
                ref,
                r.segment,
            )
        )
