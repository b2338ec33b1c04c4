"""Fair multi-period resource allocation over bipartite source-target networks.

The package solves concave social-welfare allocation problems with
per-node shipment bounds three ways: a distributed consensus solver
(the product), a centralized projected-ascent solver, and an exhaustive
grid search for tiny instances (the latter two serve as independent
references).  Online runs apply scheduled network revisions mid-solve
while carrying solver state across each change.
"""

from .admm import (
    RunResult,
    SolverOptions,
    SolverState,
    consensus_update,
    dual_update,
    init_state,
    iterate,
    primal_residual,
    run,
)
from .estimators import (
    CentralizedTransportSolver,
    DistributedTransportSolver,
    OnlineTransportSolver,
)
from .metrics import (
    CSV_HEADER,
    IterationRecord,
    Trajectory,
    export_csv,
    residual_to_reference,
)
from .model import (
    Edge,
    FeasibilityError,
    FeasibilityReport,
    FunctionSpec,
    Interval,
    PlanMismatchError,
    Scenario,
    ScenarioError,
    TransportPlan,
    build_scenario,
    check_feasibility,
    eval_derivative,
    eval_function,
    plan_from_vector,
    plan_to_vector,
    social_utility,
)
from .online import (
    ChangeEvent,
    EventError,
    EventSchedule,
    OnlineResult,
    apply_event,
    run_online,
)
from .oracle import (
    CentralizedResult,
    GridResult,
    OracleOptions,
    grid_search,
    project_onto_feasible_set,
    solve_centralized,
)
from .projection import (
    CappedSimplex,
    SubproblemResult,
    project,
    solve_source_subproblem,
    solve_target_subproblem,
)
from .scenario_io import (
    ParseError,
    dump_plan,
    dump_scenario,
    load_events,
    load_plan,
    load_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "CSV_HEADER",
    "CappedSimplex",
    "CentralizedResult",
    "CentralizedTransportSolver",
    "ChangeEvent",
    "DistributedTransportSolver",
    "Edge",
    "EventError",
    "EventSchedule",
    "FeasibilityError",
    "FeasibilityReport",
    "FunctionSpec",
    "GridResult",
    "Interval",
    "IterationRecord",
    "OnlineResult",
    "OnlineTransportSolver",
    "OracleOptions",
    "ParseError",
    "PlanMismatchError",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "SolverOptions",
    "SolverState",
    "SubproblemResult",
    "Trajectory",
    "TransportPlan",
    "apply_event",
    "build_scenario",
    "check_feasibility",
    "consensus_update",
    "dual_update",
    "dump_plan",
    "dump_scenario",
    "eval_derivative",
    "eval_function",
    "export_csv",
    "grid_search",
    "init_state",
    "iterate",
    "load_events",
    "load_plan",
    "load_scenario",
    "plan_from_vector",
    "plan_to_vector",
    "primal_residual",
    "project",
    "project_onto_feasible_set",
    "residual_to_reference",
    "run",
    "run_online",
    "social_utility",
    "solve_centralized",
    "solve_source_subproblem",
    "solve_target_subproblem",
    "__version__",
]
