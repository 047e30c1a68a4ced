"""Average-cost optimal control of piecewise-deterministic Markov processes.

Solver pipeline: load a model file, validate it, audit the growth and
ergodicity assumptions, run policy iteration on the embedded jump chain, and
validate the optimal average cost by Monte Carlo simulation of the
continuous-time process.
"""

from .numerics import Table1D
from .flow import (
    FlowSpec,
    FlowMesh,
    PastBoundaryError,
    advance,
    hit_time,
    build_mesh,
    flow_derivative,
)
from .model import (
    PdmpModel,
    StateGrid,
    ActionGrid,
    Constants,
    FeedbackPolicy,
    Violation,
    AuditItem,
    AuditReport,
    ModelFormatError,
    DimensionError,
    load_model,
    model_from_dict,
    validate_model,
    audit_assumptions,
    bundled_model_names,
    bundled_model_path,
)
from .operators import (
    PolicyPath,
    KernelMatrix,
    OperatorWorkspace,
    build_policy_path,
    cum_rate,
    op_L,
    op_calL,
    op_H,
    op_G,
    kernel_matrix,
    refined_workspace,
)
from .evaluation import (
    EvaluationResult,
    EvaluationError,
    ErgodicityError,
    invariant_measure,
    estimate_ergodic_constants,
    evaluate_policy,
    residual,
)
from .policy_iteration import (
    PiaTrace,
    IterationRecord,
    improve_policy,
    one_stage_value,
    optimality_residual,
    run_pia,
)
from .simulation import (
    TrajectoryRecord,
    SimulationSummary,
    SimulationTables,
    SimulationError,
    SimulationExplosionError,
    McVerdict,
    prepare_simulation,
    sample_sojourn,
    simulate,
    mc_validate,
)

__version__ = "0.1.0"
