"""Adaptive-sample-size projected gradient solver for constrained finite sums.

Minimises a weighted finite sum sum_i w_i f_i(x) over the affine set
{x : A x = b}.  Gradients are estimated on growing mini-batches, steps are
projected inexactly by conjugate gradients with a decaying tolerance, and
an independent control sample decides whether to accept each step or grow
the batch.  A deterministic full-gradient baseline and a benchmark CLI
round out the package.
"""

from .baseline import BaselineConfig, run_baseline, validate_baseline_config
from .constraints import (
    ConstraintSet,
    ProjectionResult,
    build_constraint_set,
    cg_solve,
    exact_project,
    feasibility_gap,
    inexact_project,
    load_constraints,
    projected_direction,
    save_constraints,
)
from .errors import (
    CgStalled,
    ConfigInvalid,
    DimensionMismatch,
    EmptyGroup,
    InvariantViolation,
    IpasError,
    LabelError,
    MaxBacktracks,
    NonFiniteValue,
    ParseError,
    RankDeficient,
    WeightError,
)
from .experiment import (
    ExperimentConfig,
    ExperimentOutcome,
    SummaryRow,
    build_problem,
    budget_curve,
    execute_run,
    final_norm_d,
    interpolate_log_d,
    parse_experiment_config,
    plan_runs,
    reach_budget,
    read_manifest,
    run_experiment,
    summarize_dir,
    summarize_group,
)
from .objective import (
    BudgetMeter,
    CallableKernel,
    FiniteSumObjective,
    SampleIndexSet,
    draw_sample,
    full_grad,
    full_value,
    subsample_grad,
    subsample_value,
    uniform_weights,
)
from .problems import (
    LogisticDataset,
    NoisyQuadraticSpec,
    generate_constraints,
    load_libsvm,
    logistic_component,
    logistic_objective,
    make_noisy_quadratic,
    make_synthetic_logistic,
    min_norm_feasible,
    noisy_quadratic_component,
    noisy_quadratic_objective,
    save_libsvm,
)
from .solver import (
    STATUS_MAX_ITERATIONS,
    STATUS_STATIONARY,
    TRACE_COLUMNS,
    IterationRecord,
    RunResult,
    SolverConfig,
    SolverState,
    additional_sampling_test,
    descent_check,
    eta,
    ipas_step,
    line_search_full,
    line_search_minibatch,
    read_trace,
    run,
    search_direction,
    validate_config,
    write_trace,
)

__version__ = "0.1.0"
