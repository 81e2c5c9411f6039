"""Predictive PID ratio control for 2x2 processes with unequal input delays."""

from .errors import (
    ConfigError,
    DelayMismatch,
    EigenvalueFailure,
    EmptySeries,
    NoCrossover,
    NoFeasibleEpsilon,
    NonIntegerDelay,
    NonPositiveTimeConstant,
    RatioPidError,
    SingularSystem,
)
from .fopdt_model import (
    ContinuousPlant,
    DiscretePlant,
    PidState,
    StateSpace,
    assemble_state_space,
    aux_reference,
    discretize,
    reconstruct_state,
    step_model,
)
from .gpc_core import (
    CostWeights,
    GpcGains,
    PredictionMatrices,
    assemble_cost,
    build_prediction,
    solve_gains,
)
from .pid_schedule import (
    FeedforwardEngine,
    GainSchedule,
    ReferenceProvider,
    build_schedule,
    control_step,
    predict_state_coefficients,
)
from .stability import (
    StabilityReport,
    build_companion,
    check_stability,
    determinant_residual,
    factored_determinant,
)
from .simulator import (
    BlendStation,
    DesignSpec,
    Disturbance,
    ParallelRatioPid,
    PredictivePid,
    Scenario,
    SetpointVariation,
    SimResult,
    StepProfile,
    metrics,
    run,
    run_baseline_blend,
    run_baseline_parallel,
    run_baseline_setpoint_variation,
    simulate_plant,
)
from .tuning import (
    TuningContext,
    TuningResult,
    UltimateLoopData,
    find_ultimate,
    tune,
    tune_epsilon,
    tune_integral,
    tune_ratio_weights,
)
from .config import (
    RunConfig,
    config_to_mapping,
    load_config,
    parse_config,
    save_config,
    tuning_context,
)

__version__ = "0.1.0"
