"""Jointly optimized beamformer-assisted acoustic echo canceler (GSC form):
time-domain simulation, closed-form transient/steady-state model, stability
checks and parameter design search.
"""

from .adaptive_engine import (
    AdaptiveState,
    PolicySegment,
    StepPolicy,
    matrix_policy,
    quasi_newton_matrix,
    residual,
    split_policy,
    step_general,
    step_split,
)
from .analytic_model import (
    ModelSetup,
    full_matrix_recursion,
    mean_weight_curve,
    mop_curve,
    nu0_from_psi_opt,
    nu_closed_form,
    nu_curve,
    setup_model,
    stability_report,
    steady_state_jex,
    steady_state_nu,
    to_db,
)
from .design_search import DesignOutcome, DesignPoint, DesignSpec, search
from .gsc_core import (
    GscStructure,
    SecondOrderStats,
    build_blocking,
    build_constraints,
    build_gsc,
    extend_and_quiesce,
    optimal_solutions,
)
from .harness import (
    Event,
    LearningCurve,
    PlantConfig,
    Scenario,
    compare,
    model_curve,
    run_ensemble,
    run_schedule,
)
from .kernel import backend_name
from .signal_model import (
    FarEndModel,
    Interferer,
    LemPlant,
    NearEndModel,
    analytic_Rbb,
    build_modified_channel_matrix,
    gen_far_end,
    gen_lem_plant,
    sample_Rbb,
    stream_regressors,
)

__version__ = "0.1.0"
