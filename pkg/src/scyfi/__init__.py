"""Exact fixed points and cycles of ReLU RNNs, bifurcation detection and GTF training."""

from .core import (
    AffineComposition,
    ParamsError,
    PlrnnParams,
    RegionCode,
    Trajectory,
    apply_step,
    canonical_rotation,
    compose,
    iterate,
    load_params,
    params_from_dict,
    params_to_dict,
    region_of,
    save_params,
    step_matrix,
)
from .oracle2d import (
    Pwl2dParams,
    RegionVerdict,
    curve_values,
    cycle2,
    cycle3,
    fixed_point,
    multistability_scan,
    stable_inventory,
)
from .scaling import (
    embed_fixed_point,
    exhaustive_expectation,
    generate_case1_params,
    generate_case2_params,
)
from .search import (
    BudgetGuardError,
    CycleLibrary,
    CycleObject,
    SearchBudget,
    exhaustive_oracle,
    libraries_match,
    required_initializations,
    scyfi_find_all,
    scyfi_find_k,
    solve_cycle_candidate,
)
from .sweep import (
    BifurcationEvent,
    SweepAxis,
    SweepSpec,
    analyze_training_trace,
    classify_event,
    run_sweep,
)
from .training import (
    GtfConfig,
    LossSpec,
    SgdConfig,
    bptt_gradient,
    cycle_gradient,
    gtf_alpha_bound,
    lookahead_probe,
    train,
)

__version__ = "0.1.0"
