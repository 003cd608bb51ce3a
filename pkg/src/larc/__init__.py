"""Online risk-control calibration: ARC, Mondrian ARC and localized ARC (L-ARC)."""

from .controllers import (
    ArcController,
    ArcState,
    LarcController,
    MondrianController,
    MondrianState,
    Partition,
    arc_update,
    make_controller,
    mondrian_observe,
    threshold_at,
)
from .kernels import KernelSpec, gram, lipschitz_constant
from .losses import LossSpec, best_ratio_regret, build_set, fnr, miscoverage, value_set_to_score_set
from .metrics import (
    RunRecord,
    WeightingFn,
    arc_bound,
    cumulative_risk,
    group_conditional_risk,
    localized_risk,
    theorem1_gap,
    theorem2_bound,
)
from .threshold_model import (
    ConfigError,
    LarcConfig,
    LarcState,
    averaged_threshold,
    bound_box,
    predict_threshold,
    rkhs_norm,
    update,
)

__version__ = "0.1.0"
