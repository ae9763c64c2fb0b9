"""Self-regulating random walk (SRRW) simulation and analysis toolkit."""

__version__ = "0.1.0"

from .analysis import (
    CorridorStats,
    FeasibilityReport,
    check_corridor_feasibility,
    check_feasibility,
    corridor_distance,
    corridor_stats,
    lyapunov_drift,
)
from .envelopes import (
    EnvelopeModel,
    MatchingAgeInterval,
    doeblin_constants,
    fit_constants,
    fork_intensity,
    laplace,
    solve_matching_age,
)
from .graphs import (
    Graph,
    MixingProfile,
    StationaryDistribution,
    TransitionKernel,
    lazy_kernel,
    mixing_profile,
    stationary_distribution,
)
from .policy import AgeLaw, PolicySpec, RegimePolicy, VisitAction, decide, mean_termination_rate
from .population import (
    BlockPlan,
    PopulationState,
    PopulationTrace,
    StepCounts,
    TrapProfile,
    block_drift,
    gw_baseline,
    occupancy_check,
    run_population,
    step,
)
from .return_time import AgeClock, ReturnTimeSample, empirical_tail, sample_return_times, update_age

__all__ = [
    "AgeClock",
    "AgeLaw",
    "BlockPlan",
    "CorridorStats",
    "EnvelopeModel",
    "FeasibilityReport",
    "Graph",
    "MatchingAgeInterval",
    "MixingProfile",
    "PolicySpec",
    "PopulationState",
    "PopulationTrace",
    "RegimePolicy",
    "ReturnTimeSample",
    "StationaryDistribution",
    "StepCounts",
    "TransitionKernel",
    "TrapProfile",
    "VisitAction",
    "__version__",
    "block_drift",
    "check_corridor_feasibility",
    "check_feasibility",
    "corridor_distance",
    "corridor_stats",
    "decide",
    "doeblin_constants",
    "empirical_tail",
    "fit_constants",
    "fork_intensity",
    "gw_baseline",
    "laplace",
    "lazy_kernel",
    "lyapunov_drift",
    "mean_termination_rate",
    "mixing_profile",
    "occupancy_check",
    "run_population",
    "sample_return_times",
    "solve_matching_age",
    "stationary_distribution",
    "step",
    "update_age",
]
