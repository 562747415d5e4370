"""Post-selection inference for sparse canonical correlation analysis.

Estimates and tests the maximal root-Pillai trace over paired variable
subsets of pre-specified sizes, combining a greedy subset search with exact
trace increments and a stabilized one-step estimator whose confidence
interval accounts for the selection.
"""

from .data import (
    Ordering,
    PairedDataset,
    as_paired,
    bound_check,
    load_csv,
    reorder,
    save_csv,
)
from .errors import (
    CcamaxError,
    DegenerateStreamError,
    IllConditionedError,
    InternalConsistencyError,
    NumericalError,
    SearchSpaceError,
    ValidationError,
)
from .estimators import GreedyPillaiSelector, StabilizedOneStep
from .greedy import (
    GreedyState,
    StepRecord,
    full_search,
    greedy_select,
    increment_x,
    increment_y,
    residual_column,
    scree_increments,
    submodularity_probe,
)
from .influence import (
    GradientContext,
    build_context,
    degenerate_gradient,
    empirical_variance,
    evaluate,
)
from .moments import (
    CoherenceBlock,
    IndexPair,
    Moments,
    Tolerances,
    coherence_block,
    pillai_trace,
    root_pillai,
)
from .simulate import (
    CellResult,
    HistogramCell,
    ModelSpec,
    Population,
    build_population,
    histogram_study,
    run_monte_carlo_cell,
    sample,
)
from .stream import (
    EstimateReport,
    StreamConfig,
    StreamTrace,
    TestDecision,
    estimate,
    run_stream,
    test_null,
    weighted_average_from_trace,
)

__version__ = "0.1.0"

__all__ = [
    "CcamaxError",
    "CellResult",
    "CoherenceBlock",
    "DegenerateStreamError",
    "EstimateReport",
    "GradientContext",
    "GreedyPillaiSelector",
    "GreedyState",
    "HistogramCell",
    "IllConditionedError",
    "IndexPair",
    "InternalConsistencyError",
    "ModelSpec",
    "Moments",
    "NumericalError",
    "Ordering",
    "PairedDataset",
    "Population",
    "SearchSpaceError",
    "StabilizedOneStep",
    "StepRecord",
    "StreamConfig",
    "StreamTrace",
    "TestDecision",
    "Tolerances",
    "ValidationError",
    "as_paired",
    "bound_check",
    "build_context",
    "build_population",
    "coherence_block",
    "degenerate_gradient",
    "empirical_variance",
    "estimate",
    "evaluate",
    "full_search",
    "greedy_select",
    "histogram_study",
    "increment_x",
    "increment_y",
    "load_csv",
    "pillai_trace",
    "reorder",
    "residual_column",
    "root_pillai",
    "run_stream",
    "run_monte_carlo_cell",
    "sample",
    "save_csv",
    "scree_increments",
    "submodularity_probe",
    "test_null",
    "weighted_average_from_trace",
]
