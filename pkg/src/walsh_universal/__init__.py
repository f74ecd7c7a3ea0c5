"""Walsh-Paley series toolkit.

Dyadic grids and exact transforms (grids), sparse block series and their
partial sums (series), matching-polynomial builders (builders), the
independent margin checker (checker), the universal-series pipeline
(pipeline), and JSON/CSV persistence (storage).
"""

from .builders import (
    BuildLimits,
    band_match_1d,
    step_match_2d,
    tensor_match_2d,
)
from .checker import CheckItem, CheckReport
from .errors import (
    ConstructionFailed,
    FrequencyBudgetExceeded,
    InsufficientDepth,
    ResolutionError,
    SeriesFileError,
    TargetNotApproximable,
)
from .grids import (
    DyadicGrid1D,
    DyadicGrid2D,
    DyadicInterval,
    DyadicRect,
    DyadicSet1D,
    DyadicSet2D,
    StepFunction1D,
    StepFunction2D,
    as_dyadic,
    dirichlet_packet,
    fwht,
    fwht2,
    ifwht,
    ifwht2,
    product_set,
    rademacher,
    sup_norm,
    walsh,
    weighted_l1,
)
from .pipeline import (
    ApproxStep,
    ApproxTrace,
    BlockRecord,
    Catalog,
    WeightFunction,
    block_tolerance,
    build_universal,
    build_weight,
    generate_catalog,
    greedy_subseries,
    micro_catalog,
    verify_block,
    verify_construction,
    weight_start_index,
)
from .series import (
    PartialSumCut,
    SparseCoeffs1D,
    SparseCoeffs2D,
    WalshSeries2D,
    coeff_power_norm,
    distinct_cuts,
    rect_partial_sum,
    sph_partial_sum,
    worst_subset_margin,
)
from .storage import load_series, load_target, save_series

__version__ = "0.1.0"
