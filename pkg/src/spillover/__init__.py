"""Spatio-temporal spillover effects in panels with interference.

The package estimates how a unit's treatment history shifts outcomes of
units at a given distance, using inverse-probability weighting with
propensity models fitted to the assignment history.

Modules
-------
panel
    Balanced panels, treatment histories and CSV input/output.
spatial
    Distances and spillover mappings (circle and range means).
propensity
    Logistic propensity models and history probabilities.
estimators
    Horvitz-Thompson, Hajek, augmented and difference-in-differences
    contrasts.
variance
    Sandwich variances with spatial kernels and randomization tests.
simulation
    Raster simulator with known effects and replication studies.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateResponse,
    DuplicateRow,
    EmptyCircle,
    InvalidHistory,
    InvalidTreatment,
    Mismatch,
    NoSupport,
    RankDeficient,
    SeparationError,
    SpilloverError,
    UnbalancedPanel,
)
from .panel import HistorySpec, PanelDataset, load_panel, validate_panel, write_panel  # noqa: E402
from .spatial import (  # noqa: E402
    DistanceMatrix,
    SpilloverMapping,
    circle_mean_weights,
    dependency_bound,
    distance_matrix,
    range_mean_weights,
)
from .propensity import (  # noqa: E402
    FeatureSpec,
    PropensitySpec,
    PropensityTable,
    estimate_propensity,
    fit_logistic_irls,
)
from .estimators import (  # noqa: E402
    did_bias_oracle,
    did_estimate,
    eate_augmented,
    eate_hajek,
    eate_ht,
    fit_diffusion_model,
)
from .variance import (  # noqa: E402
    confidence_interval,
    hajek_wls,
    hc0,
    randomization_test,
    spatial_hac,
    twoway_hac,
)
from .simulation import (  # noqa: E402
    EstimatorSpec,
    SimConfig,
    build_world,
    replicate,
    simulate_panel,
    true_eate_mc,
)
