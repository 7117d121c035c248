"""Multi-output Gaussian processes for region-aggregated (areal) spatial data.

Observations attached to regions of mixed granularity are modeled as
integrals of a latent multi-output GP; the package fits hyperparameters by
marginal likelihood, predicts at points or regions with calibrated
uncertainty, transfers latent kernels across domains, and ships baselines,
a synthetic-data generator, and a config-driven CLI.
"""

from .aggregation import (
    DistanceCache,
    MarginalMoments,
    assemble_moments,
    build_distance_cache,
    cholesky_with_jitter,
    pair_distance_hist,
    point_to_region_cov,
    region_cov_block,
)
from .data import DatasetData, DomainData, denormalize, denormalize_variance
from .errors import (
    ArealGPError,
    ConfigError,
    CVFailed,
    EmptyRegion,
    GridMismatch,
    GridTooLarge,
    MissingWeights,
    NotPositiveDefinite,
    OptimizerDiverged,
    OverlappingRegions,
    UnknownDataset,
    UnknownDomain,
    ZeroTruthValue,
)
from .geometry import (
    AggregationScheme,
    GridSpec,
    Partition,
    PartitionDiagnostics,
    PolygonGeometry,
    Region,
    aggregation_weights,
    rasterize,
    region_centroid,
    validate_partition,
)
from .kernel import (
    HyperParams,
    LatentKernel,
    MixingWeights,
    NoiseSpec,
    cross_cov,
    gamma,
    gamma_table,
    load_hyperparams,
    make_hyperparams,
    save_hyperparams,
)
from .model import (
    FitDiagnostics,
    FittedModel,
    ModelConfig,
    PosteriorGP,
    dataset_slots,
    fit,
    gradient,
    load_model,
    log_marginal_likelihood,
    pack_hyperparams,
    posterior_grid,
    posterior_point,
    predict_region,
    save_model,
    unpack_hyperparams,
)

__version__ = "0.1.0"
