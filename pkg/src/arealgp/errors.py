"""Exception types raised across the package."""


class ArealGPError(Exception):
    """Base class for all package-specific errors."""


class EmptyRegion(ArealGPError):
    """Rasterization produced no grid cells for a polygon."""


class MissingWeights(ArealGPError):
    """Weighted-average aggregation requested on a region without cell weights."""


class OverlappingRegions(ArealGPError):
    """Two regions of one partition share at least one grid cell."""

    def __init__(self, region_a: str, region_b: str):
        self.region_a = region_a
        self.region_b = region_b
        super().__init__(f"regions {region_a!r} and {region_b!r} overlap")


class GridMismatch(ArealGPError):
    """A region references cells outside the grid it is used with."""


class NotPositiveDefinite(ArealGPError):
    """A covariance matrix failed Cholesky factorization after jitter escalation."""


class OptimizerDiverged(ArealGPError):
    """Every optimization restart failed or produced a non-finite objective."""


class UnknownDomain(ArealGPError):
    """A domain id does not exist in the fitted model."""


class UnknownDataset(ArealGPError):
    """A dataset id does not exist in the domain or model."""


class ZeroTruthValue(ArealGPError):
    """A ground-truth value of exactly zero makes percentage error undefined."""


class CVFailed(ArealGPError):
    """Too many cross-validation folds failed to produce a selection."""


class GridTooLarge(ArealGPError):
    """Grid exceeds the exact-sampling bound of the synthetic generator."""


class ConfigError(ArealGPError):
    """A run configuration file is missing, malformed, or inconsistent."""
