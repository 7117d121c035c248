"""Areal observation containers: datasets grouped per domain, z-scored storage."""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, UnknownDataset
from .geometry import (
    AggregationScheme,
    GridSpec,
    Partition,
    aggregation_weights,
    validate_partition,
)


@dataclass(frozen=True, eq=False)
class DatasetData:
    """One areal dataset: a partition, aggregation weights, z-scored observations."""

    dataset_id: str
    partition: Partition
    scheme: AggregationScheme
    y: np.ndarray              # normalized observations, one per region
    mean: float
    std: float
    weights: tuple[np.ndarray, ...]  # aggregation weights per region

    @property
    def n_regions(self) -> int:
        return self.partition.n_regions


class DomainData:
    """All areal datasets observed on one domain (one grid).

    Observations are stored z-scored per dataset; the (mean, std) pair makes
    raw values recoverable.  A dataset with zero variance keeps std = 1.
    """

    def __init__(self, domain_id: str, grid: GridSpec, datasets: list[DatasetData]):
        self.domain_id = domain_id
        self.grid = grid
        self.datasets = list(datasets)
        ids = [d.dataset_id for d in self.datasets]
        if len(set(ids)) != len(ids):
            raise ValueError(f"domain {domain_id!r} has duplicate dataset ids")

    @classmethod
    def from_raw(cls, domain_id: str, grid: GridSpec,
                 datasets: list[tuple[str, Partition, AggregationScheme, np.ndarray]]
                 ) -> "DomainData":
        """Build from raw observations, validating geometry and normalizing."""
        built = []
        for dataset_id, partition, scheme, y_raw in datasets:
            scheme = AggregationScheme(scheme)
            y_raw = np.asarray(y_raw, dtype=np.float64).ravel()
            if y_raw.size != partition.n_regions:
                raise ValueError(
                    f"dataset {dataset_id!r}: {y_raw.size} observations for "
                    f"{partition.n_regions} regions"
                )
            if not np.all(np.isfinite(y_raw)):
                raise ValueError(f"dataset {dataset_id!r}: observations must be finite")
            diag = validate_partition(partition, grid)
            for msg in diag.warnings:
                if "outside the grid" in msg:
                    raise GridMismatch(f"dataset {dataset_id!r}: {msg}")
            if y_raw.size:
                mean = float(y_raw.mean())
                std = float(y_raw.std())
            else:
                mean, std = 0.0, 1.0
            if std == 0.0:
                std = 1.0
            weights = tuple(aggregation_weights(r, scheme, grid) for r in partition.regions)
            built.append(DatasetData(
                dataset_id=dataset_id,
                partition=partition,
                scheme=scheme,
                y=(y_raw - mean) / std,
                mean=mean,
                std=std,
                weights=weights,
            ))
        return cls(domain_id, grid, built)

    @property
    def n_obs(self) -> int:
        return sum(d.n_regions for d in self.datasets)

    def dataset_ids(self) -> list[str]:
        return [d.dataset_id for d in self.datasets]

    def dataset(self, dataset_id: str) -> DatasetData:
        for d in self.datasets:
            if d.dataset_id == dataset_id:
                return d
        raise UnknownDataset(f"dataset {dataset_id!r} not in domain {self.domain_id!r}")

    def stacked_y(self) -> np.ndarray:
        """All normalized observations concatenated in dataset order."""
        if not self.datasets:
            return np.empty(0)
        return np.concatenate([d.y for d in self.datasets])

    def raw_observations(self, dataset_id: str) -> np.ndarray:
        d = self.dataset(dataset_id)
        return d.y * d.std + d.mean


def denormalize(domain: DomainData, dataset_id: str, values) -> np.ndarray:
    """Map normalized values back to raw units: value * std + mean."""
    d = domain.dataset(dataset_id)
    return np.asarray(values, dtype=np.float64) * d.std + d.mean


def denormalize_variance(domain: DomainData, dataset_id: str, variances) -> np.ndarray:
    """Map normalized variances back to raw units (scales by std^2)."""
    d = domain.dataset(dataset_id)
    return np.asarray(variances, dtype=np.float64) * d.std * d.std
