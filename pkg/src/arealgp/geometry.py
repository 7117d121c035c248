"""Grid geometry: regular grids, regions as cell sets, polygon rasterization.

The input space is discretized into square cells; every spatial quantity in
the package lives on the cell centers ("grid points").  Cell index convention
is row-major: ``cell_id = row * nx + col``, with ``col`` along +x and ``row``
along +y.
"""

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptyRegion, GridMismatch, MissingWeights, OverlappingRegions


@dataclass(frozen=True)
class GridSpec:
    """Regular square-cell grid over a planar input space.

    Grid point ``i`` sits at the center of its cell:
    ``origin + (col(i) + 0.5, row(i) + 0.5) * cell_size``.
    """

    origin: tuple[float, float]
    cell_size: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one cell, got {self.nx}x{self.ny}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.cell_size * self.cell_size

    def cell_centers(self) -> np.ndarray:
        """Coordinates of all grid points, shape (n_cells, 2), row-major order."""
        cols = np.arange(self.nx)
        rows = np.arange(self.ny)
        xs = self.origin[0] + (cols + 0.5) * self.cell_size
        ys = self.origin[1] + (rows + 0.5) * self.cell_size
        xx, yy = np.meshgrid(xs, ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def rows_cols(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cells = np.asarray(cells)
        return cells // self.nx, cells % self.nx

    def cell_index(self, row: int, col: int) -> int:
        return int(row) * self.nx + int(col)

    def nearest_cell(self, point) -> int:
        """Index of the grid point closest to an arbitrary planar point."""
        col = int(np.clip(np.floor((point[0] - self.origin[0]) / self.cell_size), 0, self.nx - 1))
        row = int(np.clip(np.floor((point[1] - self.origin[1]) / self.cell_size), 0, self.ny - 1))
        return self.cell_index(row, col)

    def check_cells(self, cells: np.ndarray, context: str = "region"):
        cells = np.asarray(cells)
        if cells.size and (cells.min() < 0 or cells.max() >= self.n_cells):
            raise GridMismatch(
                f"{context} references cells outside the {self.nx}x{self.ny} grid"
            )


@dataclass(frozen=True, eq=False)
class Region:
    """A subset of grid cells carrying one areal observation.

    ``cells`` are grid-point indices in a caller-chosen order; optional
    ``cell_weights`` (aligned with ``cells``) support weighted aggregation.
    """

    region_id: str
    cells: np.ndarray
    cell_weights: np.ndarray | None = None

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64).ravel()
        if cells.size == 0:
            raise ValueError(f"region {self.region_id!r} has no cells")
        if np.unique(cells).size != cells.size:
            raise ValueError(f"region {self.region_id!r} has duplicate cells")
        object.__setattr__(self, "cells", cells)
        if self.cell_weights is not None:
            w = np.asarray(self.cell_weights, dtype=np.float64).ravel()
            if w.size != cells.size:
                raise ValueError(
                    f"region {self.region_id!r}: {w.size} weights for {cells.size} cells"
                )
            if np.any(w < 0) or w.sum() <= 0:
                raise ValueError(f"region {self.region_id!r}: weights must be >= 0 with positive sum")
            object.__setattr__(self, "cell_weights", w)

    @property
    def n_cells(self) -> int:
        return self.cells.size


@dataclass(frozen=True, eq=False)
class Partition:
    """A named collection of regions; disjointness is checked by validate_partition."""

    partition_id: str
    regions: list[Region]

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def region_ids(self) -> list[str]:
        return [r.region_id for r in self.regions]


class AggregationScheme(str, Enum):
    """How an areal observation summarizes the field over its region."""

    AVERAGE = "average"
    SUM = "sum"
    WEIGHTED_AVERAGE = "weighted-average"


@dataclass(frozen=True, eq=False)
class PolygonGeometry:
    """Polygon shape of a region: one or more closed rings (even-odd holes)."""

    region_id: str
    rings: list[np.ndarray]

    def __post_init__(self):
        closed = []
        for k, ring in enumerate(self.rings):
            v = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
            if v.shape[0] >= 2 and np.array_equal(v[0], v[-1]):
                v = v[:-1]
            if v.shape[0] < 3:
                raise ValueError(f"polygon {self.region_id!r} ring {k} has fewer than 3 vertices")
            closed.append(np.vstack([v, v[:1]]))
        object.__setattr__(self, "rings", closed)


@dataclass
class PartitionDiagnostics:
    """Result of validate_partition: coverage and non-fatal findings."""

    coverage: float
    empty_region_ids: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.empty_region_ids and not self.warnings


def _even_odd_inside(points: np.ndarray, rings: list[np.ndarray]) -> np.ndarray:
    """Even-odd point-in-polygon with the half-open lower/left boundary rule.

    A point on an edge counts as inside exactly when the edge is on the
    polygon's lower or left side, so two polygons sharing an edge never both
    claim a point on it.
    """
    px = points[:, 0]
    py = points[:, 1]
    inside = np.zeros(points.shape[0], dtype=bool)
    for ring in rings:
        for k in range(ring.shape[0] - 1):
            x1, y1 = ring[k]
            x2, y2 = ring[k + 1]
            if y1 == y2:
                continue
            straddle = (y1 > py) != (y2 > py)
            if not straddle.any():
                continue
            xint = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            inside ^= straddle & (px < xint)
    return inside


def polygon_centroid(poly: PolygonGeometry) -> np.ndarray:
    """Area centroid by the shoelace formula; falls back to the vertex mean
    for degenerate (zero-area) rings."""
    area = 0.0
    cx = 0.0
    cy = 0.0
    for ring in poly.rings:
        x = ring[:-1, 0]
        y = ring[:-1, 1]
        xn = ring[1:, 0]
        yn = ring[1:, 1]
        cross = x * yn - xn * y
        area += cross.sum() / 2.0
        cx += ((x + xn) * cross).sum() / 6.0
        cy += ((y + yn) * cross).sum() / 6.0
    if area == 0.0:
        verts = np.vstack([r[:-1] for r in poly.rings])
        return verts.mean(axis=0)
    return np.array([cx / area, cy / area])


def rasterize(poly: PolygonGeometry, grid: GridSpec, snap_to_nearest: bool = False) -> Region:
    """Collect the grid points inside a polygon into a Region.

    Membership uses the even-odd rule with a half-open boundary convention,
    so rasterizing a disjoint set of polygons yields disjoint cell sets.

    Raises EmptyRegion when no grid point falls inside, unless
    ``snap_to_nearest`` is set, in which case the single cell closest to the
    polygon centroid is returned instead.
    """
    centers = grid.cell_centers()
    lo = np.min([r.min(axis=0) for r in poly.rings], axis=0)
    hi = np.max([r.max(axis=0) for r in poly.rings], axis=0)
    candidates = np.nonzero(
        (centers[:, 0] >= lo[0]) & (centers[:, 0] <= hi[0])
        & (centers[:, 1] >= lo[1]) & (centers[:, 1] <= hi[1])
    )[0]
    if candidates.size:
        mask = _even_odd_inside(centers[candidates], poly.rings)
        cells = candidates[mask]
    else:
        cells = np.empty(0, dtype=np.int64)
    if cells.size == 0:
        if not snap_to_nearest:
            raise EmptyRegion(
                f"no grid point falls inside polygon {poly.region_id!r}; "
                "use a finer grid or snap_to_nearest=True"
            )
        cells = np.array([grid.nearest_cell(polygon_centroid(poly))], dtype=np.int64)
    return Region(poly.region_id, cells)


def aggregation_weights(region: Region, scheme: AggregationScheme, grid: GridSpec) -> np.ndarray:
    """Discrete aggregation weights over the region's cells.

    average          -> 1/|cells| each (region mean of the field)
    sum              -> cell_area each (Riemann sum of the field integral)
    weighted-average -> cell_weights normalized to sum 1
    """
    k = region.n_cells
    if scheme == AggregationScheme.AVERAGE:
        return np.full(k, 1.0 / k)
    if scheme == AggregationScheme.SUM:
        return np.full(k, grid.cell_area)
    if scheme == AggregationScheme.WEIGHTED_AVERAGE:
        if region.cell_weights is None:
            raise MissingWeights(
                f"region {region.region_id!r}: weighted-average needs cell_weights"
            )
        return region.cell_weights / region.cell_weights.sum()
    raise ValueError(f"unknown aggregation scheme {scheme!r}")


def validate_partition(partition: Partition, grid: GridSpec) -> PartitionDiagnostics:
    """Check disjointness (error) and report coverage / empty regions (warnings).

    Partitions need not cover the grid; incomplete coverage is only reported.
    """
    seen: dict[int, str] = {}
    covered = 0
    empty_ids = []
    warnings = []
    for region in partition.regions:
        if region.cells.size == 0:
            empty_ids.append(region.region_id)
            continue
        for c in region.cells.tolist():
            if c in seen:
                raise OverlappingRegions(seen[c], region.region_id)
            seen[c] = region.region_id
        in_range = (region.cells >= 0) & (region.cells < grid.n_cells)
        covered += int(in_range.sum())
        if not in_range.all():
            warnings.append(
                f"region {region.region_id!r} has {int((~in_range).sum())} cells outside the grid"
            )
    coverage = covered / grid.n_cells
    if coverage < 1.0:
        warnings.append(f"partition {partition.partition_id!r} covers "
                        f"{coverage:.4g} of the grid")
    if empty_ids:
        warnings.append(f"empty regions: {', '.join(empty_ids)}")
    return PartitionDiagnostics(coverage=coverage, empty_region_ids=empty_ids, warnings=warnings)


def region_centroid(region: Region, grid: GridSpec) -> np.ndarray:
    """Arithmetic mean of the member cell centers."""
    return grid.cell_centers()[region.cells].mean(axis=0)


# ---------------------------------------------------------------------------
# CSV interchange formats
# ---------------------------------------------------------------------------

MEMBERSHIP_HEADER = ["dataset_id", "region_id", "cell_id"]
POLYGON_HEADER = ["region_id", "ring_index", "vertex_index", "x", "y"]


def read_membership(path) -> dict[str, Partition]:
    """Read region-membership rows ``dataset_id,region_id,cell_id``.

    Returns one Partition per dataset; region order and cell order follow
    first appearance in the file.
    """
    per_dataset: dict[str, dict[str, list[int]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MEMBERSHIP_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MEMBERSHIP_HEADER)}")
        for row in reader:
            if not row:
                continue
            dataset_id, region_id, cell_id = row
            per_dataset.setdefault(dataset_id, {}).setdefault(region_id, []).append(int(cell_id))
    return {
        ds: Partition(ds, [Region(rid, np.array(cells)) for rid, cells in regions.items()])
        for ds, regions in per_dataset.items()
    }


def write_membership(path, partitions: dict[str, Partition]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MEMBERSHIP_HEADER)
        for dataset_id, partition in partitions.items():
            for region in partition.regions:
                for c in region.cells.tolist():
                    writer.writerow([dataset_id, region.region_id, c])


def read_polygons(path) -> dict[str, PolygonGeometry]:
    """Read polygon rows ``region_id,ring_index,vertex_index,x,y``."""
    shapes: dict[str, dict[int, list[tuple[int, float, float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != POLYGON_HEADER:
            raise ValueError(f"{path}: expected header {','.join(POLYGON_HEADER)}")
        for row in reader:
            if not row:
                continue
            region_id, ring_index, vertex_index, x, y = row
            shapes.setdefault(region_id, {}).setdefault(int(ring_index), []).append(
                (int(vertex_index), float(x), float(y))
            )
    out = {}
    for region_id, rings in shapes.items():
        ordered = []
        for ring_index in sorted(rings):
            verts = sorted(rings[ring_index])
            ordered.append(np.array([[x, y] for _, x, y in verts]))
        out[region_id] = PolygonGeometry(region_id, ordered)
    return out


def write_polygons(path, polys: dict[str, PolygonGeometry]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POLYGON_HEADER)
        for region_id, poly in polys.items():
            for ring_index, ring in enumerate(poly.rings):
                for vertex_index, (x, y) in enumerate(ring[:-1]):
                    writer.writerow([region_id, ring_index, vertex_index,
                                     repr(float(x)), repr(float(y))])
