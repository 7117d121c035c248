"""Region-level covariance assembly via the distinct-distance cache.

On a regular grid every squared distance between grid points is
``(dcol^2 + drow^2) * cell_size^2``, so the number of distinct values is at
most nx * ny.  Region-to-region covariances are double sums of the kernel
over cell pairs; grouping the pairs by distance turns each double sum into a
weighted histogram dotted with per-distance kernel values.  The histograms
depend only on geometry, the kernel values only on hyperparameters, which is
what makes repeated likelihood evaluations cheap.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import DomainData
from .errors import NotPositiveDefinite
from .geometry import GridSpec, Partition
from .kernel import HyperParams, gamma_table


@dataclass(frozen=True, eq=False)
class DistanceCache:
    """Distinct squared grid distances and kernel values cached at each one.

    ``lookup[dcol, drow]`` is the index into ``d2`` (and into the rows of
    ``gammas``) for that lattice offset; lookups are exact, no quantization.
    """

    grid: GridSpec
    d2: np.ndarray        # sorted distinct squared distances, shape (|D|,)
    lookup: np.ndarray    # (nx, ny) int32 index into d2
    gammas: np.ndarray    # (|D|, L) latent kernel values
    params: HyperParams

    @property
    def n_distances(self) -> int:
        return self.d2.size


def distinct_squared_distances(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct squared distances and the (nx, ny) offset->index table."""
    dc2 = np.arange(grid.nx, dtype=np.int64) ** 2
    dr2 = np.arange(grid.ny, dtype=np.int64) ** 2
    keys = dc2[:, None] + dr2[None, :]
    uniq, inv = np.unique(keys, return_inverse=True)
    lookup = inv.reshape(grid.nx, grid.ny).astype(np.int32)
    d2 = uniq.astype(np.float64) * (grid.cell_size * grid.cell_size)
    return d2, lookup


def build_distance_cache(grid: GridSpec, params: HyperParams) -> DistanceCache:
    """Evaluate every latent kernel at every realizable squared distance."""
    d2, lookup = distinct_squared_distances(grid)
    return DistanceCache(grid=grid, d2=d2, lookup=lookup,
                         gammas=gamma_table(params, d2), params=params)


def _pair_hist(lookup: np.ndarray, nx: int, n_d2: int,
               cells_a: np.ndarray, w_a: np.ndarray,
               cells_b: np.ndarray, w_b: np.ndarray) -> np.ndarray:
    ra, ca = cells_a // nx, cells_a % nx
    rb, cb = cells_b // nx, cells_b % nx
    idx = lookup[np.abs(ca[:, None] - cb[None, :]),
                 np.abs(ra[:, None] - rb[None, :])]
    mass = w_a[:, None] * w_b[None, :]
    return np.bincount(idx.ravel(), weights=mass.ravel(), minlength=n_d2)


def pair_distance_hist(cache: DistanceCache, cells_a: np.ndarray, w_a: np.ndarray,
                       cells_b: np.ndarray, w_b: np.ndarray) -> np.ndarray:
    """Weight-product mass at each distinct distance between two cell sets.

    Entry d of the result is sum over pairs (i in a, j in b) at squared
    distance d2[d] of w_a[i] * w_b[j]; dotting it with a per-distance kernel
    table reproduces the naive double sum exactly.
    """
    return _pair_hist(cache.lookup, cache.grid.nx, cache.d2.size,
                      cells_a, w_a, cells_b, w_b)


def weighted_cell_overlap(cells_a: np.ndarray, w_a: np.ndarray,
                          cells_b: np.ndarray, w_b: np.ndarray) -> float:
    """Sum of w_a[i] * w_b[i] over cells common to both regions."""
    _, ia, ib = np.intersect1d(cells_a, cells_b, assume_unique=True, return_indices=True)
    if ia.size == 0:
        return 0.0
    return float(w_a[ia] @ w_b[ib])


def region_cov_block(s: int, s2: int, p: Partition, p2: Partition,
                     weights: list[np.ndarray], weights2: list[np.ndarray],
                     cache: DistanceCache, params: HyperParams,
                     include_sigma: bool = True) -> np.ndarray:
    """Covariance block between the regions of two datasets.

    Entry (n, n2) is the double sum of the cross-covariance over the cell
    pairs of the two regions, computed through the distance histogram.  For
    s == s2 the white-noise term adds lam^2 times the weighted cell overlap,
    and (when ``include_sigma``) the observation-noise variance sigma^2 lands
    on the n == n2 diagonal.
    """
    W = params.weights.W
    combo = cache.gammas @ (W[s] * W[s2])
    lam2 = params.noise.lam[s] ** 2 if s == s2 else 0.0
    out = np.empty((p.n_regions, p2.n_regions))
    for n, (reg, w) in enumerate(zip(p.regions, weights)):
        cache.grid.check_cells(reg.cells, f"region {reg.region_id!r}")
        for n2, (reg2, w2) in enumerate(zip(p2.regions, weights2)):
            val = pair_distance_hist(cache, reg.cells, w, reg2.cells, w2) @ combo
            if lam2:
                val += lam2 * weighted_cell_overlap(reg.cells, w, reg2.cells, w2)
            if include_sigma and s == s2 and n == n2:
                val += params.noise.sigma2[s]
            out[n, n2] = val
    return out


@dataclass(frozen=True, eq=False)
class MarginalMoments:
    """Mean and covariance of all areal observations of one domain.

    ``labels[k]`` names observation k as (dataset_id, region_id);
    ``block_slices[s]`` is the flat index range of dataset s.
    """

    mu: np.ndarray
    C: np.ndarray
    labels: tuple[tuple[str, str], ...]
    block_slices: tuple[slice, ...]


def assemble_moments(domain: DomainData, cache: DistanceCache, params: HyperParams,
                     slots: list[int] | None = None) -> MarginalMoments:
    """Assemble mu and C blockwise over all dataset pairs of a domain.

    ``slots`` maps each dataset of the domain to its row in the mixing-weight
    matrix (defaults to dataset order).  The upper triangle is computed and
    mirrored, so C is symmetric bitwise.  With zero-mean latents mu is zero.
    """
    if slots is None:
        slots = list(range(len(domain.datasets)))
    n = domain.n_obs
    C = np.zeros((n, n))
    offsets = np.cumsum([0] + [d.n_regions for d in domain.datasets])
    labels = []
    for d in domain.datasets:
        labels.extend((d.dataset_id, r.region_id) for r in d.partition.regions)
    for i, di in enumerate(domain.datasets):
        bi = slice(offsets[i], offsets[i + 1])
        for j in range(i, len(domain.datasets)):
            dj = domain.datasets[j]
            bj = slice(offsets[j], offsets[j + 1])
            block = region_cov_block(slots[i], slots[j], di.partition, dj.partition,
                                     list(di.weights), list(dj.weights), cache, params,
                                     include_sigma=(i == j))
            C[bi, bj] = block
            if i != j:
                C[bj, bi] = block.T
    return MarginalMoments(
        mu=np.zeros(n),
        C=C,
        labels=tuple(labels),
        block_slices=tuple(slice(offsets[i], offsets[i + 1])
                           for i in range(len(domain.datasets))),
    )


def point_to_region_cov(x: int, s_target: int, domain: DomainData, cache: DistanceCache,
                        params: HyperParams, slots: list[int] | None = None) -> np.ndarray:
    """Covariance between the target output at grid point x and every observation.

    Entry (s, n) is the aggregation-weighted sum of the cross-covariance from
    the region's cells to x, plus the white-noise term when the region itself
    contains x and s is the target.  Observation noise never appears here.
    """
    if slots is None:
        slots = list(range(len(domain.datasets)))
    W = params.weights.W
    nx = cache.grid.nx
    xr, xc = x // nx, x % nx
    out = np.empty(domain.n_obs)
    pos = 0
    for i, d in enumerate(domain.datasets):
        combo = cache.gammas @ (W[slots[i]] * W[s_target])
        lam2 = params.noise.lam[slots[i]] ** 2 if slots[i] == s_target else 0.0
        for reg, w in zip(d.partition.regions, d.weights):
            rr, rc = reg.cells // nx, reg.cells % nx
            idx = cache.lookup[np.abs(rc - xc), np.abs(rr - xr)]
            val = w @ combo[idx]
            if lam2:
                hit = np.nonzero(reg.cells == x)[0]
                if hit.size:
                    val += lam2 * w[hit[0]]
            out[pos] = val
            pos += 1
    return out


def cholesky_with_jitter(C: np.ndarray, base: float = 0.0,
                         rel_start: float = 1e-8, rel_max: float = 1e-2
                         ) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of C + (base + jitter) * I, escalating jitter x10.

    The escalation ladder is relative to trace(C)/N; failure past rel_max
    raises NotPositiveDefinite.  Returns the factor and the jitter used
    (excluding ``base``).
    """
    n = C.shape[0]
    if n == 0:
        return np.empty((0, 0)), 0.0
    eye = np.eye(n)
    try:
        return scipy.linalg.cholesky(C + base * eye, lower=True), 0.0
    except scipy.linalg.LinAlgError:
        pass
    scale = float(np.trace(C)) / n
    if scale <= 0:
        scale = 1.0
    jitter = rel_start * scale
    while jitter <= rel_max * scale * (1 + 1e-12):
        try:
            return scipy.linalg.cholesky(C + (base + jitter) * eye, lower=True), jitter
        except scipy.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"covariance not factorizable even with jitter {rel_max:g} * trace/N"
    )
