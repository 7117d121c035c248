"""Synthetic ground truth: exact draws from the generative model.

Latent fields are sampled exactly on the grid through Cholesky factors of
their covariance, mixed by W, given per-point white noise, aggregated over
recipe-built partitions, and observed with additive noise.  Everything is
deterministic given the spec's seed, which is what makes the generator usable
as an oracle in tests and benchmarks.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .aggregation import cholesky_with_jitter
from .data import DomainData
from .errors import GridTooLarge
from .geometry import AggregationScheme, GridSpec, Partition, Region, aggregation_weights
from .kernel import HyperParams, make_hyperparams

_EXACT_SAMPLING_MAX_CELLS = 5000


# ---------------------------------------------------------------------------
# Partition recipes
# ---------------------------------------------------------------------------

def block_partition(grid: GridSpec, bx: int, by: int, prefix: str = "blk") -> Partition:
    """Split the grid into bx * by rectangular blocks covering every cell."""
    col_edges = np.linspace(0, grid.nx, bx + 1).astype(int)
    row_edges = np.linspace(0, grid.ny, by + 1).astype(int)
    regions = []
    for j in range(by):
        for i in range(bx):
            cols = np.arange(col_edges[i], col_edges[i + 1])
            rows = np.arange(row_edges[j], row_edges[j + 1])
            cells = (rows[:, None] * grid.nx + cols[None, :]).ravel()
            regions.append(Region(f"{prefix}{j * bx + i}", np.sort(cells)))
    return Partition(f"{prefix}_{bx}x{by}", regions)


def voronoi_partition(grid: GridSpec, k: int, rng: np.random.Generator,
                      prefix: str = "vor") -> Partition:
    """Assign every cell to its nearest of k seed cells (ties to the lowest
    seed index); every region is nonempty because a seed owns its own cell."""
    if k > grid.n_cells:
        raise ValueError(f"cannot place {k} seeds on {grid.n_cells} cells")
    seeds = rng.choice(grid.n_cells, size=k, replace=False)
    centers = grid.cell_centers()
    d2 = ((centers[:, None, :] - centers[seeds][None, :, :]) ** 2).sum(-1)
    owner = np.argmin(d2, axis=1)
    regions = [Region(f"{prefix}{i}", np.nonzero(owner == i)[0]) for i in range(k)]
    return Partition(f"{prefix}_{k}", regions)


def strip_partition(grid: GridSpec, n: int, thickness: int | None = None,
                    prefix: str = "strip") -> Partition:
    """n horizontal strips of the given row thickness, evenly spaced.

    With the default thickness the strips stay thin enough that their
    bounding-box aspect ratio is at least 8; they need not cover the grid.
    """
    spacing = grid.ny // n
    if spacing < 1:
        raise ValueError(f"cannot fit {n} strips in {grid.ny} rows")
    if thickness is None:
        thickness = max(1, min(spacing, grid.nx // 8))
    if thickness > spacing:
        raise ValueError(f"thickness {thickness} exceeds strip spacing {spacing}")
    regions = []
    cols = np.arange(grid.nx)
    for i in range(n):
        rows = np.arange(i * spacing, i * spacing + thickness)
        cells = (rows[:, None] * grid.nx + cols[None, :]).ravel()
        regions.append(Region(f"{prefix}{i}", np.sort(cells)))
    return Partition(f"{prefix}_{n}x{thickness}", regions)


def make_partition(grid: GridSpec, recipe: str, rng: np.random.Generator,
                   prefix: str) -> Partition:
    """Build a partition from a recipe string.

    Formats: ``blocks:BXxBY``, ``voronoi:K``, ``strips:N`` or ``strips:NxT``.
    """
    kind, _, arg = recipe.partition(":")
    if kind == "blocks":
        bx, _, by = arg.partition("x")
        return block_partition(grid, int(bx), int(by), prefix=prefix)
    if kind == "voronoi":
        return voronoi_partition(grid, int(arg), rng, prefix=prefix)
    if kind == "strips":
        n, _, t = arg.partition("x")
        return strip_partition(grid, int(n), int(t) if t else None, prefix=prefix)
    raise ValueError(f"unknown partition recipe {recipe!r}")


# ---------------------------------------------------------------------------
# Exact field sampling
# ---------------------------------------------------------------------------

class FieldSampler:
    """Draws of the mixed multi-output field on the grid points.

    Factorizes each latent covariance once; each draw costs one matrix-vector
    product per latent.
    """

    def __init__(self, grid: GridSpec, params: HyperParams):
        if grid.n_cells > _EXACT_SAMPLING_MAX_CELLS:
            raise GridTooLarge(
                f"{grid.n_cells} grid points exceed the exact-sampling bound "
                f"of {_EXACT_SAMPLING_MAX_CELLS}"
            )
        self.grid = grid
        self.params = params
        centers = grid.cell_centers()
        d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        self._latent_chol = []
        for k in params.kernels:
            cov = np.exp(-d2 / (2.0 * k.beta * k.beta))
            chol, _ = cholesky_with_jitter(cov, rel_start=1e-12)
            self._latent_chol.append(chol)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """One field draw, shape (S, n_cells); includes the white-noise part."""
        n = self.grid.n_cells
        W = self.params.weights.W
        g = np.empty((self.params.n_latents, n))
        for l, chol in enumerate(self._latent_chol):
            g[l] = chol @ rng.standard_normal(n)
        f = W @ g
        lam = self.params.noise.lam
        for s in range(W.shape[0]):
            if lam[s] > 0:
                f[s] += lam[s] * rng.standard_normal(n)
        return f


def aggregate_field(field: np.ndarray, partition: Partition,
                    scheme: AggregationScheme, grid: GridSpec) -> np.ndarray:
    """Noiseless areal values of a single-output field over a partition."""
    scheme = AggregationScheme(scheme)
    return np.array([
        aggregation_weights(r, scheme, grid) @ field[r.cells]
        for r in partition.regions
    ])


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SynthSpec:
    """Recipe for a synthetic scenario.

    One dataset per entry of ``recipes``; ``domain2_recipes`` (transfer
    scenarios only) declares the sparse second domain.  ``share_mixing``
    controls whether domain 2 reuses domain 1's mixing rows or draws fresh
    ones; latent kernels are always shared.
    """

    grid: GridSpec
    params: HyperParams
    recipes: tuple[str, ...]
    seed: int
    schemes: tuple[AggregationScheme, ...] | None = None
    value_offset: float = 0.0
    n_domains: int = 1
    domain2_recipes: tuple[str, ...] = ()
    share_mixing: bool = False

    @property
    def n_datasets(self) -> int:
        return len(self.recipes)

    @property
    def n_latents(self) -> int:
        return self.params.n_latents

    def scheme_list(self, n: int) -> list[AggregationScheme]:
        if self.schemes is None:
            return [AggregationScheme.AVERAGE] * n
        return [AggregationScheme(s) for s in self.schemes[:n]]


@dataclass(frozen=True, eq=False)
class SynthDomain:
    """One generated domain: training data plus retained ground truth."""

    domain_data: DomainData
    fields: np.ndarray                      # (S, n_cells) true mixed field
    raw_observations: tuple[np.ndarray, ...]
    pre_noise_observations: tuple[np.ndarray, ...]
    params: HyperParams                     # generating params for this domain


@dataclass(frozen=True, eq=False)
class SynthData:
    spec: SynthSpec
    domains: tuple[SynthDomain, ...]


def _generate_domain(spec: SynthSpec, domain_id: str, params: HyperParams,
                     recipes: tuple[str, ...], dataset_ids: list[str],
                     rng: np.random.Generator) -> SynthDomain:
    if params.n_datasets != len(recipes):
        raise ValueError(
            f"{params.n_datasets} parameter rows for {len(recipes)} recipes"
        )
    sampler = FieldSampler(spec.grid, params)
    fields = sampler.draw(rng)
    schemes = spec.scheme_list(len(recipes))
    datasets = []
    raw_all = []
    pre_all = []
    for s, (recipe, ds_id) in enumerate(zip(recipes, dataset_ids)):
        partition = make_partition(spec.grid, recipe, rng, prefix=f"{ds_id}_r")
        pre = aggregate_field(fields[s], partition, schemes[s], spec.grid)
        sigma = math.sqrt(params.noise.sigma2[s])
        raw = pre + sigma * rng.standard_normal(pre.size) + spec.value_offset
        datasets.append((ds_id, partition, schemes[s], raw))
        raw_all.append(raw)
        pre_all.append(pre)
    return SynthDomain(
        domain_data=DomainData.from_raw(domain_id, spec.grid, datasets),
        fields=fields,
        raw_observations=tuple(raw_all),
        pre_noise_observations=tuple(pre_all),
        params=params,
    )


def sample_ground_truth(spec: SynthSpec) -> SynthData:
    """Generate every domain of the spec; deterministic given spec.seed."""
    rng = np.random.default_rng(spec.seed)
    if spec.n_domains == 1:
        ids = [f"s{i}" for i in range(spec.n_datasets)]
        dom = _generate_domain(spec, "domain1", spec.params, spec.recipes, ids, rng)
        return SynthData(spec=spec, domains=(dom,))
    if spec.n_domains == 2:
        return make_transfer_scenario(spec)
    raise ValueError(f"n_domains={spec.n_domains} not supported")


def _subset_params(params: HyperParams, rows: int,
                   fresh_W: np.ndarray | None) -> HyperParams:
    W = params.weights.W[:rows] if fresh_W is None else fresh_W
    return make_hyperparams(
        W,
        params.betas,
        params.noise.lam[:rows],
        params.noise.sigma2[:rows],
    )


def make_transfer_scenario(spec: SynthSpec) -> SynthData:
    """Two domains drawn from shared latent kernels; domain 2 is sparse.

    Domain 2 holds at most 3 datasets (per ``domain2_recipes``).  With
    ``share_mixing`` the second domain reuses domain 1's leading mixing rows
    and dataset ids, so a joint fit shares W as well; otherwise it gets fresh
    mixing rows and its own dataset ids, sharing only the latent kernels.
    """
    if spec.n_domains != 2:
        raise ValueError("make_transfer_scenario needs n_domains=2")
    if not spec.domain2_recipes or len(spec.domain2_recipes) > 3:
        raise ValueError("domain2_recipes must hold 1..3 recipes")
    rng = np.random.default_rng(spec.seed)
    k = len(spec.domain2_recipes)
    ids1 = [f"d1s{i}" for i in range(spec.n_datasets)]
    if spec.share_mixing:
        ids2 = ids1[:k]
        params2 = _subset_params(spec.params, k, fresh_W=None)
    else:
        ids2 = [f"d2s{i}" for i in range(k)]
        fresh = rng.standard_normal((k, spec.n_latents)) / math.sqrt(spec.n_latents)
        scale = float(np.abs(spec.params.weights.W).mean()) * math.sqrt(spec.n_latents)
        params2 = _subset_params(spec.params, k, fresh_W=fresh * scale)
    dom1 = _generate_domain(spec, "domain1", spec.params, spec.recipes, ids1, rng)
    dom2 = _generate_domain(spec, "domain2", params2, spec.domain2_recipes, ids2, rng)
    return SynthData(spec=spec, domains=(dom1, dom2))
