"""Model fitting and prediction for region-aggregated multi-output GPs.

The marginal likelihood of all areal observations is a zero-mean Gaussian
whose covariance is assembled from region-pair double sums of the mixed
kernel; multiple domains multiply (log-likelihoods add) while sharing the
hyperparameters addressed by their dataset ids.  Hyperparameters are learned
by maximizing the log marginal likelihood with L-BFGS-B using analytic
gradients; mixing weights are optimized raw, length scales and noise levels
in log space.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.spatial.distance

from .aggregation import (
    _pair_hist,
    cholesky_with_jitter,
    distinct_squared_distances,
    weighted_cell_overlap,
)
from .data import DatasetData, DomainData, denormalize, denormalize_variance
from .errors import NotPositiveDefinite, OptimizerDiverged, UnknownDataset, UnknownDomain
from .geometry import AggregationScheme, Partition, aggregation_weights, region_centroid
from .kernel import HyperParams, gamma_table, load_hyperparams, make_hyperparams, save_hyperparams

_LOG_2PI = math.log(2.0 * math.pi)

# Optimizer floors: keep noise away from the degenerate zero limit where the
# zero-residual likelihood is unbounded.
_SIGMA_FLOOR = 1e-4
_LAM_FLOOR = 1e-6


def _as_domain_list(domains) -> list[DomainData]:
    if isinstance(domains, DomainData):
        return [domains]
    return list(domains)


def dataset_slots(domains) -> list[str]:
    """Global ordered dataset ids; a row of W exists for each.

    Datasets sharing an id across domains share their mixing-weight row and
    noise entries; distinct ids get independent rows.
    """
    slots: list[str] = []
    for domain in _as_domain_list(domains):
        for d in domain.datasets:
            if d.dataset_id not in slots:
                slots.append(d.dataset_id)
    return slots


# ---------------------------------------------------------------------------
# Parameter vector packing (unconstrained optimizer space)
# ---------------------------------------------------------------------------

def pack_hyperparams(params: HyperParams) -> np.ndarray:
    """Flatten to [W.ravel(), log beta, log lam, log sigma]; positives required
    for the log-space entries."""
    lam = params.noise.lam
    sigma2 = params.noise.sigma2
    if np.any(lam <= 0) or np.any(sigma2 <= 0):
        raise ValueError("pack_hyperparams needs strictly positive lam and sigma2")
    return np.concatenate([
        params.weights.W.ravel(),
        np.log(params.betas),
        np.log(lam),
        0.5 * np.log(sigma2),
    ])


def unpack_hyperparams(theta: np.ndarray, S: int, L: int) -> HyperParams:
    theta = np.asarray(theta, dtype=np.float64)
    W = theta[: S * L].reshape(S, L)
    betas = np.exp(theta[S * L: S * L + L])
    lam = np.exp(theta[S * L + L: S * L + L + S])
    sigma = np.exp(theta[S * L + L + S:])
    return make_hyperparams(W, betas, lam, sigma * sigma)


# ---------------------------------------------------------------------------
# Cached per-domain geometry
# ---------------------------------------------------------------------------

class _DomainPrep:
    """Distance histograms and index maps of one domain, reused across
    likelihood evaluations (they depend on geometry only)."""

    def __init__(self, domain: DomainData, slots: list[str], n_slots: int):
        self.domain = domain
        self.grid = domain.grid
        self.d2, self.lookup = distinct_squared_distances(domain.grid)
        self.y = domain.stacked_y()
        self.n_obs = self.y.size

        cells = []
        weights = []
        slot_of_region = []
        labels = []
        for d in domain.datasets:
            slot = slots.index(d.dataset_id)
            if d.partition.regions:
                domain.grid.check_cells(
                    np.concatenate([r.cells for r in d.partition.regions]),
                    f"dataset {d.dataset_id!r}",
                )
            for region, w in zip(d.partition.regions, d.weights):
                cells.append(region.cells)
                weights.append(w)
                slot_of_region.append(slot)
                labels.append((d.dataset_id, region.region_id))
        self.cells = cells
        self.weights = weights
        self.slot_of_region = np.array(slot_of_region, dtype=np.int64)
        self.labels = labels
        nr = len(cells)
        self.n_regions = nr
        self.lam_overlap = np.array([w @ w for w in weights])
        self.slot_matrix = np.zeros((nr, n_slots))
        if nr:
            self.slot_matrix[np.arange(nr), self.slot_of_region] = 1.0

        self.pair_i, self.pair_j = np.triu_indices(nr)
        nx = domain.grid.nx
        n_d2 = self.d2.size
        hist = np.empty((self.pair_i.size, n_d2))
        for p, (i, j) in enumerate(zip(self.pair_i, self.pair_j)):
            hist[p] = _pair_hist(self.lookup, nx, n_d2,
                                 cells[i], weights[i], cells[j], weights[j])
        self.hist = hist

    def _pair_values_to_matrix(self, vals: np.ndarray) -> np.ndarray:
        out = np.zeros((vals.shape[0], self.n_regions, self.n_regions))
        out[:, self.pair_i, self.pair_j] = vals
        out[:, self.pair_j, self.pair_i] = vals
        return out

    def cov(self, params: HyperParams, with_tables: bool = False):
        """Assemble C; optionally also return per-latent region-pair tables
        and the kernel table (needed for gradients)."""
        gam = gamma_table(params, self.d2)
        pair_gam = self.hist @ gam
        R = params.weights.W[self.slot_of_region]
        nr = self.n_regions
        C = np.zeros((nr, nr))
        vals = np.einsum("pl,pl->p", pair_gam, R[self.pair_i] * R[self.pair_j])
        C[self.pair_i, self.pair_j] = vals
        C[self.pair_j, self.pair_i] = vals
        diag = (params.noise.lam[self.slot_of_region] ** 2 * self.lam_overlap
                + params.noise.sigma2[self.slot_of_region])
        C[np.arange(nr), np.arange(nr)] += diag
        if not with_tables:
            return C
        return C, self._pair_values_to_matrix(pair_gam.T), gam


def _build_preps(domains: list[DomainData], slots: list[str]) -> list[_DomainPrep]:
    return [_DomainPrep(d, slots, len(slots)) for d in domains]


# ---------------------------------------------------------------------------
# Marginal likelihood and gradient
# ---------------------------------------------------------------------------

def _domain_loglik(prep: _DomainPrep, params: HyperParams, jitter: float):
    C = prep.cov(params)
    chol, _ = cholesky_with_jitter(C, base=jitter)
    alpha = scipy.linalg.cho_solve((chol, True), prep.y)
    ll = (-0.5 * float(prep.y @ alpha)
          - float(np.log(np.diag(chol)).sum())
          - 0.5 * prep.n_obs * _LOG_2PI)
    return ll, chol, alpha


def log_marginal_likelihood(params: HyperParams, domains, jitter: float = 0.0) -> float:
    """Sum over domains of the Gaussian log density of their observations."""
    domains = _as_domain_list(domains)
    slots = dataset_slots(domains)
    if params.n_datasets != len(slots):
        raise ValueError(
            f"params cover {params.n_datasets} datasets but domains declare {len(slots)}"
        )
    total = 0.0
    for prep in _build_preps(domains, slots):
        if prep.n_obs == 0:
            continue
        ll, _, _ = _domain_loglik(prep, params, jitter)
        total += ll
    return total


def _accumulate_gradient(prep: _DomainPrep, params: HyperParams, jitter: float,
                         grad_W: np.ndarray, grad_logbeta: np.ndarray,
                         grad_loglam: np.ndarray, grad_logsigma: np.ndarray) -> float:
    """Add one domain's log-likelihood gradient into the output arrays;
    returns the domain's log-likelihood."""
    C, T, gam = prep.cov(params, with_tables=True)
    chol, _ = cholesky_with_jitter(C, base=jitter)
    alpha = scipy.linalg.cho_solve((chol, True), prep.y)
    ll = (-0.5 * float(prep.y @ alpha)
          - float(np.log(np.diag(chol)).sum())
          - 0.5 * prep.n_obs * _LOG_2PI)

    C_inv = scipy.linalg.cho_solve((chol, True), np.eye(prep.n_obs))
    M = np.outer(alpha, alpha) - C_inv

    W = params.weights.W
    betas = params.betas
    B = prep.slot_matrix
    dgam = gam * (prep.d2[:, None] / (betas * betas)[None, :])
    T2 = prep._pair_values_to_matrix((prep.hist @ dgam).T)
    for l in range(params.n_latents):
        G = B.T @ (M * T[l]) @ B
        grad_W[:, l] += G @ W[:, l]
        G2 = B.T @ (M * T2[l]) @ B
        grad_logbeta[l] += 0.5 * float(W[:, l] @ G2 @ W[:, l])

    n_slots = B.shape[1]
    m_diag = np.diag(M)
    grad_loglam += params.noise.lam ** 2 * np.bincount(
        prep.slot_of_region, weights=m_diag * prep.lam_overlap, minlength=n_slots)
    grad_logsigma += params.noise.sigma2 * np.bincount(
        prep.slot_of_region, weights=m_diag, minlength=n_slots)
    return ll


def _value_and_gradient(params: HyperParams, preps: list[_DomainPrep],
                        jitter: float) -> tuple[float, np.ndarray]:
    S, L = params.n_datasets, params.n_latents
    grad_W = np.zeros((S, L))
    grad_logbeta = np.zeros(L)
    grad_loglam = np.zeros(S)
    grad_logsigma = np.zeros(S)
    total = 0.0
    for prep in preps:
        if prep.n_obs == 0:
            continue
        total += _accumulate_gradient(prep, params, jitter,
                                      grad_W, grad_logbeta, grad_loglam, grad_logsigma)
    grad = np.concatenate([grad_W.ravel(), grad_logbeta, grad_loglam, grad_logsigma])
    return total, grad


def gradient(params: HyperParams, domains, jitter: float = 0.0) -> np.ndarray:
    """Gradient of the log marginal likelihood in the packed parameter order
    [W entries, log beta, log lam, log sigma].

    The log-space entries are derivatives with respect to the logs; they are
    well defined (zero) even when the underlying value is exactly zero.
    """
    domains = _as_domain_list(domains)
    slots = dataset_slots(domains)
    if params.n_datasets != len(slots):
        raise ValueError(
            f"params cover {params.n_datasets} datasets but domains declare {len(slots)}"
        )
    _, grad = _value_and_gradient(params, _build_preps(domains, slots), jitter)
    return grad


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    """Latent count and optimizer settings for fit()."""

    n_latents: int
    jitter: float = 0.0
    max_iter: int = 200
    grad_tol: float = 1e-8
    restarts: int = 5
    seed: int = 0
    init: str = "default"     # "default" | "zero-mixing"


@dataclass
class FitDiagnostics:
    log_likelihood: float
    n_iter: int
    converged: bool
    message: str
    restart_log_likelihoods: list[float] = field(default_factory=list)


def _median_centroid_distance(domains: list[DomainData]) -> float:
    per_domain = []
    for domain in domains:
        pts = [region_centroid(r, domain.grid)
               for d in domain.datasets for r in d.partition.regions]
        if len(pts) >= 2:
            dist = scipy.spatial.distance.pdist(np.array(pts))
            med = float(np.median(dist))
            if med > 0:
                per_domain.append(med)
    if per_domain:
        return float(np.median(per_domain))
    diag = max(
        math.hypot(d.grid.nx * d.grid.cell_size, d.grid.ny * d.grid.cell_size)
        for d in domains
    )
    return 0.25 * diag


def _initial_betas(base: float, L: int) -> np.ndarray:
    exponents = np.arange(L) - (L - 1) / 2.0
    return base * np.power(2.0, exponents)


def fit(domains, config: ModelConfig) -> "FittedModel":
    """Maximize the log marginal likelihood over restarts; keep the best.

    Deterministic given config.seed.  Raises OptimizerDiverged when every
    restart fails to produce a finite objective.
    """
    domains = _as_domain_list(domains)
    if not domains or all(len(d.datasets) == 0 for d in domains):
        raise ValueError("fit needs at least one dataset with observations")
    slots = dataset_slots(domains)
    S = len(slots)
    L = config.n_latents
    if L < 1:
        raise ValueError("n_latents must be >= 1")
    if L > S:
        warnings.warn(f"n_latents={L} exceeds the {S} datasets; the mixing is over-parameterized")

    preps = _build_preps(domains, slots)
    beta_base = _median_centroid_distance(domains)
    cell_min = min(d.grid.cell_size for d in domains)
    diag_max = max(
        math.hypot(d.grid.nx * d.grid.cell_size, d.grid.ny * d.grid.cell_size)
        for d in domains
    )
    beta_lo = math.log(1e-2 * cell_min)
    beta_hi = math.log(1e2 * diag_max)
    bounds = ([(None, None)] * (S * L)
              + [(beta_lo, beta_hi)] * L
              + [(math.log(_LAM_FLOOR), None)] * S
              + [(math.log(_SIGMA_FLOOR), None)] * S)

    rng = np.random.default_rng(config.seed)

    def objective(theta):
        params = unpack_hyperparams(theta, S, L)
        try:
            ll, grad = _value_and_gradient(params, preps, config.jitter)
        except (scipy.linalg.LinAlgError, NotPositiveDefinite):
            return np.inf, np.zeros_like(theta)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(theta)
        return -ll, -grad

    best = None
    restart_lls: list[float] = []
    for r in range(max(1, config.restarts)):
        if config.init == "zero-mixing" and r == 0:
            W0 = np.zeros((S, L))
        else:
            W0 = rng.standard_normal((S, L)) / math.sqrt(L)
        betas0 = _initial_betas(beta_base, L)
        if r > 0:
            betas0 = betas0 * np.exp(0.3 * rng.standard_normal(L))
        betas0 = np.clip(betas0, math.exp(beta_lo), math.exp(beta_hi))
        x0 = np.concatenate([
            W0.ravel(),
            np.log(betas0),
            np.full(S, math.log(0.1)),
            np.full(S, math.log(0.1)),
        ])
        res = scipy.optimize.minimize(
            objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": config.max_iter, "gtol": config.grad_tol},
        )
        ll_final = -float(res.fun)
        restart_lls.append(ll_final)
        if np.isfinite(ll_final) and (best is None or ll_final > best[0]):
            best = (ll_final, res.x.copy(), int(res.nit), bool(res.success),
                    str(res.message))

    if best is None:
        raise OptimizerDiverged("all restarts produced a non-finite log likelihood")

    ll_best, theta_best, nit, converged, message = best
    params = unpack_hyperparams(theta_best, S, L)
    diagnostics = FitDiagnostics(
        log_likelihood=ll_best,
        n_iter=nit,
        converged=converged,
        message=message,
        restart_log_likelihoods=restart_lls,
    )
    return FittedModel._build(params, domains, slots, preps, config.jitter,
                              diagnostics, config)


# ---------------------------------------------------------------------------
# Fitted model and prediction
# ---------------------------------------------------------------------------

class FittedModel:
    """Hyperparameters plus per-domain factorizations ready for prediction."""

    def __init__(self, params: HyperParams, domains: list[DomainData], slots: list[str],
                 preps: list[_DomainPrep], factors, jitter: float,
                 diagnostics: FitDiagnostics | None, config: ModelConfig | None):
        self.params = params
        self.domains = domains
        self.slots = slots
        self.jitter = jitter
        self.diagnostics = diagnostics
        self.config = config
        self._preps = preps
        self._factors = factors  # per domain: (chol, alpha, jitter_used)
        self._index = {d.domain_id: i for i, d in enumerate(domains)}

    @classmethod
    def _build(cls, params, domains, slots, preps, jitter, diagnostics, config):
        factors = []
        for prep in preps:
            if prep.n_obs == 0:
                factors.append((np.empty((0, 0)), np.empty(0), 0.0))
                continue
            C = prep.cov(params)
            chol, used = cholesky_with_jitter(C, base=jitter)
            alpha = scipy.linalg.cho_solve((chol, True), prep.y)
            factors.append((chol, alpha, used))
        return cls(params, domains, slots, preps, factors, jitter, diagnostics, config)

    @classmethod
    def from_params(cls, params: HyperParams, domains, jitter: float = 0.0,
                    config: ModelConfig | None = None) -> "FittedModel":
        """Build the prediction machinery at fixed hyperparameters (no fit)."""
        domains = _as_domain_list(domains)
        slots = dataset_slots(domains)
        if params.n_datasets != len(slots):
            raise ValueError(
                f"params cover {params.n_datasets} datasets but domains declare {len(slots)}"
            )
        preps = _build_preps(domains, slots)
        return cls._build(params, domains, slots, preps, jitter, None, config)

    def _domain_index(self, domain_id: str) -> int:
        if domain_id not in self._index:
            raise UnknownDomain(f"domain {domain_id!r} not in model")
        return self._index[domain_id]

    def slot_of(self, dataset_id: str) -> int:
        if dataset_id not in self.slots:
            raise UnknownDataset(f"dataset {dataset_id!r} not in model")
        return self.slots.index(dataset_id)

    @property
    def n_slots(self) -> int:
        return len(self.slots)


def _point_cov_matrix(prep: _DomainPrep, params: HyperParams, x: int) -> np.ndarray:
    """H(x): covariance of every observation with every output at grid point x,
    shape (n_obs, n_slots).  Observation noise is excluded."""
    W = params.weights.W
    gam = gamma_table(params, prep.d2)
    nx = prep.grid.nx
    xr, xc = x // nx, x % nx
    H = np.empty((prep.n_regions, W.shape[0]))
    for r in range(prep.n_regions):
        cells = prep.cells[r]
        w = prep.weights[r]
        idx = prep.lookup[np.abs(cells % nx - xc), np.abs(cells // nx - xr)]
        wg = w @ gam[idx]                       # (L,)
        slot = prep.slot_of_region[r]
        H[r] = W @ (wg * W[slot])
        hit = np.nonzero(cells == x)[0]
        if hit.size:
            H[r, slot] += params.noise.lam[slot] ** 2 * w[hit[0]]
    return H


@dataclass(frozen=True, eq=False)
class PosteriorGP:
    """Posterior process of one domain: evaluate mean and covariance anywhere
    on the grid.  Components are ordered by the model's dataset slots."""

    model: FittedModel
    domain_id: str

    def _pieces(self):
        i = self.model._domain_index(self.domain_id)
        return self.model._preps[i], self.model._factors[i]

    def mean(self, x: int) -> np.ndarray:
        prep, (chol, alpha, _) = self._pieces()
        if prep.n_obs == 0:
            return np.zeros(self.model.n_slots)
        H = _point_cov_matrix(prep, self.model.params, x)
        return H.T @ alpha

    def cov(self, x: int, x2: int | None = None) -> np.ndarray:
        prep, (chol, alpha, _) = self._pieces()
        params = self.model.params
        W = params.weights.W
        if x2 is None:
            x2 = x
        nx = prep.grid.nx
        d2 = ((x % nx - x2 % nx) ** 2 + (x // nx - x2 // nx) ** 2) * prep.grid.cell_size ** 2
        gam = gamma_table(params, np.array([d2]))[0]
        K = (W * gam) @ W.T
        if x == x2:
            K = K + np.diag(params.noise.lam ** 2)
        if prep.n_obs == 0:
            return K
        H = _point_cov_matrix(prep, params, x)
        H2 = H if x2 == x else _point_cov_matrix(prep, params, x2)
        return K - H.T @ scipy.linalg.cho_solve((chol, True), H2)


def posterior_point(model: FittedModel, domain_id: str, x: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and covariance matrix of all outputs at grid
    point x, in normalized units."""
    post = PosteriorGP(model, domain_id)
    return post.mean(x), post.cov(x)


def predict_region(model: FittedModel, domain_id: str,
                   target: tuple[str, Partition, AggregationScheme]
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Aggregated posterior mean and variance for each target region.

    The target names the output process (dataset id), the partition to
    integrate over, and the aggregation scheme.  Values are in normalized
    units; variances are clamped at zero (warning beyond -1e-8).
    """
    dataset_id, partition, scheme = target
    scheme = AggregationScheme(scheme)
    idx = model._domain_index(domain_id)
    prep = model._preps[idx]
    chol, alpha, _ = model._factors[idx]
    params = model.params
    W = params.weights.W
    s_t = model.slot_of(dataset_id)
    grid = prep.grid
    nx = grid.nx
    n_d2 = prep.d2.size

    gam = gamma_table(params, prep.d2)
    combos = gam @ (W * W[s_t]).T               # (|D|, n_slots)
    combo_tt = combos[:, s_t]
    lam2_t = params.noise.lam[s_t] ** 2

    means = np.empty(partition.n_regions)
    variances = np.empty(partition.n_regions)
    for n, region in enumerate(partition.regions):
        grid.check_cells(region.cells, f"target region {region.region_id!r}")
        u = aggregation_weights(region, scheme, grid)
        hvec = np.empty(prep.n_regions)
        for r in range(prep.n_regions):
            slot = prep.slot_of_region[r]
            hist = _pair_hist(prep.lookup, nx, n_d2, region.cells, u,
                              prep.cells[r], prep.weights[r])
            val = hist @ combos[:, slot]
            if slot == s_t and lam2_t:
                val += lam2_t * weighted_cell_overlap(region.cells, u,
                                                      prep.cells[r], prep.weights[r])
            hvec[r] = val
        self_hist = _pair_hist(prep.lookup, nx, n_d2, region.cells, u, region.cells, u)
        prior_var = self_hist @ combo_tt + lam2_t * float(u @ u)
        if prep.n_obs:
            means[n] = hvec @ alpha
            var = prior_var - float(hvec @ scipy.linalg.cho_solve((chol, True), hvec))
        else:
            means[n] = 0.0
            var = prior_var
        if var < 0.0:
            if var < -1e-8:
                warnings.warn(
                    f"region {region.region_id!r}: clamping negative variance {var:.3e}"
                )
            var = 0.0
        variances[n] = var
    return means, variances


def posterior_grid(model: FittedModel, domain_id: str, dataset_id: str
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of one output at every grid point."""
    idx = model._domain_index(domain_id)
    prep = model._preps[idx]
    chol, alpha, _ = model._factors[idx]
    params = model.params
    W = params.weights.W
    s_t = model.slot_of(dataset_id)
    grid = prep.grid
    nx = grid.nx
    n_cells = grid.n_cells
    gam = gamma_table(params, prep.d2)
    lam2_t = params.noise.lam[s_t] ** 2
    prior = float(W[s_t] @ W[s_t]) + lam2_t

    if prep.n_obs == 0:
        return np.zeros(n_cells), np.full(n_cells, prior)

    all_cells = np.arange(n_cells)
    acol, arow = all_cells % nx, all_cells // nx
    H = np.empty((n_cells, prep.n_regions))
    for r in range(prep.n_regions):
        cells = prep.cells[r]
        w = prep.weights[r]
        slot = prep.slot_of_region[r]
        combo = gam @ (W[slot] * W[s_t])
        idx2 = prep.lookup[np.abs(acol[:, None] - (cells % nx)[None, :]),
                           np.abs(arow[:, None] - (cells // nx)[None, :])]
        H[:, r] = combo[idx2] @ w
        if slot == s_t and lam2_t:
            H[cells, r] += lam2_t * w
    means = H @ alpha
    V = scipy.linalg.cho_solve((chol, True), H.T)
    variances = prior - np.einsum("cr,rc->c", H, V)
    return means, np.maximum(variances, 0.0)


# ---------------------------------------------------------------------------
# Save / load
# ---------------------------------------------------------------------------

def save_model(model: FittedModel, directory, extra: dict | None = None):
    """Write hyperparameters and a manifest into a directory."""
    import os

    os.makedirs(directory, exist_ok=True)
    save_hyperparams(model.params, os.path.join(directory, "hyperparams.txt"))
    manifest = {
        "slots": model.slots,
        "n_latents": model.params.n_latents,
        "jitter": model.jitter,
        "domains": [
            {
                "domain_id": d.domain_id,
                "datasets": [
                    {"dataset_id": ds.dataset_id, "mean": ds.mean, "std": ds.std,
                     "n_regions": ds.n_regions, "scheme": ds.scheme.value}
                    for ds in d.datasets
                ],
            }
            for d in model.domains
        ],
    }
    if model.diagnostics is not None:
        manifest["log_likelihood"] = model.diagnostics.log_likelihood
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(directory, domains, jitter: float | None = None) -> FittedModel:
    """Rebuild a FittedModel from saved hyperparameters plus the data files.

    The caller supplies the same domains the model was fitted on (the manifest
    is checked for id agreement)."""
    import os

    domains = _as_domain_list(domains)
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    params = load_hyperparams(os.path.join(directory, "hyperparams.txt"))
    slots = dataset_slots(domains)
    if manifest["slots"] != slots:
        raise ValueError(
            f"model at {directory} was fitted on datasets {manifest['slots']}, "
            f"got {slots}"
        )
    if jitter is None:
        jitter = float(manifest.get("jitter", 0.0))
    return FittedModel.from_params(params, domains, jitter=jitter)


__all__ = [
    "DatasetData", "DomainData", "FitDiagnostics", "FittedModel", "ModelConfig",
    "PosteriorGP", "dataset_slots", "denormalize", "denormalize_variance", "fit",
    "gradient", "load_model", "log_marginal_likelihood", "pack_hyperparams",
    "posterior_grid", "posterior_point", "predict_region", "save_model",
    "unpack_hyperparams",
]
