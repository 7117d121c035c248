"""Refinement-task protocol: MAPE scoring, LOOCV over the latent count, and
the point-observation baselines (single-output GPR, SLFM at centroids)."""

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.spatial.distance

from .data import DomainData, denormalize
from .errors import ArealGPError, CVFailed, ZeroTruthValue
from .geometry import AggregationScheme, GridSpec, Partition, Region, region_centroid
from .model import FittedModel, ModelConfig, fit, predict_region
from .synth import aggregate_field


class RefinementTask:
    """Refine one coarse-grained dataset onto a fine partition.

    The fine ground-truth values (raw units) are withheld behind
    ``fine_truth()``; fitting and cross-validation only ever see the coarse
    observations living in the DomainData.
    """

    def __init__(self, task_id: str, domain_id: str, target_dataset: str,
                 fine_partition: Partition | None = None,
                 fine_scheme: AggregationScheme = AggregationScheme.AVERAGE,
                 fine_truth=None):
        self.task_id = task_id
        self.domain_id = domain_id
        self.target_dataset = target_dataset
        self.fine_partition = fine_partition
        self.fine_scheme = AggregationScheme(fine_scheme)
        self._fine_truth = None if fine_truth is None else np.asarray(
            fine_truth, dtype=np.float64).ravel()
        if self._fine_truth is not None and fine_partition is not None:
            if self._fine_truth.size != fine_partition.n_regions:
                raise ValueError(
                    f"{self._fine_truth.size} truth values for "
                    f"{fine_partition.n_regions} fine regions"
                )

    def fine_truth(self) -> np.ndarray:
        """Held-out evaluation values; only scoring code should call this."""
        if self._fine_truth is None:
            raise ValueError(f"task {self.task_id!r} has no fine truth attached")
        return self._fine_truth.copy()


def refinement_task_from_field(task_id: str, domain_id: str, target_dataset: str,
                               field_values: np.ndarray, fine_partition: Partition,
                               grid: GridSpec,
                               scheme: AggregationScheme = AggregationScheme.AVERAGE,
                               offset: float = 0.0) -> RefinementTask:
    """Build a task whose fine truth is the aggregated true field (plus the
    generator's value offset)."""
    truth = aggregate_field(np.asarray(field_values), fine_partition, scheme, grid) + offset
    return RefinementTask(task_id, domain_id, target_dataset,
                          fine_partition=fine_partition, fine_scheme=scheme,
                          fine_truth=truth)


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error on raw-unit values.

    Refuses exact-zero truth entries rather than imputing a denominator.
    """
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.size != y_pred.size:
        raise ValueError(f"length mismatch: {y_true.size} vs {y_pred.size}")
    if np.any(y_true == 0.0):
        raise ZeroTruthValue("y_true contains an exact zero; percentage error undefined")
    return float(np.mean(np.abs((y_true - y_pred) / y_true)))


# ---------------------------------------------------------------------------
# Leave-one-out cross-validation over the latent count
# ---------------------------------------------------------------------------

@dataclass
class CVResult:
    errors_by_L: dict[int, float]
    selected_L: int
    fold_records: list[tuple[int, str, float]] = field(default_factory=list)
    failures: list[tuple[int, str, str]] = field(default_factory=list)


def _drop_coarse_region(domains: list[DomainData], domain_id: str, dataset_id: str,
                        region_index: int) -> tuple[list[DomainData], float]:
    """Domains with one coarse observation removed, plus its raw value."""
    out = []
    held_value = None
    for domain in domains:
        if domain.domain_id != domain_id:
            out.append(domain)
            continue
        specs = []
        for d in domain.datasets:
            raw = domain.raw_observations(d.dataset_id)
            if d.dataset_id == dataset_id:
                held_value = float(raw[region_index])
                keep = [i for i in range(d.n_regions) if i != region_index]
                partition = Partition(d.partition.partition_id,
                                      [d.partition.regions[i] for i in keep])
                raw = raw[keep]
            else:
                partition = d.partition
            specs.append((d.dataset_id, partition, d.scheme, raw))
        out.append(DomainData.from_raw(domain.domain_id, domain.grid, specs))
    if held_value is None:
        raise ValueError(f"dataset {dataset_id!r} not found in domain {domain_id!r}")
    return out, held_value


def loocv_select_L(domains, task: RefinementTask, candidate_Ls, config: ModelConfig
                   ) -> CVResult:
    """Pick the latent count by leave-one-out error on the coarse target data.

    Each fold refits without one coarse target observation and predicts it
    back through region aggregation; candidates are scored by mean absolute
    percentage error, ties broken toward the smaller count.  A candidate with
    more than 20% failed folds aborts the selection.
    """
    domains = [domains] if isinstance(domains, DomainData) else list(domains)
    candidate_Ls = list(candidate_Ls)
    if not candidate_Ls:
        raise ValueError("need at least one candidate latent count")
    target_domain = next(d for d in domains if d.domain_id == task.domain_id)
    target = target_domain.dataset(task.target_dataset)
    n_folds = target.n_regions

    errors_by_L: dict[int, float] = {}
    fold_records: list[tuple[int, str, float]] = []
    failures: list[tuple[int, str, str]] = []
    for L in candidate_Ls:
        cfg = replace(config, n_latents=L)
        fold_errors = []
        for n in range(n_folds):
            region = target.partition.regions[n]
            try:
                fold_domains, held_raw = _drop_coarse_region(
                    domains, task.domain_id, task.target_dataset, n)
                if held_raw == 0.0:
                    raise ZeroTruthValue(f"held-out value for {region.region_id!r} is zero")
                model = fit(fold_domains, cfg)
                means, _ = predict_region(
                    model, task.domain_id,
                    (task.target_dataset, Partition("held", [region]), target.scheme))
                fold_domain = next(d for d in fold_domains
                                   if d.domain_id == task.domain_id)
                pred_raw = float(denormalize(fold_domain, task.target_dataset, means)[0])
                ape = abs((held_raw - pred_raw) / held_raw)
            except ArealGPError as exc:
                warnings.warn(f"CV fold L={L} region {region.region_id!r} failed: {exc}")
                failures.append((L, region.region_id, str(exc)))
                continue
            fold_errors.append(ape)
            fold_records.append((L, region.region_id, ape))
        if len(fold_errors) < 0.8 * n_folds:
            raise CVFailed(
                f"L={L}: only {len(fold_errors)} of {n_folds} folds succeeded"
            )
        errors_by_L[L] = float(np.mean(fold_errors))
    selected = min(sorted(errors_by_L), key=lambda L: (errors_by_L[L], L))
    return CVResult(errors_by_L=errors_by_L, selected_L=selected,
                    fold_records=fold_records, failures=failures)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def _gpr_nll_and_grad(theta, D2, y):
    log_a, log_b, log_n = theta
    a2 = math.exp(2 * log_a)
    b2 = math.exp(2 * log_b)
    n2 = math.exp(2 * log_n)
    E = np.exp(-D2 / (2 * b2))
    K = a2 * E + n2 * np.eye(y.size)
    try:
        chol = scipy.linalg.cholesky(K, lower=True)
    except scipy.linalg.LinAlgError:
        return np.inf, np.zeros(3)
    alpha = scipy.linalg.cho_solve((chol, True), y)
    nll = (0.5 * float(y @ alpha) + float(np.log(np.diag(chol)).sum())
           + 0.5 * y.size * math.log(2 * math.pi))
    Kinv = scipy.linalg.cho_solve((chol, True), np.eye(y.size))
    M = np.outer(alpha, alpha) - Kinv
    dK_a = 2 * a2 * E
    dK_b = a2 * E * (D2 / b2)
    grad = -0.5 * np.array([
        float((M * dK_a).sum()),
        float((M * dK_b).sum()),
        2 * n2 * float(np.trace(M)),
    ])
    return nll, grad


def _gpr_fit(X: np.ndarray, y: np.ndarray, seed: int, restarts: int):
    """Maximum-likelihood squared-exponential GPR; returns (a2, b2, n2)."""
    if X.shape[0] >= 2:
        med = float(np.median(scipy.spatial.distance.pdist(X)))
    else:
        med = 1.0
    if med <= 0:
        med = 1.0
    sd = float(y.std()) or 1.0
    rng = np.random.default_rng(seed)
    bounds = [(None, None), (math.log(med) - 6, math.log(med) + 6),
              (math.log(1e-4), None)]
    D2 = scipy.spatial.distance.squareform(
        scipy.spatial.distance.pdist(X, "sqeuclidean")) if X.shape[0] > 1 else np.zeros((1, 1))
    best = None
    for r in range(max(1, restarts)):
        x0 = np.array([math.log(sd), math.log(med), math.log(0.1 * sd)])
        if r > 0:
            x0 = x0 + 0.5 * rng.standard_normal(3)
        res = scipy.optimize.minimize(_gpr_nll_and_grad, x0, args=(D2, y), jac=True,
                                      method="L-BFGS-B", bounds=bounds,
                                      options={"maxiter": 200})
        if np.isfinite(res.fun) and (best is None or res.fun < best[0]):
            best = (float(res.fun), res.x.copy())
    if best is None:
        raise ArealGPError("GPR baseline failed to fit")
    log_a, log_b, log_n = best[1]
    return math.exp(2 * log_a), math.exp(2 * log_b), math.exp(2 * log_n)


def baseline_gpr(task: RefinementTask, domain: DomainData,
                 seed: int = 0, restarts: int = 3) -> np.ndarray:
    """Single-output GP regression on coarse-region centroids.

    Trains on the target dataset's normalized coarse values only and predicts
    the posterior mean at each fine-region centroid; returns raw-unit values.
    """
    if task.fine_partition is None:
        raise ValueError("task has no fine partition to predict")
    target = domain.dataset(task.target_dataset)
    X = np.array([region_centroid(r, domain.grid) for r in target.partition.regions])
    y = target.y
    a2, b2, n2 = _gpr_fit(X, y, seed, restarts)
    Xs = np.array([region_centroid(r, domain.grid) for r in task.fine_partition.regions])
    D2 = scipy.spatial.distance.cdist(X, X, "sqeuclidean")
    K = a2 * np.exp(-D2 / (2 * b2)) + n2 * np.eye(y.size)
    alpha = scipy.linalg.cho_solve((scipy.linalg.cholesky(K, lower=True), True), y)
    Ks = a2 * np.exp(-scipy.spatial.distance.cdist(Xs, X, "sqeuclidean") / (2 * b2))
    return denormalize(domain, task.target_dataset, Ks @ alpha)


def _collapse_domain(domain: DomainData) -> DomainData:
    """Replace every region by the single grid cell nearest its centroid."""
    specs = []
    for d in domain.datasets:
        regions = [collapse_region(r, domain.grid) for r in d.partition.regions]
        seen: dict[int, str] = {}
        for r in regions:
            c = int(r.cells[0])
            if c in seen:
                raise ArealGPError(
                    f"centroid collapse: regions {seen[c]!r} and {r.region_id!r} of "
                    f"dataset {d.dataset_id!r} land on the same cell; use a finer grid"
                )
            seen[c] = r.region_id
        specs.append((d.dataset_id, Partition(d.partition.partition_id, regions),
                      AggregationScheme.AVERAGE, domain.raw_observations(d.dataset_id)))
    return DomainData.from_raw(domain.domain_id, domain.grid, specs)


def collapse_region(region: Region, grid: GridSpec) -> Region:
    return Region(region.region_id,
                  np.array([grid.nearest_cell(region_centroid(region, grid))]))


def baseline_slfm(task: RefinementTask, domains, config: ModelConfig) -> np.ndarray:
    """The aggregated model run on centroid-collapsed geometry.

    Every training region becomes a single-cell region at its centroid, the
    fine targets likewise; fitting and prediction reuse the exact same code
    path as the full model.  Returns raw-unit fine predictions.
    """
    if task.fine_partition is None:
        raise ValueError("task has no fine partition to predict")
    domains = [domains] if isinstance(domains, DomainData) else list(domains)
    collapsed = [_collapse_domain(d) for d in domains]
    model = fit(collapsed, config)
    target_domain = next(d for d in collapsed if d.domain_id == task.domain_id)
    fine_collapsed = Partition(
        "fine_centroids",
        [collapse_region(r, target_domain.grid) for r in task.fine_partition.regions])
    means, _ = predict_region(model, task.domain_id,
                              (task.target_dataset, fine_collapsed,
                               AggregationScheme.AVERAGE))
    return denormalize(target_domain, task.target_dataset, means)


def predict_refinement(model: FittedModel, task: RefinementTask) -> tuple[np.ndarray, np.ndarray]:
    """Aggregated-model fine predictions for a task, in raw units."""
    if task.fine_partition is None:
        raise ValueError("task has no fine partition to predict")
    means, variances = predict_region(
        model, task.domain_id, (task.target_dataset, task.fine_partition, task.fine_scheme))
    domain = next(d for d in model.domains if d.domain_id == task.domain_id)
    return denormalize(domain, task.target_dataset, means), variances


# ---------------------------------------------------------------------------
# Metrics CSV interchange
# ---------------------------------------------------------------------------

METRICS_HEADER = ["task_id", "method", "L", "seed", "mape"]
FOLD_HEADER = ["task_id", "L", "fold_region_id", "abs_pct_err"]


def write_metrics_csv(path, rows):
    """Rows of (task_id, method, L, seed, mape)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for task_id, method, L, seed, value in rows:
            writer.writerow([task_id, method, L, seed, repr(float(value))])


def write_fold_csv(path, task_id: str, result: CVResult):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FOLD_HEADER)
        for L, region_id, err in result.fold_records:
            writer.writerow([task_id, L, region_id, repr(float(err))])
