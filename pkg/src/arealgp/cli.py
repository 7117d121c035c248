"""Config-driven command line: fit, refine, cv, and synth runs.

One INI config file describes a run; flags only override seed, output
directory, and jitter.  Every command echoes the config into the output
directory so a run is reproducible from its outputs alone.

Exit codes: 0 ok, 2 input error, 3 optimizer failure, 4 geometry mismatch.
"""

import argparse
import configparser
import csv
import hashlib
import os
import shutil
import sys
from dataclasses import dataclass, replace

import numpy as np

from .data import DomainData, denormalize, denormalize_variance
from .errors import (
    ArealGPError,
    ConfigError,
    GridMismatch,
    NotPositiveDefinite,
    OptimizerDiverged,
)
from .evaluation import RefinementTask, loocv_select_L, mape, write_fold_csv, write_metrics_csv
from .geometry import AggregationScheme, GridSpec, Partition, rasterize, read_membership, read_polygons, write_membership
from .kernel import make_hyperparams
from .model import ModelConfig, fit, load_model, posterior_grid, predict_region, save_model
from .synth import SynthSpec, sample_ground_truth

OBSERVATIONS_HEADER = ["domain_id", "dataset_id", "region_id", "value"]
TRUTH_GRID_HEADER = ["dataset_id", "cell_id", "value"]


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

@dataclass
class DomainDecl:
    domain_id: str
    observations: str
    membership: str | None
    polygons: dict[str, str]
    schemes: dict[str, str]
    default_scheme: str


@dataclass
class RunConfig:
    path: str
    task: str
    grid: GridSpec
    model: ModelConfig
    candidates: list[int]
    domains: list[DomainDecl]
    out_dir: str
    target_domain: str | None
    target_dataset: str | None
    fine_membership: str | None
    fine_scheme: str
    truth: str | None
    model_dir: str | None
    task_id: str
    synth: dict


def _require(parser: configparser.ConfigParser, section: str, key: str, path: str) -> str:
    if not parser.has_option(section, key):
        raise ConfigError(f"{path}: missing [{section}] {key}")
    return parser.get(section, key)


def load_run_config(path: str, seed: int | None = None, out: str | None = None,
                    jitter: float | None = None) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    for section in ("grid", "task", "output"):
        if not parser.has_section(section):
            raise ConfigError(f"{path}: missing [{section}] section")
    try:
        grid = GridSpec(
            origin=(parser.getfloat("grid", "origin_x", fallback=0.0),
                    parser.getfloat("grid", "origin_y", fallback=0.0)),
            cell_size=float(_require(parser, "grid", "cell_size", path)),
            nx=int(_require(parser, "grid", "nx", path)),
            ny=int(_require(parser, "grid", "ny", path)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: bad [grid] value: {exc}") from exc

    task = _require(parser, "task", "kind", path).strip()
    if task not in ("fit", "refine", "cv", "synth"):
        raise ConfigError(f"{path}: unknown task kind {task!r}")

    model_cfg = ModelConfig(
        n_latents=parser.getint("model", "latents", fallback=1),
        jitter=parser.getfloat("model", "jitter", fallback=0.0),
        max_iter=parser.getint("model", "max_iter", fallback=200),
        grad_tol=parser.getfloat("model", "grad_tol", fallback=1e-8),
        restarts=parser.getint("model", "restarts", fallback=5),
        seed=parser.getint("model", "seed", fallback=0),
        init=parser.get("model", "init", fallback="default"),
    )
    if seed is not None:
        model_cfg = replace(model_cfg, seed=seed)
    if jitter is not None:
        model_cfg = replace(model_cfg, jitter=jitter)
    candidates = []
    if parser.has_option("model", "candidates"):
        candidates = [int(tok) for tok in parser.get("model", "candidates").split(",") if tok.strip()]

    domains = []
    for section in parser.sections():
        if not section.startswith("domain"):
            continue
        parts = section.split(None, 1)
        if len(parts) != 2:
            raise ConfigError(f"{path}: domain section must be named [domain <id>]")
        domain_id = parts[1].strip()
        schemes = {}
        polygons = {}
        for key, value in parser.items(section):
            if key.startswith("scheme."):
                schemes[key[len("scheme."):]] = value.strip()
            elif key.startswith("polygons."):
                polygons[key[len("polygons."):]] = value.strip()
        domains.append(DomainDecl(
            domain_id=domain_id,
            observations=_require(parser, section, "observations", path),
            membership=parser.get(section, "membership", fallback=None),
            polygons=polygons,
            schemes=schemes,
            default_scheme=parser.get(section, "scheme", fallback="average"),
        ))

    synth_cfg = dict(parser.items("synth")) if parser.has_section("synth") else {}

    out_dir = out if out is not None else _require(parser, "output", "dir", path)
    return RunConfig(
        path=path,
        task=task,
        grid=grid,
        model=model_cfg,
        candidates=candidates,
        domains=domains,
        out_dir=out_dir,
        target_domain=parser.get("task", "target_domain", fallback=None),
        target_dataset=parser.get("task", "target_dataset", fallback=None),
        fine_membership=parser.get("task", "fine_membership", fallback=None),
        fine_scheme=parser.get("task", "fine_scheme", fallback="average"),
        truth=parser.get("task", "truth", fallback=None),
        model_dir=parser.get("task", "model_dir", fallback=None),
        task_id=parser.get("task", "task_id", fallback=task),
        synth=synth_cfg,
    )


# ---------------------------------------------------------------------------
# Data loading
# ---------------------------------------------------------------------------

def read_observations(path) -> dict[str, dict[str, list[tuple[str, float]]]]:
    """domain_id -> dataset_id -> ordered (region_id, value) rows."""
    if not os.path.exists(path):
        raise ConfigError(f"observations file not found: {path}")
    out: dict[str, dict[str, list[tuple[str, float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != OBSERVATIONS_HEADER:
            raise ConfigError(f"{path}: expected header {','.join(OBSERVATIONS_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                domain_id, dataset_id, region_id, value = row
                out.setdefault(domain_id, {}).setdefault(dataset_id, []).append(
                    (region_id, float(value)))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_observations(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATIONS_HEADER)
        for domain_id, dataset_id, region_id, value in rows:
            writer.writerow([domain_id, dataset_id, region_id, repr(float(value))])


def _load_domain(decl: DomainDecl, grid: GridSpec) -> DomainData:
    obs_by_domain = read_observations(decl.observations)
    if decl.domain_id not in obs_by_domain:
        raise ConfigError(
            f"{decl.observations}: no rows for domain {decl.domain_id!r}")
    obs = obs_by_domain[decl.domain_id]

    partitions: dict[str, Partition] = {}
    if decl.membership:
        if not os.path.exists(decl.membership):
            raise ConfigError(f"membership file not found: {decl.membership}")
        partitions.update(read_membership(decl.membership))
    for dataset_id, poly_path in decl.polygons.items():
        if not os.path.exists(poly_path):
            raise ConfigError(f"polygon file not found: {poly_path}")
        polys = read_polygons(poly_path)
        partitions[dataset_id] = Partition(
            dataset_id, [rasterize(p, grid) for p in polys.values()])

    specs = []
    for dataset_id, rows in obs.items():
        if dataset_id not in partitions:
            raise ConfigError(
                f"dataset {dataset_id!r} has observations but no membership/polygons")
        partition = partitions[dataset_id]
        values = dict(rows)
        if len(values) != len(rows):
            raise ConfigError(f"duplicate region ids for dataset {dataset_id!r}")
        missing = [r.region_id for r in partition.regions if r.region_id not in values]
        if missing:
            raise ConfigError(
                f"dataset {dataset_id!r}: no observation for regions {missing}")
        extra = set(values) - set(partition.region_ids())
        if extra:
            raise ConfigError(
                f"dataset {dataset_id!r}: observations for unknown regions {sorted(extra)}")
        scheme = decl.schemes.get(dataset_id, decl.default_scheme)
        if scheme == AggregationScheme.WEIGHTED_AVERAGE.value:
            raise ConfigError(
                "weighted-average is a library-level scheme; the CLI has no "
                "cell-weight file format")
        y = np.array([values[r.region_id] for r in partition.regions])
        specs.append((dataset_id, partition, AggregationScheme(scheme), y))
    return DomainData.from_raw(decl.domain_id, grid, specs)


def _load_domains(config: RunConfig) -> list[DomainData]:
    if not config.domains:
        raise ConfigError(f"{config.path}: no [domain <id>] sections")
    return [_load_domain(decl, config.grid) for decl in config.domains]


def _target_domain_id(config: RunConfig) -> str:
    if config.target_domain:
        return config.target_domain
    if len(config.domains) == 1:
        return config.domains[0].domain_id
    raise ConfigError("several domains declared; set [task] target_domain")


def _echo_config(config: RunConfig):
    os.makedirs(config.out_dir, exist_ok=True)
    shutil.copyfile(config.path, os.path.join(config.out_dir, "config.ini"))


def _config_hash(config: RunConfig) -> str:
    with open(config.path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_pgm(path, values: np.ndarray, nx: int, ny: int):
    """Grayscale raster of per-cell values, min-max scaled, north row first."""
    img = np.asarray(values, dtype=np.float64).reshape(ny, nx)
    lo, hi = float(img.min()), float(img.max())
    scale = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    pixels = np.flipud((scale * 255.0).round().astype(np.uint8))
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode())
        fh.write(pixels.tobytes())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(config: RunConfig) -> int:
    domains = _load_domains(config)
    model = fit(domains, config.model)
    _echo_config(config)
    save_model(model, config.out_dir, extra={"config_sha256": _config_hash(config)})
    diag = model.diagnostics
    with open(os.path.join(config.out_dir, "fit_log.txt"), "w") as fh:
        for r, ll in enumerate(diag.restart_log_likelihoods):
            fh.write(f"restart {r}: log_likelihood={ll!r}\n")
        fh.write(f"best: log_likelihood={diag.log_likelihood!r} "
                 f"iterations={diag.n_iter} converged={diag.converged}\n")
    print(f"fit: log_likelihood={diag.log_likelihood:.6f} -> {config.out_dir}")
    return 0


def _fitted_model(config: RunConfig, domains):
    if config.model_dir:
        return load_model(config.model_dir, domains)
    return fit(domains, config.model)


def cmd_refine(config: RunConfig) -> int:
    domains = _load_domains(config)
    if not config.target_dataset:
        raise ConfigError("[task] target_dataset is required for refine")
    if not config.fine_membership:
        raise ConfigError("[task] fine_membership is required for refine")
    if not os.path.exists(config.fine_membership):
        raise ConfigError(f"fine membership file not found: {config.fine_membership}")
    domain_id = _target_domain_id(config)
    domain = next(d for d in domains if d.domain_id == domain_id)
    fine_parts = read_membership(config.fine_membership)
    if config.target_dataset not in fine_parts:
        raise ConfigError(
            f"{config.fine_membership}: no rows for dataset {config.target_dataset!r}")
    fine = fine_parts[config.target_dataset]
    scheme = AggregationScheme(config.fine_scheme)

    model = _fitted_model(config, domains)
    means, variances = predict_region(model, domain_id,
                                      (config.target_dataset, fine, scheme))
    raw_means = denormalize(domain, config.target_dataset, means)
    raw_vars = denormalize_variance(domain, config.target_dataset, variances)

    _echo_config(config)
    with open(os.path.join(config.out_dir, "predictions_regions.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset_id", "region_id", "mean", "variance"])
        for region, m, v in zip(fine.regions, raw_means, raw_vars):
            writer.writerow([config.target_dataset, region.region_id,
                             repr(float(m)), repr(float(v))])

    grid_means, grid_vars = posterior_grid(model, domain_id, config.target_dataset)
    grid_means = denormalize(domain, config.target_dataset, grid_means)
    grid_vars = denormalize_variance(domain, config.target_dataset, grid_vars)
    with open(os.path.join(config.out_dir, "predictions_grid.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset_id", "cell_id", "mean", "variance"])
        for c, (m, v) in enumerate(zip(grid_means, grid_vars)):
            writer.writerow([config.target_dataset, c, repr(float(m)), repr(float(v))])
    write_pgm(os.path.join(config.out_dir, f"heatmap_{config.target_dataset}.pgm"),
              grid_means, config.grid.nx, config.grid.ny)

    if config.truth:
        if not os.path.exists(config.truth):
            raise ConfigError(f"truth file not found: {config.truth}")
        truth_rows = read_observations(config.truth)
        try:
            truth = dict(truth_rows[domain_id][config.target_dataset])
        except KeyError:
            raise ConfigError(
                f"{config.truth}: no rows for {domain_id!r}/{config.target_dataset!r}")
        missing = [r.region_id for r in fine.regions if r.region_id not in truth]
        if missing:
            raise ConfigError(f"{config.truth}: missing fine regions {missing}")
        y_true = np.array([truth[r.region_id] for r in fine.regions])
        score = mape(y_true, raw_means)
        write_metrics_csv(os.path.join(config.out_dir, "metrics.csv"),
                          [(config.task_id, "arealgp", model.params.n_latents,
                            config.model.seed, score)])
        print(f"refine: mape={score:.6f} -> {config.out_dir}")
    else:
        print(f"refine: predictions written (no truth supplied) -> {config.out_dir}")
    return 0


def cmd_cv(config: RunConfig) -> int:
    domains = _load_domains(config)
    if not config.target_dataset:
        raise ConfigError("[task] target_dataset is required for cv")
    candidates = config.candidates or [config.model.n_latents]
    domain_id = _target_domain_id(config)
    task = RefinementTask(config.task_id, domain_id, config.target_dataset)
    result = loocv_select_L(domains, task, candidates, config.model)
    _echo_config(config)
    with open(os.path.join(config.out_dir, "cv_report.txt"), "w") as fh:
        fh.write("L,mean_abs_pct_err\n")
        for L in sorted(result.errors_by_L):
            fh.write(f"{L},{result.errors_by_L[L]!r}\n")
        fh.write(f"selected_L={result.selected_L}\n")
    write_fold_csv(os.path.join(config.out_dir, "cv_folds.csv"), config.task_id, result)
    print(f"cv: selected_L={result.selected_L} -> {config.out_dir}")
    return 0


def cmd_synth(config: RunConfig) -> int:
    cfg = config.synth
    if not cfg:
        raise ConfigError(f"{config.path}: synth task needs a [synth] section")
    try:
        n_datasets = int(cfg["datasets"])
        n_latents = int(cfg["latents"])
        recipes = tuple(tok.strip() for tok in cfg["recipes"].split(",") if tok.strip())
        betas = [float(tok) for tok in cfg["betas"].split(",")]
        lam = float(cfg.get("lam", "0.1"))
        sigma = float(cfg.get("sigma", "0.1"))
        offset = float(cfg.get("offset", "0.0"))
    except KeyError as exc:
        raise ConfigError(f"{config.path}: [synth] missing key {exc}") from exc
    if len(recipes) != n_datasets:
        raise ConfigError(f"{config.path}: {len(recipes)} recipes for {n_datasets} datasets")
    if len(betas) != n_latents:
        raise ConfigError(f"{config.path}: {len(betas)} betas for {n_latents} latents")
    rng = np.random.default_rng(config.model.seed)
    W = rng.standard_normal((n_datasets, n_latents)) / np.sqrt(n_latents)
    params = make_hyperparams(W, betas, lam, sigma * sigma)
    spec = SynthSpec(grid=config.grid, params=params, recipes=recipes,
                     seed=config.model.seed, value_offset=offset)
    data = sample_ground_truth(spec)

    _echo_config(config)
    obs_rows = []
    for sd in data.domains:
        dom = sd.domain_data
        partitions = {d.dataset_id: d.partition for d in dom.datasets}
        write_membership(
            os.path.join(config.out_dir, f"membership_{dom.domain_id}.csv"), partitions)
        for d, raw in zip(dom.datasets, sd.raw_observations):
            for region, value in zip(d.partition.regions, raw):
                obs_rows.append((dom.domain_id, d.dataset_id, region.region_id, value))
        with open(os.path.join(config.out_dir, f"truth_grid_{dom.domain_id}.csv"),
                  "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRUTH_GRID_HEADER)
            for s, d in enumerate(dom.datasets):
                for c, value in enumerate(sd.fields[s]):
                    writer.writerow([d.dataset_id, c, repr(float(value))])
    write_observations(os.path.join(config.out_dir, "observations.csv"), obs_rows)
    print(f"synth: {len(data.domains)} domain(s) -> {config.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="arealgp",
        description="Fit, refine, cross-validate, or synthesize areal-GP runs "
                    "from a config file.")
    parser.add_argument("config", help="INI run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override [model] seed")
    parser.add_argument("--out", default=None, help="override [output] dir")
    parser.add_argument("--jitter", type=float, default=None, help="override [model] jitter")
    args = parser.parse_args(argv)

    try:
        config = load_run_config(args.config, seed=args.seed, out=args.out,
                                 jitter=args.jitter)
        command = {"fit": cmd_fit, "refine": cmd_refine, "cv": cmd_cv,
                   "synth": cmd_synth}[config.task]
        return command(config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OptimizerDiverged, NotPositiveDefinite) as exc:
        print(f"optimizer failure: {exc}", file=sys.stderr)
        return 3
    except GridMismatch as exc:
        print(f"geometry mismatch: {exc}", file=sys.stderr)
        return 4
    except ArealGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
