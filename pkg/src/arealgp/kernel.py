"""Covariance structure: latent squared-exponential kernels, mixing weights, noise.

The S output processes are a linear mix of L independent latent processes
plus per-output white noise; the cross-covariance between outputs s and s2 at
squared distance d2 is

    k(s, s2, d2) = sum_l W[s, l] * W[s2, l] * exp(-d2 / (2 beta_l^2))
                   + (s == s2 and same point) * lam_s^2

The white-noise term is discretized per grid point (no cell-area scaling), so
it contributes exactly when the two grid points are identical.
"""

import re
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LatentKernel:
    """Squared-exponential covariance of one latent process.

    The signal variance is pinned to 1; output scale lives in the mixing
    weight columns instead.
    """

    beta: float
    alpha2: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.alpha2 != 1.0:
            raise ValueError("alpha2 is fixed to 1; scale the mixing-weight column instead")


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Per-dataset white-noise amplitudes lam_s and observation-noise variances sigma_s^2.

    The latent means are zero, so the prior mean of every output process and
    of every areal observation is zero.
    """

    lam: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64).ravel()
        sigma2 = np.asarray(self.sigma2, dtype=np.float64).ravel()
        if lam.size != sigma2.size:
            raise ValueError(f"lam has {lam.size} entries but sigma2 has {sigma2.size}")
        if np.any(lam < 0) or np.any(sigma2 < 0):
            raise ValueError("noise parameters must be nonnegative")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "sigma2", sigma2)


@dataclass(frozen=True, eq=False)
class MixingWeights:
    """S x L matrix mixing the latent processes into the outputs."""

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError(f"W must be 2-d, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("W must be finite")
        object.__setattr__(self, "W", W)


@dataclass(frozen=True, eq=False)
class HyperParams:
    """All learnable quantities: mixing weights, latent kernels, noise."""

    weights: MixingWeights
    kernels: tuple[LatentKernel, ...]
    noise: NoiseSpec

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if len(self.kernels) < 1:
            raise ValueError("need at least one latent kernel")
        if self.weights.W.shape[1] != len(self.kernels):
            raise ValueError(
                f"W has {self.weights.W.shape[1]} columns but there are "
                f"{len(self.kernels)} kernels"
            )
        if self.weights.W.shape[0] != self.noise.lam.size:
            raise ValueError(
                f"W has {self.weights.W.shape[0]} rows but noise has "
                f"{self.noise.lam.size} entries"
            )

    @property
    def n_datasets(self) -> int:
        return self.weights.W.shape[0]

    @property
    def n_latents(self) -> int:
        return len(self.kernels)

    @property
    def betas(self) -> np.ndarray:
        return np.array([k.beta for k in self.kernels])


def make_hyperparams(W, betas, lam, sigma2) -> HyperParams:
    """Convenience constructor from plain arrays."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    betas = np.atleast_1d(betas)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (W.shape[0],))
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (W.shape[0],))
    return HyperParams(
        weights=MixingWeights(W),
        kernels=tuple(LatentKernel(float(b)) for b in betas),
        noise=NoiseSpec(lam.copy(), sigma2.copy()),
    )


def gamma(params: HyperParams, l: int, d2):
    """Latent covariance exp(-d2 / (2 beta_l^2)); vectorized over d2 >= 0."""
    beta = params.kernels[l].beta
    return np.exp(-np.asarray(d2, dtype=np.float64) / (2.0 * beta * beta))


def gamma_table(params: HyperParams, d2: np.ndarray) -> np.ndarray:
    """Latent covariances at each squared distance, shape (len(d2), L)."""
    d2 = np.asarray(d2, dtype=np.float64)
    betas = params.betas
    return np.exp(-d2[:, None] / (2.0 * betas * betas)[None, :])


def cross_cov(s: int, s2: int, d2, same_point: bool, params: HyperParams):
    """Cross-covariance between outputs s and s2 at squared distance d2.

    ``same_point`` must be True exactly when the two grid points are the
    identical point; only then does the white-noise term apply (and only for
    s == s2).
    """
    W = params.weights.W
    val = gamma_table(params, np.atleast_1d(d2)) @ (W[s] * W[s2])
    if s == s2 and same_point:
        val = val + params.noise.lam[s] ** 2
    return val[0] if np.isscalar(d2) or np.ndim(d2) == 0 else val


# ---------------------------------------------------------------------------
# Flat text serialization
# ---------------------------------------------------------------------------

_KEY_RE = re.compile(r"^(W\[(\d+)\]\[(\d+)\]|beta\[(\d+)\]|lambda\[(\d+)\]|sigma2\[(\d+)\])$")


def save_hyperparams(params: HyperParams, path):
    """Write one ``key=value`` line per parameter, full float round trip."""
    lines = []
    W = params.weights.W
    for s in range(W.shape[0]):
        for l in range(W.shape[1]):
            lines.append(f"W[{s}][{l}]={float(W[s, l])!r}")
    for l, k in enumerate(params.kernels):
        lines.append(f"beta[{l}]={float(k.beta)!r}")
    for s, v in enumerate(params.noise.lam):
        lines.append(f"lambda[{s}]={float(v)!r}")
    for s, v in enumerate(params.noise.sigma2):
        lines.append(f"sigma2[{s}]={float(v)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_hyperparams(path) -> HyperParams:
    entries: dict[str, dict[tuple, float]] = {"W": {}, "beta": {}, "lambda": {}, "sigma2": {}}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            m = _KEY_RE.match(key.strip())
            if m is None:
                raise ValueError(f"{path}:{lineno}: unrecognized key {key.strip()!r}")
            if m.group(2) is not None:
                entries["W"][(int(m.group(2)), int(m.group(3)))] = float(value)
            elif m.group(4) is not None:
                entries["beta"][(int(m.group(4)),)] = float(value)
            elif m.group(5) is not None:
                entries["lambda"][(int(m.group(5)),)] = float(value)
            else:
                entries["sigma2"][(int(m.group(6)),)] = float(value)
    if not entries["W"] or not entries["beta"]:
        raise ValueError(f"{path}: missing W or beta entries")
    S = max(s for s, _ in entries["W"]) + 1
    L = max(l for _, l in entries["W"]) + 1
    W = np.empty((S, L))
    for (s, l), v in entries["W"].items():
        W[s, l] = v
    betas = np.array([entries["beta"][(l,)] for l in range(L)])
    lam = np.array([entries["lambda"][(s,)] for s in range(S)])
    sigma2 = np.array([entries["sigma2"][(s,)] for s in range(S)])
    return make_hyperparams(W, betas, lam, sigma2)
