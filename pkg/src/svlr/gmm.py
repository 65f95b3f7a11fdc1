"""Diagonal-covariance GMM universal background model and sufficient statistics.

Covers maximum-likelihood EM training from pooled frames, frame posteriors,
zero-th/first-order sufficient statistics against a UBM, re-estimation of the
UBM from externally supplied frame posteriors, and truncation of a UBM to its
heaviest components.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .binio import read_f64, read_header, write_f64, write_header
from .data import FrameMatrix

UBM_MAGIC = b"SVU1"

# Variance floor relative to the global per-dimension variance of the data.
VARIANCE_FLOOR_SCALE = 1e-4
# Components whose responsibility mass falls below this fraction of the total
# are flagged as empty and should be removed with truncate_ubm.
EMPTY_COMPONENT_FRACTION = 1e-8


@dataclass(frozen=True)
class Ubm:
    """Gaussian mixture background model with diagonal covariances.

    weights are the normalized mixture weights.  component_mass, when present,
    is the unnormalized per-component responsibility mass the model was
    estimated from.  em_log_likelihoods, when present, is the total training
    log-likelihood recorded at the start of each EM iteration.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    component_mass: np.ndarray | None = None
    em_log_likelihoods: np.ndarray | None = None

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        if means.ndim != 2 or means.shape != variances.shape:
            raise ValueError("means and variances must be matching C x F matrices")
        if weights.shape != (means.shape[0],):
            raise ValueError("weights must have one entry per component")
        if (weights < 0).any() or not np.isfinite(weights).all():
            raise ValueError("weights must be finite and nonnegative")
        total = weights.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        if (variances <= 0).any() or not np.isfinite(variances).all():
            raise ValueError("variances must be finite and positive")
        if not np.isfinite(means).all():
            raise ValueError("means must be finite")
        object.__setattr__(self, "weights", weights / total)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class BwStats:
    """Zero-th order counts and centralized first-order sums of one utterance."""

    n: np.ndarray
    f: np.ndarray

    def __post_init__(self) -> None:
        n = np.asarray(self.n, dtype=np.float64)
        f = np.asarray(self.f, dtype=np.float64)
        if f.ndim != 2 or n.shape != (f.shape[0],):
            raise ValueError("n must have one entry per row of f")
        if (n < 0).any() or not np.isfinite(n).all() or not np.isfinite(f).all():
            raise ValueError("statistics must be finite with nonnegative counts")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "f", f)


@dataclass(frozen=True)
class PosteriorMatrix:
    """Per-frame component alignments; every row is a distribution over components."""

    gammas: np.ndarray

    def __post_init__(self) -> None:
        gammas = np.asarray(self.gammas, dtype=np.float64)
        if gammas.ndim != 2 or gammas.shape[0] < 1 or gammas.shape[1] < 1:
            raise ValueError("gammas must be a nonempty 2-D matrix")
        if (gammas < 0).any() or not np.isfinite(gammas).all():
            raise ValueError("posteriors must be finite and nonnegative")
        row_sums = gammas.sum(axis=1)
        if (row_sums <= 0).any():
            raise ValueError("posterior rows must have positive mass")
        if np.abs(row_sums - 1.0).max() > 1e-6:
            warnings.warn("posterior rows do not sum to 1; renormalizing", RuntimeWarning)
            gammas = gammas / row_sums[:, None]
        object.__setattr__(self, "gammas", gammas)


def _pool(frames: np.ndarray | FrameMatrix | Sequence[FrameMatrix]) -> np.ndarray:
    if isinstance(frames, FrameMatrix):
        return frames.frames
    if isinstance(frames, np.ndarray):
        if frames.ndim != 2:
            raise ValueError("pooled frames must form a 2-D matrix")
        return np.asarray(frames, dtype=np.float64)
    mats = list(frames)
    if not mats:
        raise ValueError("no frames to pool")
    return np.vstack([m.frames for m in mats])


def _log_densities(
    means: np.ndarray, variances: np.ndarray, x: np.ndarray, x_sq: np.ndarray | None = None
) -> np.ndarray:
    """Per-frame log density under each diagonal Gaussian, shape (L, C).

    Uses the expanded quadratic form so the component dimension runs through
    matrix products rather than a Python loop.
    """
    if x_sq is None:
        x_sq = x * x
    inv = 1.0 / variances
    quad = x_sq @ inv.T - 2.0 * (x @ (means * inv).T) + (means * means * inv).sum(axis=1)
    log_norm = x.shape[1] * np.log(2.0 * np.pi) + np.log(variances).sum(axis=1)
    return -0.5 * (log_norm + quad)


def _log_joint(
    ubm_weights: np.ndarray,
    means: np.ndarray,
    variances: np.ndarray,
    x: np.ndarray,
    x_sq: np.ndarray | None = None,
) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(ubm_weights)
    return _log_densities(means, variances, x, x_sq) + log_w


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
        else:
            probs = np.full(len(x), 1.0 / len(x))
        idx = rng.choice(len(x), p=probs)
        centers[i] = x[idx]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def train_ubm_em(
    frames: np.ndarray | FrameMatrix | Sequence[FrameMatrix],
    n_components: int,
    n_iters: int = 10,
    seed: int = 0,
) -> Ubm:
    """Fit a diagonal-covariance GMM to pooled frames by EM.

    Initialization is k-means++-style seeding driven by the given seed, so the
    result is a pure function of (data, n_components, n_iters, seed).  The
    per-iteration total log-likelihood is recorded on the returned model and is
    non-decreasing.
    """
    x = _pool(frames)
    n_frames, dim = x.shape
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n_frames < n_components:
        raise ValueError(f"need at least {n_components} frames, got {n_frames}")
    global_var = x.var(axis=0)
    if (global_var <= 0).any():
        raise ValueError("training data is constant in at least one dimension")
    floor = VARIANCE_FLOOR_SCALE * global_var

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, n_components, rng)
    variances = np.tile(global_var, (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)

    x_sq = x * x
    history = []
    for _ in range(n_iters):
        log_joint = _log_joint(weights, means, variances, x, x_sq)
        log_norm = logsumexp(log_joint, axis=1)
        history.append(float(log_norm.sum()))
        gammas = np.exp(log_joint - log_norm[:, None])

        mass = gammas.sum(axis=0)
        live = mass > 1e-10
        sum1 = gammas.T @ x
        sum2 = gammas.T @ x_sq
        means[live] = sum1[live] / mass[live, None]
        variances[live] = np.maximum(sum2[live] / mass[live, None] - means[live] ** 2, floor)
        weights = mass / mass.sum()

    return Ubm(weights, means, variances, em_log_likelihoods=np.asarray(history))


def log_likelihood(ubm: Ubm, frames: np.ndarray | FrameMatrix | Sequence[FrameMatrix]) -> float:
    """Total log-likelihood of the frames under the mixture."""
    x = _pool(frames)
    if x.shape[1] != ubm.dim:
        raise ValueError(f"feature dim {x.shape[1]} does not match UBM dim {ubm.dim}")
    return float(logsumexp(_log_joint(ubm.weights, ubm.means, ubm.variances, x), axis=1).sum())


def posteriors(ubm: Ubm, frames: FrameMatrix) -> PosteriorMatrix:
    """Per-frame component posteriors, computed in the log domain."""
    if frames.dim != ubm.dim:
        raise ValueError(f"feature dim {frames.dim} does not match UBM dim {ubm.dim}")
    log_joint = _log_joint(ubm.weights, ubm.means, ubm.variances, frames.frames)
    gammas = np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])
    return PosteriorMatrix(gammas)


def baum_welch_stats(ubm: Ubm, frames: FrameMatrix) -> BwStats:
    """Zero-th order and centralized first-order statistics of one utterance."""
    gammas = posteriors(ubm, frames).gammas
    n = gammas.sum(axis=0)
    f = gammas.T @ frames.frames - n[:, None] * ubm.means
    return BwStats(n, f)


def ubm_from_posteriors(
    frames: Sequence[FrameMatrix],
    gammas: Sequence[PosteriorMatrix],
) -> Ubm:
    """Estimate a UBM from frames aligned by externally supplied posteriors.

    Component weights are the total responsibility mass normalized to sum to
    one; the unnormalized mass is kept on the model.  Components with
    negligible mass are flagged with a warning and given global-moment
    placeholder parameters; remove them with truncate_ubm.
    """
    mats = list(frames)
    posts = list(gammas)
    if not mats:
        raise ValueError("empty corpus")
    if len(mats) != len(posts):
        raise ValueError(f"{len(mats)} utterances but {len(posts)} posterior matrices")
    n_components = posts[0].gammas.shape[1]
    dim = mats[0].dim

    mass = np.zeros(n_components)
    sum1 = np.zeros((n_components, dim))
    sum2 = np.zeros((n_components, dim))
    pooled_count = 0
    pooled_sum = np.zeros(dim)
    pooled_sq = np.zeros(dim)
    for k, (mat, post) in enumerate(zip(mats, posts)):
        g = post.gammas
        if mat.dim != dim or g.shape[1] != n_components:
            raise ValueError(f"utterance {k}: inconsistent dimensions")
        if g.shape[0] != mat.n_frames:
            raise ValueError(
                f"utterance {k}: {mat.n_frames} frames but {g.shape[0]} posterior rows"
            )
        mass += g.sum(axis=0)
        sum1 += g.T @ mat.frames
        sum2 += g.T @ (mat.frames * mat.frames)
        pooled_count += mat.n_frames
        pooled_sum += mat.frames.sum(axis=0)
        pooled_sq += (mat.frames * mat.frames).sum(axis=0)

    global_mean = pooled_sum / pooled_count
    global_var = pooled_sq / pooled_count - global_mean**2
    floor = np.maximum(VARIANCE_FLOOR_SCALE * global_var, np.finfo(np.float64).tiny)

    empty = mass < EMPTY_COMPONENT_FRACTION * mass.sum()
    if empty.any():
        warnings.warn(
            f"components {np.flatnonzero(empty).tolist()} have negligible responsibility "
            "mass; drop them with truncate_ubm",
            RuntimeWarning,
        )
    safe_mass = np.where(empty, 1.0, mass)
    means = np.where(empty[:, None], global_mean, sum1 / safe_mass[:, None])
    variances = sum2 / safe_mass[:, None] - means**2
    variances = np.where(empty[:, None], np.maximum(global_var, floor), np.maximum(variances, floor))
    return Ubm(mass / mass.sum(), means, variances, component_mass=mass)


def truncate_ubm(ubm: Ubm, pooled_stats: BwStats, keep: int) -> Ubm:
    """Keep the components with the largest pooled zero-th order statistics.

    The relative order of the kept components is preserved and the weights are
    renormalized to sum to one.
    """
    n_components = ubm.n_components
    if not 1 <= keep <= n_components:
        raise ValueError(f"keep must be in [1, {n_components}], got {keep}")
    if pooled_stats.n.shape != (n_components,):
        raise ValueError("pooled statistics do not match the UBM component count")
    top = np.argsort(-pooled_stats.n, kind="stable")[:keep]
    kept = np.sort(top)
    mass = None if ubm.component_mass is None else ubm.component_mass[kept]
    return Ubm(ubm.weights[kept], ubm.means[kept], ubm.variances[kept], component_mass=mass)


def save_ubm(ubm: Ubm, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_header(fh, UBM_MAGIC, (ubm.n_components, ubm.dim))
        write_f64(fh, ubm.weights)
        write_f64(fh, ubm.means)
        write_f64(fh, ubm.variances)


def load_ubm(path: str | Path) -> Ubm:
    with open(path, "rb") as fh:
        n_components, dim = read_header(fh, UBM_MAGIC, 2, "UBM file")
        weights = read_f64(fh, n_components, "UBM weights")
        means = read_f64(fh, n_components * dim, "UBM means").reshape(n_components, dim)
        variances = read_f64(fh, n_components * dim, "UBM variances").reshape(n_components, dim)
    return Ubm(weights, means, variances)


def pool_stats(stats: Iterable[BwStats]) -> BwStats:
    """Sum statistics over utterances (for truncation decisions)."""
    stats = list(stats)
    if not stats:
        raise ValueError("no statistics to pool")
    n = np.sum([s.n for s in stats], axis=0)
    f = np.sum([s.f for s in stats], axis=0)
    return BwStats(n, f)
