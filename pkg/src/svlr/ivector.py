"""Total-variability subspace training and utterance-embedding extraction.

The subspace model treats the stacked centralized first-order statistics of an
utterance as a linear-Gaussian observation of a low-dimensional latent factor;
extraction returns the posterior mean of that factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .binio import read_f64, read_header, write_f64, write_header
from .gmm import BwStats, Ubm

TV_MAGIC = b"SVT1"

# Component counts below this threshold contribute nothing to a block update
# or to the objective (their statistics are identically zero).
_COUNT_EPS = 1e-12


@dataclass(frozen=True)
class TvModel:
    """Total-variability subspace: loading matrix T and diagonal residual covariance."""

    T: np.ndarray
    sigma: np.ndarray
    em_objective: np.ndarray | None = None

    def __post_init__(self) -> None:
        T = np.asarray(self.T, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if T.ndim != 2 or T.shape[1] < 1:
            raise ValueError("T must be a (C*F) x R matrix with R >= 1")
        if sigma.shape != (T.shape[0],):
            raise ValueError("sigma must have one entry per supervector dimension")
        if (sigma <= 0).any() or not np.isfinite(sigma).all():
            raise ValueError("sigma must be finite and positive")
        if not np.isfinite(T).all():
            raise ValueError("T must be finite")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "sigma", sigma)

    @property
    def supervector_dim(self) -> int:
        return self.T.shape[0]

    @property
    def n_factors(self) -> int:
        return self.T.shape[1]


@dataclass(frozen=True)
class IVector:
    """Latent-factor embedding of one utterance."""

    x: np.ndarray
    utterance_id: str = ""

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1 or not np.isfinite(x).all():
            raise ValueError("embedding must be a finite vector")
        object.__setattr__(self, "x", x)


def _check_stats(tv: TvModel, stats: BwStats) -> tuple[np.ndarray, np.ndarray]:
    n_components, dim = stats.f.shape
    if n_components * dim != tv.supervector_dim:
        raise ValueError(
            f"statistics span {n_components * dim} dims, model expects {tv.supervector_dim}"
        )
    return np.repeat(stats.n, dim), stats.f.reshape(-1)


def extract_ivector(tv: TvModel, stats: BwStats) -> IVector:
    """Posterior mean of the latent factor given one utterance's statistics.

    Solves (I + T' Sigma^-1 N T) x = T' Sigma^-1 fbar with a Cholesky
    factorization; the factorization doubles as the positive-definiteness
    assertion on the posterior precision.
    """
    n_expanded, fbar = _check_stats(tv, stats)
    weighted = tv.T / tv.sigma[:, None]
    precision = np.eye(tv.n_factors) + tv.T.T @ (n_expanded[:, None] * weighted)
    precision = 0.5 * (precision + precision.T)
    factor = cho_factor(precision, lower=True)
    x = cho_solve(factor, weighted.T @ fbar)
    return IVector(x)


def train_tv(
    stats: Sequence[BwStats],
    ubm: Ubm,
    n_factors: int,
    n_iters: int = 10,
    seed: int = 0,
    reestimate_sigma: bool = False,
) -> TvModel:
    """Fit the total-variability subspace by EM over per-utterance statistics.

    T starts from a seeded Gaussian draw with entry variance 1/R and sigma from
    the UBM's stacked diagonal covariances.  Each iteration records the current
    marginal log-likelihood of the statistics; the sequence is non-decreasing.
    With reestimate_sigma, one final pass re-estimates the residual covariance
    from the model-implied residual moments (sigma is otherwise kept fixed).
    """
    stats = list(stats)
    n_components, dim = ubm.means.shape
    sv_dim = n_components * dim
    if n_factors < 1 or n_factors > sv_dim:
        raise ValueError(f"n_factors must be in [1, {sv_dim}]")
    if len(stats) < n_factors:
        raise ValueError(f"need at least {n_factors} utterances, got {len(stats)}")
    for k, st in enumerate(stats):
        if st.f.shape != (n_components, dim):
            raise ValueError(f"utterance {k}: statistics do not match the UBM")
    if all(st.n.sum() <= _COUNT_EPS for st in stats):
        raise ValueError("degenerate statistics: no utterance carries any frame mass")

    rng = np.random.default_rng(seed)
    T = rng.standard_normal((sv_dim, n_factors)) / np.sqrt(n_factors)
    sigma = ubm.variances.reshape(-1).copy()

    objective: list[float] = []
    for _ in range(n_iters):
        accum_outer = np.zeros((n_components, n_factors, n_factors))
        accum_cross = np.zeros((sv_dim, n_factors))
        total_ll = 0.0
        weighted = T / sigma[:, None]
        for st in stats:
            n_expanded = np.repeat(st.n, dim)
            fbar = st.f.reshape(-1)
            precision = np.eye(n_factors) + T.T @ (n_expanded[:, None] * weighted)
            factor = cho_factor(0.5 * (precision + precision.T), lower=True)
            b = weighted.T @ fbar
            x = cho_solve(factor, b)
            cov = cho_solve(factor, np.eye(n_factors))
            second_moment = cov + np.outer(x, x)
            active = st.n > _COUNT_EPS
            accum_outer[active] += st.n[active, None, None] * second_moment
            accum_cross += np.outer(fbar, x)
            total_ll += _marginal_ll(st, sigma, factor, b, x, active, dim)
        objective.append(total_ll)

        for c in range(n_components):
            if np.trace(accum_outer[c]) <= _COUNT_EPS:
                continue
            block = slice(c * dim, (c + 1) * dim)
            T[block] = cho_solve(cho_factor(accum_outer[c], lower=True), accum_cross[block].T).T

    if reestimate_sigma and n_iters > 0:
        sigma = _reestimate_sigma(stats, T, sigma, dim)

    return TvModel(T, sigma, em_objective=np.asarray(objective))


def _marginal_ll(
    st: BwStats,
    sigma: np.ndarray,
    factor,
    b: np.ndarray,
    x: np.ndarray,
    active: np.ndarray,
    dim: int,
) -> float:
    """Marginal log-likelihood of one utterance's statistics under the model.

    Components without mass are excluded; their statistics are identically
    zero and carry no information.
    """
    if not active.any():
        return 0.0
    sigma_blocks = sigma.reshape(-1, dim)
    logdet_residual = dim * np.log(st.n[active]).sum() + np.log(sigma_blocks[active]).sum()
    logdet_precision = 2.0 * np.log(np.diag(factor[0])).sum()
    quad_direct = ((st.f[active] ** 2 / sigma_blocks[active]).sum(axis=1) / st.n[active]).sum()
    quad = quad_direct - float(b @ x)
    n_active_dims = dim * int(active.sum())
    return -0.5 * (n_active_dims * np.log(2.0 * np.pi) + logdet_residual + logdet_precision + quad)


def _reestimate_sigma(stats, T, sigma, dim) -> np.ndarray:
    sv_dim = T.shape[0]
    n_factors = T.shape[1]
    residual = np.zeros(sv_dim)
    counts = np.zeros(sv_dim)
    weighted = T / sigma[:, None]
    for st in stats:
        n_expanded = np.repeat(st.n, dim)
        fbar = st.f.reshape(-1)
        precision = np.eye(n_factors) + T.T @ (n_expanded[:, None] * weighted)
        factor = cho_factor(0.5 * (precision + precision.T), lower=True)
        x = cho_solve(factor, weighted.T @ fbar)
        second_moment = cho_solve(factor, np.eye(n_factors)) + np.outer(x, x)
        mean_part = T @ x
        # E[(f - N T x)^2] per dimension, divided by the count so each active
        # utterance contributes one unit-weight residual sample.
        e2 = fbar**2 - 2.0 * n_expanded * fbar * mean_part
        e2 += n_expanded**2 * np.einsum("ir,rs,is->i", T, second_moment, T)
        active = n_expanded > _COUNT_EPS
        residual[active] += e2[active] / n_expanded[active]
        counts[active] += 1.0
    updated = sigma.copy()
    has_data = counts > 0
    updated[has_data] = residual[has_data] / counts[has_data]
    return np.maximum(updated, 1e-10 * sigma)


def save_tv(tv: TvModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_header(fh, TV_MAGIC, (tv.supervector_dim, tv.n_factors))
        write_f64(fh, tv.T)
        write_f64(fh, tv.sigma)


def load_tv(path: str | Path) -> TvModel:
    with open(path, "rb") as fh:
        sv_dim, n_factors = read_header(fh, TV_MAGIC, 2, "TV file")
        T = read_f64(fh, sv_dim * n_factors, "TV matrix").reshape(sv_dim, n_factors)
        sigma = read_f64(fh, sv_dim, "TV sigma")
    return TvModel(T, sigma)
