"""Back-ends: linear-regression speaker space with cosine scoring, plus the
within-class-covariance-normalization, linear-discriminant, and probabilistic
linear-discriminant comparison back-ends.

All fitting functions take embeddings as a D x N matrix whose columns are
utterance-level feature vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, eigh, solve_triangular

from .binio import read_f64, read_header, write_f64, write_header

LR_MAGIC = b"SVLR"
WCCN_MAGIC = b"SVWC"
LDA_MAGIC = b"SVLD"
PLDA_MAGIC = b"SVPL"

# Scale for the automatic ridge: keeps the regularization dimensionless.
AUTO_RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class LrModel:
    """Least-squares map from embeddings to speaker-indicator space."""

    A: np.ndarray
    ridge: float = 0.0

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2 or not np.isfinite(A).all():
            raise ValueError("A must be a finite D x S matrix")
        object.__setattr__(self, "A", A)


@dataclass(frozen=True)
class SpeakerModel:
    """Average of a speaker's transformed utterance vectors."""

    m: np.ndarray
    n_utts: int

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64)
        if m.ndim != 1 or not np.isfinite(m).all():
            raise ValueError("speaker model must be a finite vector")
        if self.n_utts < 1:
            raise ValueError("speaker model needs at least one utterance")
        object.__setattr__(self, "m", m)


@dataclass(frozen=True)
class WccnModel:
    """Whitening transform B for the averaged within-class covariance."""

    B: np.ndarray

    def __post_init__(self) -> None:
        B = np.asarray(self.B, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or not np.isfinite(B).all():
            raise ValueError("B must be a finite square matrix")
        object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class LdaModel:
    """Discriminant projection; columns are scatter-ratio-optimal directions."""

    projection: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self) -> None:
        W = np.asarray(self.projection, dtype=np.float64)
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        if W.ndim != 2 or lam.shape != (W.shape[1],):
            raise ValueError("projection must be D x d with one eigenvalue per column")
        object.__setattr__(self, "projection", W)
        object.__setattr__(self, "eigenvalues", lam)


@dataclass(frozen=True)
class PldaModel:
    """Two-covariance generative model: between-class basis V and within-class W."""

    mean: np.ndarray
    V: np.ndarray
    W: np.ndarray
    em_log_likelihoods: np.ndarray | None = None

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        V = np.asarray(self.V, dtype=np.float64)
        W = np.asarray(self.W, dtype=np.float64)
        dim = mean.shape[0]
        if mean.ndim != 1 or V.shape[0] != dim or W.shape != (dim, dim):
            raise ValueError("inconsistent model dimensions")
        cholesky(W, lower=True)  # asserts the within-class covariance is positive definite
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", W)

    @property
    def between_cov(self) -> np.ndarray:
        return self.V @ self.V.T


def _as_matrix(X: np.ndarray, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError(f"{name} must be a D x N matrix with N >= 1")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} must be finite")
    return X


def indicator_matrix(labels: Sequence[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    """One-hot S x N target matrix from per-utterance labels (classes sorted)."""
    classes = tuple(sorted(set(labels)))
    index = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((len(classes), len(labels)))
    for j, lab in enumerate(labels):
        Y[index[lab], j] = 1.0
    return Y, classes


def fit_lr(X: np.ndarray, Y: np.ndarray, ridge: float | None = None) -> LrModel:
    """Closed-form least-squares fit of the speaker-space map.

    Solves (X X' + ridge I) A = X Y' with a symmetric positive-definite
    factorization.  ridge=0 gives the plain normal-equations solution and
    raises when X X' is singular; ridge=None picks the default
    1e-6 * trace(X X')/D.
    """
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns but Y has {Y.shape[1]}")
    dim = X.shape[0]
    gram = X @ X.T
    if ridge is None:
        lam = AUTO_RIDGE_SCALE * float(np.trace(gram)) / dim
    else:
        lam = float(ridge)
        if lam < 0:
            raise ValueError("ridge must be >= 0")
    try:
        factor = cho_factor(gram + lam * np.eye(dim), lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "X X^T is singular; pass ridge > 0 to regularize the fit"
        ) from exc
    return LrModel(cho_solve(factor, X @ Y.T), ridge=lam)


def lr_transform(model: LrModel, x: np.ndarray) -> np.ndarray:
    """Map an embedding (or a D x N batch) into the speaker space."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != model.A.shape[0]:
        raise ValueError(f"embedding dim {x.shape[0]} does not match model dim {model.A.shape[0]}")
    return model.A.T @ x


def speaker_model(transformed: Sequence[np.ndarray]) -> SpeakerModel:
    """Arithmetic mean of a speaker's transformed utterance vectors."""
    vectors = [np.asarray(v, dtype=np.float64) for v in transformed]
    if not vectors:
        raise ValueError("cannot build a speaker model from zero utterances")
    return SpeakerModel(np.mean(vectors, axis=0), len(vectors))


def _vector(m: SpeakerModel | np.ndarray) -> np.ndarray:
    if isinstance(m, SpeakerModel):
        return m.m
    return np.asarray(m, dtype=np.float64)


def cosine_score(m_enroll: SpeakerModel | np.ndarray, m_test: SpeakerModel | np.ndarray) -> float:
    """Cosine similarity of two speaker models, in [-1, 1]."""
    a = _vector(m_enroll)
    b = _vector(m_test)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine score is undefined for a zero-norm speaker model")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def decide(score: float, theta: float) -> bool:
    """Accept the identity claim iff the score strictly exceeds the threshold."""
    return score > theta


def _class_partition(labels: Sequence[str]) -> dict[str, np.ndarray]:
    labels = list(labels)
    out: dict[str, list[int]] = {}
    for j, lab in enumerate(labels):
        out.setdefault(lab, []).append(j)
    return {lab: np.asarray(idx) for lab, idx in out.items()}


def average_within_class_covariance(X: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    """Mean over classes of the per-class maximum-likelihood covariance."""
    X = _as_matrix(X)
    parts = _class_partition(labels)
    dim = X.shape[0]
    cov = np.zeros((dim, dim))
    for idx in parts.values():
        cls = X[:, idx]
        centered = cls - cls.mean(axis=1, keepdims=True)
        cov += centered @ centered.T / cls.shape[1]
    return cov / len(parts)


def fit_wccn(X: np.ndarray, labels: Sequence[str], ridge: float = 0.0) -> WccnModel:
    """Whitening transform of the averaged within-class covariance.

    B satisfies B B' = inverse of the averaged within-class covariance, so the
    transformed training data has identity average within-class covariance.
    """
    cov = average_within_class_covariance(X, labels)
    if ridge > 0:
        cov = cov + ridge * np.eye(cov.shape[0])
    try:
        L = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "average within-class covariance is singular; pass ridge > 0"
        ) from exc
    B = solve_triangular(L, np.eye(cov.shape[0]), lower=True).T
    return WccnModel(B)


def apply_wccn(model: WccnModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != model.B.shape[0]:
        raise ValueError("embedding dim does not match the transform")
    return model.B.T @ x


def _scatter_matrices(X: np.ndarray, labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    parts = _class_partition(labels)
    dim = X.shape[0]
    grand_mean = X.mean(axis=1)
    s_within = np.zeros((dim, dim))
    s_between = np.zeros((dim, dim))
    for idx in parts.values():
        cls = X[:, idx]
        mu = cls.mean(axis=1)
        centered = cls - mu[:, None]
        s_within += centered @ centered.T
        diff = mu - grand_mean
        s_between += cls.shape[1] * np.outer(diff, diff)
    return s_between, s_within


def fit_lda(X: np.ndarray, labels: Sequence[str], out_dim: int) -> LdaModel:
    """Supervised projection from the between/within generalized eigenproblem.

    Columns solve S_b w = lambda S_w w, are sorted by descending eigenvalue,
    and are normalized so that W' S_w W = I.
    """
    X = _as_matrix(X)
    parts = _class_partition(labels)
    if len(parts) < 2:
        raise ValueError("need at least 2 classes")
    max_dim = min(X.shape[0], len(parts) - 1)
    if not 1 <= out_dim <= max_dim:
        raise ValueError(
            f"out_dim {out_dim} is not achievable: rank analysis allows at most {max_dim}"
        )
    s_between, s_within = _scatter_matrices(X, labels)
    if np.abs(s_between).max() <= 1e-12 * max(np.abs(s_within).max(), 1.0):
        warnings.warn("between-class scatter is zero; projection directions are arbitrary",
                      RuntimeWarning)
    try:
        eigvals, eigvecs = eigh(s_between, s_within)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "within-class scatter is singular; reduce out_dim or add training data"
        ) from exc
    order = np.argsort(eigvals)[::-1][:out_dim]
    return LdaModel(eigvecs[:, order], eigvals[order])


def apply_lda(model: LdaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != model.projection.shape[0]:
        raise ValueError("embedding dim does not match the projection")
    return model.projection.T @ x


def fit_plda(
    X: np.ndarray,
    labels: Sequence[str],
    latent_dim: int,
    n_iters: int = 20,
) -> PldaModel:
    """EM fit of the two-covariance generative model.

    Observations are mean + V y + noise with y standard normal of dimension
    latent_dim and noise covariance W.  The marginal log-likelihood is recorded
    per iteration and is non-decreasing.  A degenerate W is ridge-regularized
    with a warning.
    """
    X = _as_matrix(X)
    dim, n_total = X.shape
    if not 1 <= latent_dim <= dim:
        raise ValueError(f"latent_dim must be in [1, {dim}]")
    parts = _class_partition(labels)
    if len(labels) != n_total:
        raise ValueError("need one label per column")

    mean = X.mean(axis=1)
    Z = X - mean[:, None]
    per_class = [Z[:, idx] for idx in parts.values()]
    class_sums = [cls.sum(axis=1) for cls in per_class]
    class_sizes = [cls.shape[1] for cls in per_class]
    class_sq = [cls @ cls.T for cls in per_class]
    total_scatter = sum(class_sq)

    # Deterministic init: between-class covariance eigenbasis for V, averaged
    # within-class covariance for W.
    between = np.zeros((dim, dim))
    for s, (m_s, n_s) in enumerate(zip(class_sums, class_sizes)):
        mu = m_s / n_s
        between += np.outer(mu, mu)
    between /= len(per_class)
    evals, evecs = np.linalg.eigh(between)
    order = np.argsort(evals)[::-1][:latent_dim]
    V = evecs[:, order] * np.sqrt(np.maximum(evals[order], 1e-3 * max(evals.max(), 1e-12)))
    W = average_within_class_covariance(X, labels)
    W = _ensure_pd(W)

    history = []
    for _ in range(n_iters):
        w_factor = cho_factor(W, lower=True)
        w_inv_v = cho_solve(w_factor, V)
        vt_winv_v = V.T @ w_inv_v

        r_yy = np.zeros((latent_dim, latent_dim))
        r_my = np.zeros((dim, latent_dim))
        ll = 0.0
        post_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for m_s, n_s, sq in zip(class_sums, class_sizes, class_sq):
            if n_s not in post_cache:
                prec = np.eye(latent_dim) + n_s * vt_winv_v
                p_factor = cho_factor(0.5 * (prec + prec.T), lower=True)
                post_cache[n_s] = (p_factor, cho_solve(p_factor, np.eye(latent_dim)))
            p_factor, p_cov = post_cache[n_s]
            y_hat = cho_solve(p_factor, w_inv_v.T @ m_s)
            r_yy += n_s * (p_cov + np.outer(y_hat, y_hat))
            r_my += np.outer(m_s, y_hat)
            ll += _plda_group_ll(m_s, n_s, sq, V, W, w_factor)
        history.append(ll)

        V = np.linalg.solve(0.5 * (r_yy + r_yy.T), r_my.T).T
        W = (total_scatter - V @ r_my.T) / n_total
        W = _ensure_pd(0.5 * (W + W.T))

    return PldaModel(mean, V, W, em_log_likelihoods=np.asarray(history))


def _ensure_pd(cov: np.ndarray) -> np.ndarray:
    try:
        cholesky(cov, lower=True)
        return cov
    except np.linalg.LinAlgError:
        warnings.warn("degenerate within-class covariance; applying ridge regularization",
                      RuntimeWarning)
        floor = max(np.trace(cov) / cov.shape[0], 1.0) * 1e-8
        lowest = float(np.linalg.eigvalsh(cov).min())
        return cov + (floor + max(0.0, -lowest)) * np.eye(cov.shape[0])


def _gaussian_ll(v: np.ndarray, cov_factor) -> float:
    """Log density at v of a zero-mean Gaussian given its Cholesky factor."""
    L = cov_factor[0]
    half = solve_triangular(L, v, lower=True)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (len(v) * np.log(2.0 * np.pi) + logdet + float(half @ half))


def _plda_group_ll(m_s, n_s, sq, V, W, w_factor) -> float:
    """Marginal log-likelihood of one class's centered observations.

    Decomposes the stacked Gaussian into the scaled class mean, with covariance
    W + n V V', and n-1 within-class contrast directions with covariance W.
    """
    dim = len(m_s)
    mean_cov = W + n_s * (V @ V.T)
    mean_factor = cho_factor(0.5 * (mean_cov + mean_cov.T), lower=True)
    ll = _gaussian_ll(m_s / np.sqrt(n_s), mean_factor)
    if n_s > 1:
        contrast_sq = sq - np.outer(m_s, m_s) / n_s
        tr = float(np.trace(cho_solve(w_factor, contrast_sq)))
        logdet_w = 2.0 * np.log(np.diag(w_factor[0])).sum()
        ll += -0.5 * ((n_s - 1) * (dim * np.log(2.0 * np.pi) + logdet_w) + tr)
    return ll


def plda_score(
    model: PldaModel,
    m1: SpeakerModel | np.ndarray,
    m2: SpeakerModel | np.ndarray,
) -> float:
    """Log-likelihood ratio of the same-speaker vs different-speaker hypotheses.

    Computed in sum/difference coordinates, which makes the score exactly
    symmetric in its arguments.
    """
    u1 = _vector(m1) - model.mean
    u2 = _vector(m2) - model.mean
    if u1.shape != model.mean.shape or u2.shape != model.mean.shape:
        raise ValueError("speaker model dim does not match the PLDA model")
    between = model.between_cov
    total = between + model.W
    s = (u1 + u2) / np.sqrt(2.0)
    d = (u1 - u2) / np.sqrt(2.0)
    f_same_s = cho_factor(total + between, lower=True)
    f_w = cho_factor(model.W, lower=True)
    f_tot = cho_factor(total, lower=True)
    same = _gaussian_ll(s, f_same_s) + _gaussian_ll(d, f_w)
    diff = _gaussian_ll(s, f_tot) + _gaussian_ll(d, f_tot)
    return same - diff


def save_lr(model: LrModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_header(fh, LR_MAGIC, model.A.shape)
        write_f64(fh, np.asarray([model.ridge]))
        write_f64(fh, model.A)


def load_lr(path: str | Path) -> LrModel:
    with open(path, "rb") as fh:
        dim, n_speakers = read_header(fh, LR_MAGIC, 2, "LR file")
        ridge = float(read_f64(fh, 1, "LR ridge")[0])
        A = read_f64(fh, dim * n_speakers, "LR matrix").reshape(dim, n_speakers)
    return LrModel(A, ridge)


def save_wccn(model: WccnModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_header(fh, WCCN_MAGIC, (model.B.shape[0],))
        write_f64(fh, model.B)


def load_wccn(path: str | Path) -> WccnModel:
    with open(path, "rb") as fh:
        (dim,) = read_header(fh, WCCN_MAGIC, 1, "WCCN file")
        B = read_f64(fh, dim * dim, "WCCN matrix").reshape(dim, dim)
    return WccnModel(B)


def save_lda(model: LdaModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_header(fh, LDA_MAGIC, model.projection.shape)
        write_f64(fh, model.projection)
        write_f64(fh, model.eigenvalues)


def load_lda(path: str | Path) -> LdaModel:
    with open(path, "rb") as fh:
        dim, out_dim = read_header(fh, LDA_MAGIC, 2, "LDA file")
        projection = read_f64(fh, dim * out_dim, "LDA projection").reshape(dim, out_dim)
        eigenvalues = read_f64(fh, out_dim, "LDA eigenvalues")
    return LdaModel(projection, eigenvalues)


def save_plda(model: PldaModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_header(fh, PLDA_MAGIC, (model.mean.shape[0], model.V.shape[1]))
        write_f64(fh, model.mean)
        write_f64(fh, model.V)
        write_f64(fh, model.W)


def load_plda(path: str | Path) -> PldaModel:
    with open(path, "rb") as fh:
        dim, latent = read_header(fh, PLDA_MAGIC, 2, "PLDA file")
        mean = read_f64(fh, dim, "PLDA mean")
        V = read_f64(fh, dim * latent, "PLDA basis").reshape(dim, latent)
        W = read_f64(fh, dim * dim, "PLDA covariance").reshape(dim, dim)
    return PldaModel(mean, V, W)
