"""Frame-level speaker classifier and utterance embeddings from its top hidden layer.

A small feed-forward net with rectified-linear hidden layers and a softmax
output is trained to classify context-stacked frames by speaker.  The
utterance embedding is the average of the final hidden layer's activations
over the utterance; the softmax outputs double as a frame-posterior source for
posterior-driven UBM estimation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .binio import read_f64, read_header, write_f64, write_header
from .data import FrameMatrix, stack_context
from .gmm import PosteriorMatrix

MLP_MAGIC = b"SVN1"


@dataclass(frozen=True)
class MlpConfig:
    """Training hyperparameters for the frame classifier."""

    hidden_dims: tuple[int, ...] = (400, 400, 400, 400)
    learning_rate: float = 0.008
    batch_size: int = 512
    n_epochs: int = 50
    dropout: float = 0.2
    momentum: float = 0.5
    momentum_final: float = 0.9
    momentum_switch_epoch: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.hidden_dims or any(d < 1 for d in self.hidden_dims):
            raise ValueError("hidden_dims must be nonempty positive widths")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.n_epochs < 0:
            raise ValueError("bad optimizer settings")


@dataclass
class Mlp:
    """Feed-forward net: ReLU hidden layers followed by a softmax output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    classes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ValueError("need at least one hidden layer and one output layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight/bias shapes disagree")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input width does not chain from layer {i - 1}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-2].shape[1]


@dataclass(frozen=True)
class DVector:
    """Averaged top-hidden-layer activations of one utterance."""

    x: np.ndarray
    utterance_id: str = ""

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1 or not np.isfinite(x).all():
            raise ValueError("embedding must be a finite vector")
        object.__setattr__(self, "x", x)


def init_mlp(input_dim: int, hidden_dims: Sequence[int], n_outputs: int, seed: int = 0,
             classes: tuple[str, ...] = ()) -> Mlp:
    """He-scaled Gaussian initialization, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_dims, n_outputs]
    weights = [rng.standard_normal((dims[i], dims[i + 1])) * np.sqrt(2.0 / dims[i])
               for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return Mlp(weights, biases, classes)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(mlp: Mlp, stacked: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Run the net on one stacked frame or a matrix of them (dropout disabled).

    Returns the per-hidden-layer activations and the softmax posteriors, with
    the same leading shape as the input.
    """
    x = np.asarray(stacked, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != mlp.input_dim:
        raise ValueError(f"input width {a.shape[1]} does not match net input {mlp.input_dim}")
    hiddens = []
    for w, b in zip(mlp.weights[:-1], mlp.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        hiddens.append(a)
    post = _softmax(a @ mlp.weights[-1] + mlp.biases[-1])
    if single:
        return [h[0] for h in hiddens], post[0]
    return hiddens, post


def loss_and_gradients(
    mlp: Mlp,
    inputs: np.ndarray,
    labels: np.ndarray,
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy and its gradients for a batch.

    dropout_masks, when given, are inverted-dropout multipliers applied to the
    hidden activations (already scaled by 1/keep), one per hidden layer.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(labels)
    batch = x.shape[0]

    activations = [x]
    a = x
    for i, (w, b) in enumerate(zip(mlp.weights[:-1], mlp.biases[:-1])):
        a = np.maximum(a @ w + b, 0.0)
        if dropout_masks is not None:
            a = a * dropout_masks[i]
        activations.append(a)
    logits = a @ mlp.weights[-1] + mlp.biases[-1]

    log_norm = logsumexp(logits, axis=1)
    loss = float((log_norm - logits[np.arange(batch), y]).mean())

    delta = np.exp(logits - log_norm[:, None])
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grad_w = [np.empty_like(w) for w in mlp.weights]
    grad_b = [np.empty_like(b) for b in mlp.biases]
    for i in range(len(mlp.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ mlp.weights[i].T
            if dropout_masks is not None:
                delta = delta * dropout_masks[i - 1]
            delta = delta * (activations[i] > 0.0)
    return loss, grad_w, grad_b


def train_mlp(
    utterances: Sequence[FrameMatrix],
    speakers: Sequence[str],
    half_window: int,
    config: MlpConfig,
) -> Mlp:
    """Train the frame classifier with SGD, momentum, and inverted dropout.

    Frames are context-stacked, labeled with their utterance's speaker, and
    shuffled each epoch from a seeded stream, so training is deterministic.
    """
    if len(utterances) != len(speakers):
        raise ValueError("need one speaker label per utterance")
    classes = tuple(sorted(set(speakers)))
    if len(classes) < 2:
        raise ValueError("need at least 2 speakers")
    class_index = {c: i for i, c in enumerate(classes)}
    x = np.vstack([stack_context(u, half_window).frames for u in utterances])
    y = np.concatenate([
        np.full(u.n_frames, class_index[s], dtype=np.int64)
        for u, s in zip(utterances, speakers)
    ])

    rng = np.random.default_rng(config.seed)
    mlp = init_mlp(x.shape[1], config.hidden_dims, len(classes),
                   seed=rng.integers(2**63), classes=classes)
    vel_w = [np.zeros_like(w) for w in mlp.weights]
    vel_b = [np.zeros_like(b) for b in mlp.biases]
    keep = 1.0 - config.dropout

    for epoch in range(config.n_epochs):
        momentum = config.momentum if epoch < config.momentum_switch_epoch else config.momentum_final
        order = rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            batch = order[start : start + config.batch_size]
            masks = None
            if config.dropout > 0.0:
                masks = [
                    (rng.random((len(batch), w.shape[1])) < keep) / keep
                    for w in mlp.weights[:-1]
                ]
            _, grad_w, grad_b = loss_and_gradients(mlp, x[batch], y[batch], masks)
            for i in range(len(mlp.weights)):
                vel_w[i] = momentum * vel_w[i] - config.learning_rate * grad_w[i]
                vel_b[i] = momentum * vel_b[i] - config.learning_rate * grad_b[i]
                mlp.weights[i] = mlp.weights[i] + vel_w[i]
                mlp.biases[i] = mlp.biases[i] + vel_b[i]
    return mlp


def extract_dvector(mlp: Mlp, frames: FrameMatrix, half_window: int) -> DVector:
    """Average the top hidden layer's activations over the utterance."""
    stacked = stack_context(frames, half_window).frames
    hiddens, _ = forward(mlp, stacked)
    return DVector(hiddens[-1].mean(axis=0), frames.utterance_id)


def frame_posteriors(mlp: Mlp, frames: FrameMatrix, half_window: int) -> PosteriorMatrix:
    """Softmax outputs per frame, usable as alignments for UBM estimation."""
    stacked = stack_context(frames, half_window).frames
    _, post = forward(mlp, stacked)
    return PosteriorMatrix(post)


def save_mlp(mlp: Mlp, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_header(fh, MLP_MAGIC, (len(mlp.weights),))
        for w in mlp.weights:
            write_header(fh, b"", w.shape)
        for w, b in zip(mlp.weights, mlp.biases):
            write_f64(fh, w)
            write_f64(fh, b)
        names = "\n".join(mlp.classes).encode("utf-8")
        fh.write(len(names).to_bytes(4, "little"))
        fh.write(names)


def load_mlp(path: str | Path) -> Mlp:
    with open(path, "rb") as fh:
        (n_layers,) = read_header(fh, MLP_MAGIC, 1, "net file")
        shapes = [read_header(fh, b"", 2, "net layer dims") for _ in range(n_layers)]
        weights = []
        biases = []
        for d_in, d_out in shapes:
            weights.append(read_f64(fh, d_in * d_out, "net weights").reshape(d_in, d_out))
            biases.append(read_f64(fh, d_out, "net biases"))
        n_bytes = int.from_bytes(fh.read(4), "little")
        raw = fh.read(n_bytes).decode("utf-8")
        classes = tuple(raw.split("\n")) if raw else ()
    return Mlp(weights, biases, classes)
