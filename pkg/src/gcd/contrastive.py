"""Unsupervised and supervised contrastive losses with exact gradients.

Batches hold two views per image stacked as ``[view_1; view_2]``, so row
``i`` is paired with row ``(i + B) % 2B``.  For anchor ``i`` every other row
is in the softmax denominator; the unsupervised positive is the partner
view, and the supervised positives are all other rows that share the
anchor's label (the partner view included).

A small MLP projection head with analytic backpropagation and a plain
gradient-descent trainer let the whole pipeline run on synthetic features.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import GcdDataset, check_features
from .exceptions import (
    EmptySupervisionError,
    InvalidConfigError,
    InvalidInputError,
    NumericalOverflowError,
    TrainingDivergedError,
)


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1
    lam: float = 0.35
    normalize: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidConfigError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class ViewBatch:
    """Embeddings of ``B`` images under two views, rows ``[view_1; view_2]``.

    ``labels`` and ``labelled_mask`` are per image (length ``B``).
    """

    z: np.ndarray
    labels: np.ndarray
    labelled_mask: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 2:
            raise InvalidInputError("z must have an even, non-zero number of rows")
        b = z.shape[0] // 2
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        mask = np.asarray(self.labelled_mask, dtype=bool).reshape(-1)
        if labels.shape != (b,) or mask.shape != (b,):
            raise InvalidInputError(f"labels and labelled_mask need {b} entries (one per image)")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "labelled_mask", mask)

    @classmethod
    def from_views(cls, z1, z2, labels=None, labelled_mask=None) -> "ViewBatch":
        z1 = np.asarray(z1, dtype=np.float64)
        b = z1.shape[0]
        if labels is None:
            labels = np.full(b, -1)
        if labelled_mask is None:
            labelled_mask = np.asarray(labels) >= 0
        return cls(np.vstack([z1, z2]), labels, labelled_mask)

    @property
    def n_images(self) -> int:
        return self.z.shape[0] // 2

    @property
    def partner(self) -> np.ndarray:
        n = self.z.shape[0]
        return (np.arange(n) + n // 2) % n

    @property
    def row_labels(self) -> np.ndarray:
        return np.tile(np.where(self.labelled_mask, self.labels, -1), 2)

    @property
    def row_mask(self) -> np.ndarray:
        return np.tile(self.labelled_mask, 2)


def _log_softmax_rows(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-softmax over off-diagonal entries, max-subtracted.

    Returns ``(log_p, p)`` with the diagonal of ``p`` set to zero.
    """
    n = S.shape[0]
    off = ~np.eye(n, dtype=bool)
    masked = np.where(off, S, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.where(off, np.exp(masked - m), 0.0)
    lse = m + np.log(e.sum(axis=1, keepdims=True))
    log_p = S - lse
    p = np.where(off, np.exp(np.where(off, log_p, 0.0)), 0.0)
    return log_p, p


def _positives(batch: ViewBatch) -> np.ndarray:
    lab = batch.row_labels
    n = lab.size
    pos = (lab[:, None] == lab[None, :]) & (lab[:, None] >= 0)
    pos[np.arange(n), batch.partner] = True
    np.fill_diagonal(pos, False)
    return pos


def _terms(batch: ViewBatch, config: ContrastiveConfig):
    S = batch.z @ batch.z.T / config.tau
    log_p, p = _log_softmax_rows(S)
    n = S.shape[0]
    lu = -log_p[np.arange(n), batch.partner]
    pos = _positives(batch)
    n_pos = pos.sum(axis=1)
    anchors = batch.row_mask & (n_pos > 0)
    ls = np.zeros(n)
    if anchors.any():
        ls[anchors] = -(np.where(pos, log_p, 0.0).sum(axis=1)[anchors] / n_pos[anchors])
    return lu, ls, anchors, p, pos, n_pos


def unsup_loss(batch: ViewBatch, config: ContrastiveConfig) -> tuple[float, np.ndarray]:
    """Mean over all ``2B`` anchors of ``-log softmax(z_i . z_n / tau)[partner]``."""
    lu, *_ = _terms(batch, config)
    return float(lu.mean()), lu


def sup_loss(batch: ViewBatch, config: ContrastiveConfig) -> tuple[float, np.ndarray]:
    """Supervised term averaged over labelled anchors.

    Per-anchor values are zero for unlabelled rows.
    """
    if not batch.labelled_mask.any():
        raise EmptySupervisionError("batch has no labelled anchors")
    _, ls, anchors, *_ = _terms(batch, config)
    return float(ls[batch.row_mask].mean()), ls


def _weights(n_anchor_u, n_anchor_s, config, reduction):
    lam = config.lam
    if reduction == "sum":
        return 1.0 - lam, lam
    if reduction == "mean":
        return (1.0 - lam) / n_anchor_u, (lam / n_anchor_s if n_anchor_s else 0.0)
    raise InvalidConfigError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def total_loss(batch: ViewBatch, config: ContrastiveConfig, reduction: str = "sum") -> float:
    """``(1 - lam) * sum_u + lam * sum_s``; ``reduction='mean'`` averages each part instead."""
    lu, ls, _, _, _, _ = _terms(batch, config)
    wu, ws = _weights(lu.size, int(batch.row_mask.sum()), config, reduction)
    return float(wu * lu.sum() + ws * ls.sum())


def loss_and_grad_z(batch: ViewBatch, config: ContrastiveConfig, reduction: str = "sum"):
    """Total loss and its gradient with respect to the rows of ``batch.z``."""
    lu, ls, anchors, p, pos, n_pos = _terms(batch, config)
    n = lu.size
    wu, ws = _weights(n, int(batch.row_mask.sum()), config, reduction)
    target_u = np.zeros((n, n))
    target_u[np.arange(n), batch.partner] = 1.0
    G = wu * (p - target_u)
    if ws and anchors.any():
        G[anchors] += ws * (p[anchors] - pos[anchors] / n_pos[anchors, None])
    grad = (G + G.T) @ batch.z / config.tau
    loss = float(wu * lu.sum() + ws * ls.sum())
    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalOverflowError("non-finite loss or gradient")
    return loss, grad


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(a):
    t = np.tanh(_GELU_C * (a + 0.044715 * a ** 3))
    return 0.5 * a * (1.0 + t), t


def _gelu_grad(a, t):
    return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t ** 2) * _GELU_C * (1.0 + 3 * 0.044715 * a ** 2)


@dataclass
class ProjectionHead:
    """Two-layer GELU perceptron ``D -> hidden -> P``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    normalize: bool = True

    @classmethod
    def init(cls, in_dim: int, hidden: int = 2048, out_dim: int = 128, normalize=True,
             seed=0) -> "ProjectionHead":
        rng = np.random.default_rng(seed)
        return cls(w1=rng.standard_normal((in_dim, hidden)) / math.sqrt(in_dim),
                   b1=np.zeros(hidden),
                   w2=rng.standard_normal((hidden, out_dim)) / math.sqrt(hidden),
                   b2=np.zeros(out_dim), normalize=normalize)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_params(self, theta) -> "ProjectionHead":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(f"expected {self.n_params} parameters, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("parameters must be finite")
        out, pos = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(theta[pos:pos + size].reshape(s).copy())
            pos += size
        self.w1, self.b1, self.w2, self.b2 = out
        return self

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
                              self.normalize)

    def _forward(self, X):
        a = X @ self.w1 + self.b1
        h, t = _gelu(a)
        out = h @ self.w2 + self.b2
        if self.normalize:
            norm = np.linalg.norm(out, axis=1, keepdims=True)
            z = out / norm
        else:
            norm, z = None, out
        return z, (X, a, h, t, norm)

    def forward(self, X) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=np.float64))[0]

    def embed(self, X, layer: str = "hidden") -> np.ndarray:
        """Representation used for clustering.

        ``"hidden"`` is the GELU layer that feeds the projection (the
        projection only serves the loss, as with a discarded contrastive
        head); ``"projection"`` is the head output.
        """
        if layer == "projection":
            return self.forward(X)
        if layer != "hidden":
            raise InvalidConfigError(f"layer must be 'hidden' or 'projection', got {layer!r}")
        return _gelu(np.asarray(X, dtype=np.float64) @ self.w1 + self.b1)[0]

    def backward(self, cache, z, grad_z) -> np.ndarray:
        X, a, h, t, norm = cache
        g = grad_z
        if self.normalize:
            # Jacobian of z = o / |o| is (I - z z^T) / |o|
            g = (g - z * np.einsum("ij,ij->i", z, g)[:, None]) / norm
        gw2 = h.T @ g
        gb2 = g.sum(axis=0)
        ga = (g @ self.w2.T) * _gelu_grad(a, t)
        gw1 = X.T @ ga
        gb1 = ga.sum(axis=0)
        return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def grad_total_loss(head: ProjectionHead, inputs, labels, labelled_mask,
                    config: ContrastiveConfig, reduction: str = "sum"):
    """Loss and exact gradient over the head parameters.

    ``inputs`` are the ``2B`` view features stacked ``[view_1; view_2]``;
    ``labels``/``labelled_mask`` are per image.  Returns
    ``(loss, grad_params, grad_z)``.
    """
    X = np.asarray(inputs, dtype=np.float64)
    z, cache = head._forward(X)
    batch = ViewBatch(z, labels, labelled_mask)
    loss, gz = loss_and_grad_z(batch, config, reduction)
    return loss, head.backward(cache, z, gz), gz


def central_difference(fun, theta, step=1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        orig = theta[j]
        theta[j] = orig + step
        fp = fun(theta)
        theta[j] = orig - step
        fm = fun(theta)
        theta[j] = orig
        grad[j] = (fp - fm) / (2.0 * step)
    return grad


def max_relative_error(analytic, numeric) -> float:
    """Largest componentwise gap, relative to the larger gradient's max magnitude."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / max(total, 1)))


@dataclass
class TrainResult:
    head: ProjectionHead
    loss_curve: list[float] = field(default_factory=list)


def train_toy(dataset: GcdDataset, head: ProjectionHead, config: ContrastiveConfig,
              epochs: int = 20, lr: float = 0.1, batch_size: int = 128,
              noise_scale: float = 0.05, schedule: str = "cosine", seed=0) -> TrainResult:
    """Mini-batch gradient descent on the batch-mean total loss.

    The two views of a feature vector are that vector plus independent
    Gaussian noise with standard deviation ``noise_scale * std(features)``.
    The returned curve holds the mean batch loss of each epoch; the input
    head is left untouched.
    """
    X = dataset.features
    if len(dataset.y_l) < 2:
        raise InvalidInputError("toy training needs at least two labelled classes")
    if X.shape[1] != head.w1.shape[0]:
        raise InvalidInputError("head input width does not match the features")
    if schedule not in ("cosine", "constant"):
        raise InvalidConfigError(f"unknown schedule {schedule!r}")
    head = replace(head.copy(), normalize=config.normalize)
    rng = np.random.default_rng(seed)
    sigma = noise_scale * float(X.std())
    labels = dataset.labels
    mask = dataset.labelled_mask
    n = X.shape[0]
    n_batches = max(1, math.ceil(n / batch_size))
    total_steps = epochs * n_batches
    theta = head.get_params()
    curve = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            if idx.size < 2:
                continue
            xb = X[idx]
            views = np.vstack([xb + sigma * rng.standard_normal(xb.shape),
                               xb + sigma * rng.standard_normal(xb.shape)])
            loss, g, _ = grad_total_loss(head, views, labels[idx], mask[idx], config, "mean")
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} at step {step}")
            eta = cosine_lr(lr, step, total_steps) if schedule == "cosine" else lr
            if eta != 0.0:
                theta = theta - eta * g
                if not np.all(np.isfinite(theta)):
                    raise TrainingDivergedError(f"parameters became non-finite at step {step}")
                head.set_params(theta)
            losses.append(loss)
            step += 1
        curve.append(float(np.mean(losses)))
    return TrainResult(head=head, loss_curve=curve)


class ContrastiveProjector(TransformerMixin, BaseEstimator):
    """Fit a projection head contrastively; ``transform`` returns its embeddings.

    ``y`` uses ``-1`` for unlabelled rows.  ``embed_layer`` selects the hidden
    layer (default) or the projection output.
    """

    def __init__(self, hidden=2048, out_dim=128, tau=0.1, lam=0.35, normalize=True,
                 epochs=20, lr=0.1, batch_size=128, noise_scale=0.05, embed_layer="hidden",
                 random_state=0):
        self.hidden = hidden
        self.embed_layer = embed_layer
        self.out_dim = out_dim
        self.tau = tau
        self.lam = lam
        self.normalize = normalize
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.noise_scale = noise_scale
        self.random_state = random_state

    def fit(self, X, y):
        ds = GcdDataset.from_partial_labels(X, y)
        seeds = np.random.SeedSequence(self.random_state).spawn(2)
        head = ProjectionHead.init(ds.features.shape[1], self.hidden, self.out_dim,
                                   self.normalize, seed=seeds[0])
        cfg = ContrastiveConfig(self.tau, self.lam, self.normalize)
        res = train_toy(ds, head, cfg, epochs=self.epochs, lr=self.lr,
                        batch_size=self.batch_size, noise_scale=self.noise_scale, seed=seeds[1])
        self.head_ = res.head
        self.loss_curve_ = res.loss_curve
        self.n_features_in_ = ds.features.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "head_")
        return self.head_.embed(check_features(X), self.embed_layer)
