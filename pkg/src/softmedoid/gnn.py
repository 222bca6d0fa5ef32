"""Two-layer message-passing network with pluggable aggregation.

The forward pass transforms features with a per-layer weight matrix,
aggregates the transformed embeddings of each node's neighborhood using
the configured estimator with the message-matrix row as weights, and
applies ReLU after the first layer. Forward and backward are written in
plain numpy so every gradient is explicit and testable.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .aggregate import AggregatorConfig, aggregate, aggregate_backward

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDivergence(RuntimeError):
    """Raised when the training loss turns non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 3000
    patience: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")


@dataclass
class GnnModel:
    W1: np.ndarray
    W2: np.ndarray
    aggregators: tuple[AggregatorConfig, AggregatorConfig]
    message_source: str = "gcn"
    gdc_alpha: float = 0.15
    gdc_k: int = 64

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2 or self.W1.shape[1] != self.W2.shape[0]:
            raise ValueError("weight matrices must chain: (d, h) then (h, C)")
        if len(self.aggregators) != 2:
            raise ValueError("one aggregator config per layer")

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def classes(self) -> int:
        return self.W2.shape[1]

    def copy(self) -> "GnnModel":
        return dataclasses.replace(self, W1=self.W1.copy(), W2=self.W2.copy())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(feature_dim: int, hidden: int, classes: int,
               aggregator: AggregatorConfig | tuple[AggregatorConfig, AggregatorConfig],
               seed: int = 0, message_source: str = "gcn",
               gdc_alpha: float = 0.15, gdc_k: int = 64) -> GnnModel:
    """Glorot-initialized two-layer model; a single aggregator is used for both layers."""
    rng = np.random.default_rng(seed)
    if isinstance(aggregator, AggregatorConfig):
        aggregators = (aggregator, aggregator)
    else:
        aggregators = tuple(aggregator)
    return GnnModel(
        W1=glorot(rng, feature_dim, hidden),
        W2=glorot(rng, hidden, classes),
        aggregators=aggregators,
        message_source=message_source,
        gdc_alpha=gdc_alpha,
        gdc_k=gdc_k,
    )


def forward(model: GnnModel, A, X: np.ndarray, need_cache: bool = False):
    """Logits for every node; optionally the caches for the backward pass.

    The cache-free path routes the soft-medoid aggregation through the
    compiled kernel when it is available.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.W1.shape[0]:
        raise ValueError(f"feature dim {X.shape[1]} does not match W1 {model.W1.shape}")
    if not need_cache:
        Z1 = X @ model.W1
        M1 = _fast_aggregate(A, Z1, model.aggregators[0])
        H = np.maximum(M1, 0.0)
        Z2 = H @ model.W2
        return _fast_aggregate(A, Z2, model.aggregators[1])
    Z1 = X @ model.W1
    M1, cache1 = aggregate(A, Z1, model.aggregators[0], need_cache=True)
    H = np.maximum(M1, 0.0)
    Z2 = H @ model.W2
    logits, cache2 = aggregate(A, Z2, model.aggregators[1], need_cache=True)
    cache = {"X": X, "M1": M1, "H": H, "agg1": cache1, "agg2": cache2}
    return logits, cache


def _fast_aggregate(A, Z, cfg: AggregatorConfig):
    if cfg.kind == "weighted_sum":
        return A @ Z
    if cfg.kind == "soft_medoid":
        return kernels.csr_wsm_forward(Z, A, cfg.T, cfg.k)
    if cfg.kind == "medoid":
        return kernels.csr_wsm_forward(Z, A, 0.0, cfg.k)
    return aggregate(A, Z, cfg)


def backward(model: GnnModel, cache: dict, label_grads: np.ndarray):
    """Exact parameter gradients given the upstream gradient on the logits."""
    d_z2 = aggregate_backward(cache["agg2"], np.asarray(label_grads, dtype=np.float64))
    g_w2 = cache["H"].T @ d_z2
    d_h = d_z2 @ model.W2.T
    d_m1 = d_h * (cache["M1"] > 0)
    d_z1 = aggregate_backward(cache["agg1"], d_m1)
    g_w1 = cache["X"].T @ d_z1
    return g_w1, g_w2


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, idx: np.ndarray):
    """Mean cross-entropy over ``idx`` plus its gradient w.r.t. all logits."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("index set must be non-empty")
    z = logits[idx]
    with np.errstate(invalid="ignore"):  # non-finite logits surface as NaN loss
        z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    y = labels[idx]
    logprob = z[np.arange(len(idx)), y] - np.log(e.sum(axis=1))
    loss = float(-logprob.mean())
    grad = np.zeros_like(logits)
    delta = probs
    delta[np.arange(len(idx)), y] -= 1.0
    grad[idx] = delta / len(idx)
    return loss, grad


def loss_and_grads(model: GnnModel, A, X, labels, idx, weight_decay: float = 0.0):
    """Cross-entropy (+ L2 penalty) and its exact parameter gradients."""
    logits, cache = forward(model, A, X, need_cache=True)
    loss, dlogits = softmax_cross_entropy(logits, labels, idx)
    g_w1, g_w2 = backward(model, cache, dlogits)
    if weight_decay:
        loss += 0.5 * weight_decay * (np.sum(model.W1 ** 2) + np.sum(model.W2 ** 2))
        g_w1 = g_w1 + weight_decay * model.W1
        g_w2 = g_w2 + weight_decay * model.W2
    return loss, (g_w1, g_w2)


def predict_accuracy(model: GnnModel, A, X, labels, index_set) -> float:
    """Fraction of correct argmax predictions over the index set."""
    index_set = np.asarray(index_set, dtype=np.int64)
    if index_set.size == 0:
        raise ValueError("index set must be non-empty")
    logits = forward(model, A, X)
    pred = np.argmax(logits[index_set], axis=1)  # ties resolve to the smaller class
    return float(np.mean(pred == np.asarray(labels)[index_set]))


def train(model: GnnModel, graph, A, split, cfg: TrainConfig):
    """Full-batch gradient descent with weight decay and early stopping.

    Tracks the best validation loss; when it fails to improve for
    ``patience`` epochs, training stops and the parameters from the best
    epoch are returned. The history records one entry per epoch.
    """
    model = model.copy()
    X, labels = graph.features, graph.labels
    best_val = np.inf
    best_epoch = -1
    best_params = (model.W1.copy(), model.W2.copy())
    history = []
    for epoch in range(cfg.max_epochs):
        logits, cache = forward(model, A, X, need_cache=True)
        train_loss, dlogits = softmax_cross_entropy(logits, labels, split.train)
        val_loss, _ = softmax_cross_entropy(logits, labels, split.val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergence(epoch)
        val_pred = np.argmax(logits[split.val], axis=1)
        val_acc = float(np.mean(val_pred == labels[split.val]))
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "val_acc": val_acc})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = (model.W1.copy(), model.W2.copy())
        elif epoch - best_epoch >= cfg.patience:
            break
        g_w1, g_w2 = backward(model, cache, dlogits)
        model.W1 -= cfg.lr * (g_w1 + cfg.weight_decay * model.W1)
        model.W2 -= cfg.lr * (g_w2 + cfg.weight_decay * model.W2)
    model.W1, model.W2 = best_params
    return model, history


def _aggregator_to_dict(cfg: AggregatorConfig) -> dict:
    return {"kind": cfg.kind, "T": cfg.T, "k": cfg.k}


def save_checkpoint(model: GnnModel, prefix: str) -> None:
    """Write ``prefix.npz`` (weights) and ``prefix.json`` (configuration)."""
    np.savez(f"{prefix}.npz", W1=model.W1, W2=model.W2,
             format_version=np.int64(CHECKPOINT_FORMAT_VERSION))
    config = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "aggregators": [_aggregator_to_dict(c) for c in model.aggregators],
        "message_source": model.message_source,
        "gdc_alpha": model.gdc_alpha,
        "gdc_k": model.gdc_k,
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(prefix: str) -> GnnModel:
    data = np.load(f"{prefix}.npz")
    version = int(data["format_version"])
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    with open(f"{prefix}.json") as fh:
        config = json.load(fh)
    aggregators = tuple(AggregatorConfig(**c) for c in config["aggregators"])
    return GnnModel(W1=data["W1"], W2=data["W2"], aggregators=aggregators,
                    message_source=config["message_source"],
                    gdc_alpha=config["gdc_alpha"], gdc_k=config["gdc_k"])
