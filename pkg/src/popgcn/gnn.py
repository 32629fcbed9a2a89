"""Parameter-free graph propagation plus a small feedforward classifier head.

The head is written directly in numpy with explicit backpropagation so that
the 82-node problem trains in milliseconds per epoch and every gradient can
be checked against finite differences.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (CATEGORICAL, Cohort, NumericalError, ParameterError, PopGCNError,
                   QUANTITATIVE, ShapeError)

MODEL_KINDS = ("gnn2", "nn1", "nn2")
PARAMS_MAGIC = "POPGCN-PARAMS"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "gnn2"
    propagation_depth: int = 2
    learning_rate: float = 0.1
    lr_decay_factor: float = 1.0
    lr_decay_period_epochs: int = 25
    dropout_rate: float = 0.1
    epochs: int = 200
    optimizer: str = "sgd"
    folds: int = 10
    seed: int = 0
    hidden: int = 64
    row_normalize: bool = False
    standardize: bool = True
    minibatch_size: int | None = None
    nn1_input: str = "embedding"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError("dropout_rate must lie in [0, 1)")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.folds < 2:
            raise ParameterError("fold count must be >= 2")
        if self.propagation_depth < 0:
            raise ParameterError("propagation_depth must be >= 0")
        if self.lr_decay_period_epochs < 1 or not self.lr_decay_factor > 0:
            raise ParameterError("learning-rate decay needs factor > 0 and period >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.hidden < 1:
            raise ParameterError("hidden width must be >= 1")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ParameterError("minibatch_size must be >= 1")
        if self.nn1_input not in ("embedding", "raw"):
            raise ParameterError("nn1_input must be 'embedding' or 'raw'")

    @property
    def n_layers(self) -> int:
        return 1 if self.kind == "nn1" else 2

    def learning_rate_at(self, epoch: int) -> float:
        """Step-decayed rate: multiplied by the decay factor every period."""
        return self.learning_rate * self.lr_decay_factor ** (epoch // self.lr_decay_period_epochs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def preset(kind: str, **overrides) -> TrainConfig:
    """Experiment presets: GNN at rate 0.1; NNs at 1e-3 decayed x0.1 every 25 epochs."""
    base = {
        "gnn2": dict(learning_rate=0.1, lr_decay_factor=1.0, dropout_rate=0.1),
        "nn1": dict(learning_rate=1e-3, lr_decay_factor=0.1, lr_decay_period_epochs=25,
                    dropout_rate=0.2, propagation_depth=0),
        "nn2": dict(learning_rate=1e-3, lr_decay_factor=0.1, lr_decay_period_epochs=25,
                    dropout_rate=0.1, propagation_depth=0),
    }
    if kind not in base:
        raise ParameterError(f"unknown model kind {kind!r}")
    return TrainConfig(kind=kind, **{**base[kind], **overrides})


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# --- features -------------------------------------------------------------

def propagate(W: np.ndarray, H: np.ndarray, depth: int, row_normalize: bool = False) -> np.ndarray:
    """Apply H <- W H ``depth`` times.

    With ``row_normalize`` each row of W is scaled to sum to 1; all-zero rows
    become identity rows so isolated nodes keep their own features.
    """
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if depth < 0:
        raise ParameterError("depth must be >= 0")
    if W.ndim != 2 or W.shape[0] != W.shape[1] or H.shape[0] != W.shape[1]:
        raise ShapeError(f"cannot propagate features {H.shape} over graph {W.shape}")
    if row_normalize:
        W = row_normalized(W)
    out = H.copy()
    for _ in range(depth):
        out = W @ out
    return out


def row_normalized(W: np.ndarray) -> np.ndarray:
    W = np.array(W, dtype=np.float64, copy=True)
    sums = W.sum(axis=1)
    zero = sums == 0
    W[zero] = 0.0
    W[zero, np.flatnonzero(zero)] = 1.0
    sums[zero] = 1.0
    return W / sums[:, None]


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Z-score each column over all nodes; constant columns become 0."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return np.divide(X - mu, sd, out=np.zeros_like(X), where=sd > 0)


def encode_phenotypes(cohort: Cohort) -> np.ndarray:
    """Quantitative phenotypes min-max scaled by cohort range; categoricals one-hot."""
    cols = []
    for spec in cohort.schema.phenotypes:
        vals = [s.phenotypes.value(spec) for s in cohort.subjects]
        if spec.kind == QUANTITATIVE:
            x = np.asarray(vals, dtype=float)
            span = x.max() - x.min()
            cols.append(((x - x.min()) / span if span > 0 else np.zeros_like(x))[:, None])
        else:
            cats = sorted(set(vals))
            cols.append(np.array([[v == c for c in cats] for v in vals], dtype=float))
    return np.hstack(cols) if cols else np.zeros((len(cohort), 0))


def raw_features(matrices) -> np.ndarray:
    """Upper-triangular correlations, one row per subject."""
    n = matrices[0].shape[0]
    iu = np.triu_indices(n, 1)
    return np.vstack([m[iu] for m in matrices])


# --- classifier head ------------------------------------------------------

@dataclass
class ClassifierParams:
    """Layer weights/biases; one layer for nn1, two (d -> h -> 2) otherwise."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    @classmethod
    def init(cls, d: int, hidden: int, n_layers: int, seed: int) -> "ClassifierParams":
        rng = np.random.default_rng(seed)
        dims = [d, 2] if n_layers == 1 else [d, hidden, 2]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, fan_out))
        return cls(weights, biases, seed)

    @classmethod
    def zeros(cls, d: int, hidden: int, n_layers: int) -> "ClassifierParams":
        dims = [d, 2] if n_layers == 1 else [d, hidden, 2]
        return cls([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                   [np.zeros(b) for b in dims[1:]])

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward(params: ClassifierParams, H: np.ndarray, drop: np.ndarray | None):
    if H.ndim != 2 or H.shape[1] != params.d:
        raise ShapeError(f"features have shape {H.shape}, head expects {params.d} columns")
    if params.n_layers == 1:
        x = H if drop is None else H * drop
        return x @ params.weights[0] + params.biases[0], (x,)
    pre = H @ params.weights[0] + params.biases[0]
    hidden = np.maximum(pre, 0.0)
    if drop is not None:
        hidden = hidden * drop
    return hidden @ params.weights[1] + params.biases[1], (pre, hidden)


def _drop_shape(params: ClassifierParams, n_rows: int) -> tuple[int, int]:
    return (n_rows, params.d) if params.n_layers == 1 else (n_rows, params.weights[0].shape[1])


def forward(params: ClassifierParams, H: np.ndarray, dropout_rate: float = 0.0,
            mode: str = "eval", seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Per-row class logits.

    In train mode units ahead of the output layer (hidden units, or inputs
    for the single-layer head) are dropped with probability ``dropout_rate``.
    """
    H = np.asarray(H, dtype=np.float64)
    if mode not in ("train", "eval"):
        raise ParameterError(f"unknown mode {mode!r}")
    drop = None
    if mode == "train" and dropout_rate > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        drop = dropout_mask(_drop_shape(params, H.shape[0]), dropout_rate, rng)
    return _forward(params, H, drop)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _as_mask(mask, n: int) -> np.ndarray:
    m = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != (n,):
        raise ShapeError(f"mask shape {m.shape} does not match {n} rows")
    if not m.any():
        raise ParameterError("mask selects no rows")
    return m


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray, mask=None) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = _as_mask(mask, logits.shape[0])
    lp = _log_softmax(logits[m])
    return float(-lp[np.arange(lp.shape[0]), labels[m]].mean())


def loss_and_gradients(params: ClassifierParams, H: np.ndarray, labels: np.ndarray, mask=None,
                       drop: np.ndarray | None = None):
    """Mean masked cross-entropy and its exact gradient, ordered like ``params.arrays()``."""
    H = np.asarray(H, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = _as_mask(mask, H.shape[0])
    X, y = H[m], labels[m]
    d_rows = None if drop is None else drop[m]
    logits, cache = _forward(params, X, d_rows)
    lp = _log_softmax(logits)
    n = X.shape[0]
    loss = float(-lp[np.arange(n), y].mean())
    dz = np.exp(lp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if params.n_layers == 1:
        (x,) = cache
        return loss, [x.T @ dz, dz.sum(axis=0)]
    pre, hidden = cache
    gW2 = hidden.T @ dz
    gb2 = dz.sum(axis=0)
    dh = dz @ params.weights[1].T
    if d_rows is not None:
        dh = dh * d_rows
    dpre = dh * (pre > 0)
    return loss, [X.T @ dpre, dpre.sum(axis=0), gW2, gb2]


def gradients(params: ClassifierParams, H: np.ndarray, labels: np.ndarray, mask=None) -> list[np.ndarray]:
    """Gradient of the masked mean cross-entropy with dropout disabled."""
    return loss_and_gradients(params, H, labels, mask)[1]


# --- optimizers -----------------------------------------------------------

class SGD:
    def __init__(self, arrays):
        pass

    def step(self, arrays, grads, lr):
        for a, g in zip(arrays, grads):
            a -= lr * g


class Adam:
    def __init__(self, arrays, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- training -------------------------------------------------------------

@dataclass
class FoldPredictions:
    fold: int
    indices: np.ndarray  # held-out node indices
    predicted: np.ndarray  # 0/1
    scores: np.ndarray  # positive-class probability


@dataclass
class TrainedModel:
    params: ClassifierParams
    config: TrainConfig
    loss_trace: list[float] = field(default_factory=list)
    train_accuracy: float = float("nan")


def head_inputs(H: np.ndarray, W: np.ndarray | None, config: TrainConfig) -> np.ndarray:
    """Features the classifier head sees: propagated for gnn2, raw otherwise."""
    X = np.asarray(H, dtype=np.float64)
    if config.kind == "gnn2":
        if W is None:
            raise ParameterError("gnn2 needs a population graph")
        X = propagate(W, X, config.propagation_depth, config.row_normalize)
    if config.standardize:
        X = standardize_columns(X)
    if not np.all(np.isfinite(X)):
        raise NumericalError("non-finite node features")
    return X


def _batches(train_idx, config: TrainConfig, rng):
    if config.minibatch_size is None:
        return [train_idx]
    perm = rng.permutation(train_idx)
    return [perm[i:i + config.minibatch_size] for i in range(0, len(perm), config.minibatch_size)]


def fit(X: np.ndarray, labels: np.ndarray, train_mask: np.ndarray, config: TrainConfig,
        seed: int, dual: bool | None = None) -> TrainedModel:
    """Train the head on rows selected by ``train_mask``; other labels are never read.

    For plain SGD on the two-layer head the first-layer weights only ever
    move inside the row space of the training features, so they are kept as
    ``W1 = W1_0 + X_train^T A`` and updated through the n x n_train kernel
    ``X X_train^T`` (``dual``, the default for that case). The result equals
    primal SGD up to floating-point rounding.
    """
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.flatnonzero(train_mask)
    if len(train_idx) == 0:
        raise ParameterError("empty training set")
    # held-out labels never enter the computation
    y = np.zeros_like(labels)
    y[train_idx] = labels[train_idx]
    init_seq, drop_seq, batch_seq = np.random.SeedSequence([seed, 0xC1A55]).spawn(3)
    params = ClassifierParams.init(X.shape[1], config.hidden, config.n_layers,
                                   int(init_seq.generate_state(1)[0]))
    drop_rng = np.random.default_rng(drop_seq)
    batch_rng = np.random.default_rng(batch_seq)
    if dual is None:
        dual = config.optimizer == "sgd" and config.n_layers == 2
    if dual and (config.optimizer != "sgd" or config.n_layers != 2):
        raise ParameterError("the dual update only applies to SGD on the two-layer head")
    if dual:
        trace = _fit_dual(params, X, y, train_idx, config, drop_rng, batch_rng)
    else:
        trace = _fit_primal(params, X, y, train_idx, config, drop_rng, batch_rng)
    logits = _forward(params, X[train_idx], None)[0]
    acc = float(np.mean(np.argmax(logits, axis=1) == labels[train_idx]))
    if not all(np.all(np.isfinite(a)) for a in params.arrays()):
        raise NumericalError(f"parameters became non-finite by epoch {config.epochs - 1}")
    return TrainedModel(params, config, trace, acc)


def _fit_primal(params, X, y, train_idx, config, drop_rng, batch_rng) -> list[float]:
    arrays = params.arrays()
    opt = Adam(arrays) if config.optimizer == "adam" else SGD(arrays)
    n = len(y)
    trace = []
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        epoch_loss = 0.0
        for batch in _batches(train_idx, config, batch_rng):
            mask = np.zeros(n, dtype=bool)
            mask[batch] = True
            drop = None
            if config.dropout_rate > 0:
                drop = dropout_mask(_drop_shape(params, n), config.dropout_rate, drop_rng)
            loss, grads = loss_and_gradients(params, X, y, mask, drop)
            if not np.isfinite(loss):
                raise NumericalError(f"loss became non-finite at epoch {epoch}")
            opt.step(arrays, grads, lr)
            epoch_loss += loss * len(batch)
        trace.append(epoch_loss / len(train_idx))
    return trace


def _fit_dual(params, X, y, train_idx, config, drop_rng, batch_rng) -> list[float]:
    n = len(y)
    W1_0, b1, W2, b2 = params.weights[0], params.biases[0], params.weights[1], params.biases[1]
    Xt = X[train_idx]
    K = X[train_idx] @ Xt.T  # n_train x n_train
    P0 = Xt @ W1_0
    A = np.zeros((len(train_idx), W1_0.shape[1]))
    pos = np.full(n, -1, dtype=np.int64)
    pos[train_idx] = np.arange(len(train_idx))
    trace = []
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        epoch_loss = 0.0
        for batch in _batches(train_idx, config, batch_rng):
            rows = pos[batch]
            drop = None
            if config.dropout_rate > 0:
                drop = dropout_mask(_drop_shape(params, n), config.dropout_rate, drop_rng)[batch]
            pre = P0[rows] + K[rows] @ A + b1
            hidden = np.maximum(pre, 0.0)
            if drop is not None:
                hidden = hidden * drop
            lp = _log_softmax(hidden @ W2 + b2)
            m = len(batch)
            yb = y[batch]
            loss = float(-lp[np.arange(m), yb].mean())
            if not np.isfinite(loss):
                raise NumericalError(f"loss became non-finite at epoch {epoch}")
            dz = np.exp(lp)
            dz[np.arange(m), yb] -= 1.0
            dz /= m
            dh = dz @ W2.T
            if drop is not None:
                dh = dh * drop
            dpre = dh * (pre > 0)
            W2 -= lr * (hidden.T @ dz)
            b2 -= lr * dz.sum(axis=0)
            b1 -= lr * dpre.sum(axis=0)
            A[rows] -= lr * dpre
            epoch_loss += loss * m
        trace.append(epoch_loss / len(train_idx))
    params.weights[0] = W1_0 + Xt.T @ A
    return trace


def predict(params: ClassifierParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = softmax(_forward(params, np.asarray(X, dtype=np.float64), None)[0])
    return np.argmax(p, axis=1).astype(np.int64), p[:, 1]


def train_fold(H: np.ndarray, labels: np.ndarray, W: np.ndarray | None, config: TrainConfig,
               held_out, fold: int = 0, seed: int | None = None) -> tuple[TrainedModel, FoldPredictions]:
    """Transductive fold: features see every node, the loss only training nodes."""
    n = H.shape[0]
    held = np.asarray(sorted(held_out), dtype=np.int64)
    if len(held) == 0 or held.min() < 0 or held.max() >= n:
        raise ParameterError("held-out indices out of range")
    train_mask = np.ones(n, dtype=bool)
    train_mask[held] = False
    X = head_inputs(H, W, config)
    model = fit(X, labels, train_mask, config, config.seed if seed is None else seed)
    pred, score = predict(model.params, X[held])
    return model, FoldPredictions(fold, held, pred, score)


def train_baseline(H: np.ndarray, labels: np.ndarray, config: TrainConfig, held_out,
                   fold: int = 0, seed: int | None = None) -> FoldPredictions:
    """Independent-rows baseline (nn1 or nn2); no graph is involved."""
    if config.kind not in ("nn1", "nn2"):
        raise ParameterError("baselines are nn1 or nn2")
    return train_fold(H, labels, None, config, held_out, fold, seed)[1]


# --- persistence ----------------------------------------------------------

def save_params(path: str | Path, model: TrainedModel) -> Path:
    """Versioned .npz blob carrying the config and its hash."""
    path = Path(path)
    cfg = model.config.to_dict()
    header = json.dumps({"magic": PARAMS_MAGIC, "version": PARAMS_VERSION,
                         "config": cfg, "config_hash": config_hash(cfg),
                         "seed": model.params.seed}, sort_keys=True)
    arrays = {f"a{i}": a for i, a in enumerate(model.params.arrays())}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)
    return path


def load_params(path: str | Path) -> TrainedModel:
    with np.load(Path(path)) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("magic") != PARAMS_MAGIC:
            raise PopGCNError(f"{path}: not a parameter blob")
        if header.get("version") != PARAMS_VERSION:
            raise PopGCNError(f"{path}: unsupported version {header.get('version')}")
        if config_hash(header["config"]) != header["config_hash"]:
            raise PopGCNError(f"{path}: config hash mismatch")
        arrays = [z[f"a{i}"] for i in range(len(z.files) - 1)]
    config = TrainConfig(**header["config"])
    params = ClassifierParams(arrays[0::2], arrays[1::2], header["seed"])
    return TrainedModel(params, config)
