"""Feed-forward classifier with a tropical embedding top layer, in plain numpy.

The tropical top computes, for each class row w_j,

    distance_j(h) = max_i(h_i + w_ji) - min_i(h_i + w_ji)

and classifies with a softmin over the distances.  Every routine works on a
batch ``X`` of shape (n, D); single vectors are promoted.  Scores are
``Z = -distances`` for the tropical top and the plain logits for the linear
top, so ``probs = softmax(Z)`` in both cases.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    EmptyDataset,
    IoError,
    ModelVersionError,
    ShapeError,
    Truncated,
)

log = logging.getLogger(__name__)

MODEL_FORMAT = "tropical-cw-model"
MODEL_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "identity")
TOPS = ("tropical", "linear")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"


@dataclass
class TropicalNet:
    layers: list[Layer]
    top_weight: np.ndarray  # (K, m)
    top_bias: Optional[np.ndarray] = None  # linear top only
    top: str = "tropical"

    def __post_init__(self):
        if self.top not in TOPS:
            raise ValueError(f"top must be one of {TOPS}, got {self.top!r}")
        prev = self.input_dim
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.weight.shape[1] != prev or layer.bias.shape != (layer.weight.shape[0],):
                raise ShapeError(f"ShapeError: layer shapes do not compose at {layer.weight.shape}")
            prev = layer.weight.shape[0]
        if self.top_weight.shape[1] != prev:
            raise ShapeError(f"ShapeError: top layer expects {self.top_weight.shape[1]} inputs, base gives {prev}")
        if self.top == "tropical":
            self.top_weight = self.top_weight - self.top_weight[:, -1:]
        elif self.top_bias is None:
            self.top_bias = np.zeros(self.class_count)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1] if self.layers else self.top_weight.shape[1]

    @property
    def class_count(self) -> int:
        return self.top_weight.shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Every trainable array, in a fixed order (views, so in-place updates stick)."""
        params = []
        for layer in self.layers:
            params += [layer.weight, layer.bias]
        params.append(self.top_weight)
        if self.top == "linear":
            params.append(self.top_bias)
        return params

    def copy(self) -> "TropicalNet":
        layers = [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        bias = None if self.top_bias is None else self.top_bias.copy()
        return TropicalNet(layers, self.top_weight.copy(), bias, self.top)


def init_net(
    input_dim: int,
    class_count: int,
    hidden: tuple[int, ...] = (64,),
    top: str = "tropical",
    activation: str = "relu",
    seed: int = 0,
) -> TropicalNet:
    """He-initialised MLP base with the requested top layer."""
    rng = np.random.default_rng(seed)
    layers = []
    prev = input_dim
    for width in hidden:
        w = rng.standard_normal((width, prev)) * math.sqrt(2.0 / prev)
        layers.append(Layer(w, np.zeros(width), activation))
        prev = width
    top_w = rng.standard_normal((class_count, prev)) * math.sqrt(1.0 / prev)
    return TropicalNet(layers, top_w, None, top)


# -- forward / backward ----------------------------------------------------------------


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    return a


def _act_grad(name: str, a: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (a > 0).astype(float)
    if name == "tanh":
        return 1.0 - out**2
    return np.ones_like(a)


def _as_batch(net: TropicalNet, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"ShapeError: expected inputs of dimension {net.input_dim}, got shape {np.shape(x)}")
    return X, single


def _softmax(Z: np.ndarray) -> np.ndarray:
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Trace:
    """Intermediate values of a forward pass, kept for backpropagation."""

    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    shifted: Optional[np.ndarray]  # h + w_j, (n, K, m), tropical top only
    tau: Optional[np.ndarray]  # per-row threshold when smoothed distances are used
    scores: np.ndarray
    centered: bool = False
    rowwise: bool = False

    @property
    def base_out(self) -> np.ndarray:
        return self.post[-1] if self.post else self.inputs


def _times_t(A: np.ndarray, W: np.ndarray, rowwise: bool) -> np.ndarray:
    """A @ W.T; the rowwise form sums each row in a fixed order, so a row's
    result does not depend on which other rows share the batch."""
    if rowwise:
        return (A[:, None, :] * W[None, :, :]).sum(axis=2)
    return A @ W.T


def _times(A: np.ndarray, W: np.ndarray, rowwise: bool) -> np.ndarray:
    if rowwise:
        return (A[:, :, None] * W[None, :, :]).sum(axis=1)
    return A @ W


def base_forward(net: TropicalNet, X: np.ndarray, rowwise: bool = False) -> tuple[list, list]:
    pre, post = [], []
    h = X
    for layer in net.layers:
        a = _times_t(h, layer.weight, rowwise) + layer.bias
        h = _act(layer.activation, a)
        pre.append(a)
        post.append(h)
    return pre, post


def trace(net: TropicalNet, x, tau=None, center: bool = True, rowwise: bool = False) -> Trace:
    """Forward pass.

    With ``tau`` (one threshold per row) each tropical distance is replaced by
    its thresholded sums.  Those sums depend on the representative of h + w_j,
    so by default they are taken on the mean-centred vector, which makes them
    well defined on the torus and keeps them differentiable.
    """
    X, _ = _as_batch(net, x)
    pre, post = base_forward(net, X, rowwise)
    h = post[-1] if post else X
    if net.top == "linear":
        return Trace(X, pre, post, None, None, _times_t(h, net.top_weight, rowwise) + net.top_bias, rowwise=rowwise)
    shifted = h[:, None, :] + net.top_weight[None, :, :]
    if tau is None:
        dist = shifted.max(axis=2) - shifted.min(axis=2)
        return Trace(X, pre, post, shifted, None, -dist, rowwise=rowwise)
    if center:
        shifted = shifted - shifted.mean(axis=2, keepdims=True)
    t = np.broadcast_to(np.asarray(tau, dtype=float), (X.shape[0],)).reshape(-1, 1, 1)
    smooth = np.maximum(shifted - t, 0).sum(axis=2) + np.maximum(-shifted - t, 0).sum(axis=2)
    return Trace(X, pre, post, shifted, t[:, 0, 0], -smooth, center, rowwise)


def forward(net: TropicalNet, x):
    """(base_out, distances, probs); batched when ``x`` is 2-D."""
    X, single = _as_batch(net, x)
    tr = trace(net, X)
    dist = -tr.scores
    probs = _softmax(tr.scores)
    if single:
        return tr.base_out[0], dist[0], probs[0]
    return tr.base_out, dist, probs


def predict(net: TropicalNet, x, rowwise: bool = False) -> np.ndarray:
    """Class with the smallest distance (largest score), smallest index on ties."""
    X, single = _as_batch(net, x)
    pred = np.argmax(trace(net, X, rowwise=rowwise).scores, axis=1)
    return pred[0] if single else pred


def _top_distance_grad(tr: Trace) -> np.ndarray:
    """d distance_j / d shifted_ji, shape (n, K, m)."""
    s = tr.shifted
    if tr.tau is None:
        n, K, m = s.shape
        g = np.zeros_like(s)
        idx_n, idx_k = np.meshgrid(np.arange(n), np.arange(K), indexing="ij")
        # argmax/argmin return the smallest index on ties
        g[idx_n, idx_k, s.argmax(axis=2)] += 1.0
        g[idx_n, idx_k, s.argmin(axis=2)] -= 1.0
        return g
    t = tr.tau[:, None, None]
    g = (s > t).astype(float) - (s < -t).astype(float)
    if tr.centered:
        g = g - g.mean(axis=2, keepdims=True)
    return g


def backprop(net: TropicalNet, tr: Trace, g_scores: np.ndarray, want_params: bool = True):
    """Push d(loss)/d(scores) back through the net.

    Returns (parameter gradients in ``net.parameters()`` order or None,
    gradient with respect to the inputs).
    """
    grads = []
    h = tr.base_out
    if net.top == "linear":
        g_top = g_scores.T @ h
        g_h = _times(g_scores, net.top_weight, tr.rowwise)
        top_grads = [g_top, g_scores.sum(axis=0)]
    else:
        gd = _top_distance_grad(tr) * (-g_scores)[:, :, None]
        g_top = gd.sum(axis=0)
        g_h = gd.sum(axis=1)
        top_grads = [g_top]
    layer_grads = []
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        g_a = g_h * _act_grad(layer.activation, tr.pre[idx], tr.post[idx])
        below = tr.post[idx - 1] if idx > 0 else tr.inputs
        if want_params:
            layer_grads.append([g_a.T @ below, g_a.sum(axis=0)])
        g_h = _times(g_a, layer.weight, tr.rowwise)
    if want_params:
        for pair in reversed(layer_grads):
            grads += pair
        grads += top_grads
        return grads, g_h
    return None, g_h


def loss_and_grads(net: TropicalNet, x, labels):
    """Mean cross-entropy of the softmin output and its parameter gradients."""
    X, _ = _as_batch(net, x)
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    tr = trace(net, X)
    Z = tr.scores
    logp = Z - Z.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    n = X.shape[0]
    loss = float(-logp[np.arange(n), y].mean())
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    grads, _ = backprop(net, tr, g / n)
    return loss, grads


def backward(net: TropicalNet, x, label) -> list[np.ndarray]:
    """Gradients of -log p_label for one input, in ``net.parameters()`` order."""
    return loss_and_grads(net, x, [label])[1]


# -- data -------------------------------------------------------------------------------


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ShapeError(f"ShapeError: {self.inputs.shape} inputs vs {self.labels.shape} labels")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index, split: Optional[str] = None) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], split or self.split)


IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


def _read_idx(path, magic: int) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"IoError: cannot read {path}: {exc}") from exc
    if len(raw) < 4:
        raise Truncated(f"Truncated: {path} has no header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagic(f"BadMagic: {path} has magic {found}, expected {magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise Truncated(f"Truncated: {path} header is incomplete")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise Truncated(f"Truncated: {path} holds {len(raw) - header} of {size} data bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (MNIST layout); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"CountMismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    return Dataset(images.reshape(images.shape[0], -1) / 255.0, labels.astype(int), split)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IMAGES_MAGIC) + struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", LABELS_MAGIC) + struct.pack(">I", labels.shape[0]))
        fh.write(labels.tobytes())


def make_blobs(
    n: int,
    dim: int = 2,
    classes: int = 2,
    spread: float = 0.08,
    seed: int = 0,
    split: str = "train",
    centers: Optional[np.ndarray] = None,
) -> Dataset:
    """Isotropic Gaussian blobs clipped to [0, 1]^dim, one per class.

    Centres are drawn from [0.2, 0.8]^dim with a fixed stream so that train and
    test splits built with different ``seed`` share them.
    """
    if centers is None:
        centers = blob_centers(dim, classes)
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    X = centers[labels] + spread * rng.standard_normal((n, dim))
    return Dataset(np.clip(X, 0.0, 1.0), labels, split)


def blob_centers(dim: int, classes: int, seed: int = 12345) -> np.ndarray:
    if classes == 2 and dim == 2:
        return np.array([[0.3, 0.3], [0.7, 0.7]])
    return np.random.default_rng(seed).uniform(0.2, 0.8, size=(classes, dim))


def accuracy(net: TropicalNet, data: Dataset) -> float:
    if len(data) == 0:
        return 0.0
    return float(np.mean(predict(net, data.inputs) == data.labels))


# -- training ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_decay: float = 0.1
    patience: int = 5
    max_epochs: int = 32
    batch_size: int = 64
    max_reductions: int = 3
    optimizer: str = "adam"  # or "sgd"
    centroid_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.lr_decay < 1:
            raise ValueError("learning rate must be positive and the decay factor in (0, 1)")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch size and max epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    batch_losses: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_acc"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.lr), f"{r.train_loss:.6f}", f"{r.val_acc:.4f}"])
        return buf.getvalue()


def init_rows_at_centroids(net: TropicalNet, data: Dataset) -> TropicalNet:
    """Place each tropical row at the negated mean base output of its class.

    The net then starts as a nearest-centroid classifier in the tropical
    metric, which avoids the dead start where all rows share one argmax.
    """
    h = trace(net, data.inputs).base_out
    rows = []
    for k in range(net.class_count):
        members = h[data.labels == k]
        rows.append(-members.mean(axis=0) if len(members) else net.top_weight[k])
    w = np.stack(rows)
    net.top_weight = w - w[:, -1:]
    return net


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.b1, self.b2, self.eps, self.t = beta1, beta2, eps, 0

    def step(self, params, grads, lr):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def train(net: TropicalNet, train_set: Dataset, val_set: Dataset, cfg: TrainConfig = TrainConfig(), callback=None):
    """Mini-batch training with plateau-driven learning-rate decay.

    The rate is multiplied by ``lr_decay`` whenever validation accuracy has not
    improved for ``patience`` epochs; training stops at the next plateau once
    it has been reduced ``max_reductions`` times, or after ``max_epochs``.
    ``callback(net, epoch)`` runs after every mini-batch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("EmptyDataset: training and validation splits must be non-empty")
    net = net.copy()
    if cfg.centroid_init and net.top == "tropical":
        init_rows_at_centroids(net, train_set)
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    opt = Adam(params) if cfg.optimizer == "adam" else None
    lr = cfg.lr
    best_acc, stale, reductions = -1.0, 0, 0
    history = History()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(net, train_set.inputs[idx], train_set.labels[idx])
            if opt is None:
                for p, g in zip(params, grads):
                    p -= lr * g
            else:
                opt.step(params, grads, lr)
            if net.top == "tropical":
                net.top_weight -= net.top_weight[:, -1:].copy()
            total += loss * len(idx)
            history.batch_losses.append(loss)
            if callback is not None:
                callback(net, epoch)
        val_acc = accuracy(net, val_set)
        history.records.append(EpochRecord(epoch, lr, total / len(train_set), val_acc))
        log.info("epoch %d lr %.2g loss %.4f val_acc %.4f", epoch, lr, total / len(train_set), val_acc)
        if val_acc > best_acc:
            best_acc, stale = val_acc, 0
            continue
        stale += 1
        if stale >= cfg.patience:
            if reductions >= cfg.max_reductions:
                history.stopped_early = True
                break
            lr *= cfg.lr_decay
            reductions += 1
            stale = 0
    return net, history


# -- persistence ------------------------------------------------------------------------


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel()]}


def _decode(d: dict) -> np.ndarray:
    return np.array([float.fromhex(v) for v in d["data"]], dtype=float).reshape(d["shape"])


def model_to_dict(net: TropicalNet) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "top": net.top,
        "class_count": net.class_count,
        "layers": [{"activation": l.activation, "weight": _encode(l.weight), "bias": _encode(l.bias)} for l in net.layers],
        "top_weight": _encode(net.top_weight),
        "top_bias": None if net.top_bias is None else _encode(net.top_bias),
    }


def save_model(net: TropicalNet, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(model_to_dict(net), indent=1), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"IoError: cannot write {path}: {exc}") from exc
    return path


def load_model(path) -> TropicalNet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"IoError: cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelVersionError(f"ModelVersionError: {path} is not a complete model file ({exc.msg})") from exc
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT or data.get("version") != MODEL_VERSION:
        found = data.get("version") if isinstance(data, dict) else None
        raise ModelVersionError(f"ModelVersionError: expected {MODEL_FORMAT} version {MODEL_VERSION}, found {found}")
    layers = [Layer(_decode(l["weight"]), _decode(l["bias"]), l["activation"]) for l in data["layers"]]
    bias = None if data["top_bias"] is None else _decode(data["top_bias"])
    net = TropicalNet(layers, _decode(data["top_weight"]), bias, data["top"])
    if net.class_count != data["class_count"]:
        raise ModelVersionError("ModelVersionError: class count does not match the stored weights")
    return net


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
