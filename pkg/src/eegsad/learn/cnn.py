"""The two-convolution CNN: architecture, training with early stopping,
inference and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import ConfigError, DataError, NumericalError
from .layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2, ReLU, softmax, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CnnArchitecture:
    input_shape: tuple[int, int, int]
    conv_filters: int = 64
    kernel: int = 3
    n_convs: int = 2
    conv_dropout: float = 0.25
    dense_units: int = 128
    dense_dropout: float = 0.2
    n_classes: int = 2
    input_batchnorm: bool = True
    conv_batchnorm: bool = True

    def __post_init__(self):
        h, w, c = self.input_shape
        if min(h, w, c) < 1:
            raise ConfigError(f"invalid input shape {self.input_shape}")
        if h < 2 or w < 2:
            raise ConfigError(f"input {self.input_shape} is too small for 2x2 pooling")
        if self.conv_filters < 1 or self.dense_units < 1 or self.n_classes < 2:
            raise ConfigError("layer widths must be positive and n_classes >= 2")

    @classmethod
    def miniature(cls, input_shape=(4, 4, 2), filters=3, dense=5) -> "CnnArchitecture":
        return cls(tuple(input_shape), conv_filters=filters, dense_units=dense)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 8
    min_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.patience < self.max_epochs:
            raise ConfigError("patience must lie in [0, max_epochs)")


def infer_shapes(arch: CnnArchitecture) -> dict[str, tuple[int, ...]]:
    """Shape arithmetic for the architecture: same-padding convs, floor pooling."""
    h, w, _ = arch.input_shape
    conv = (h, w, arch.conv_filters)
    pooled = (h // 2, w // 2, arch.conv_filters)
    return {"conv": conv, "pooled": pooled, "flatten": (pooled[0] * pooled[1] * pooled[2],),
            "dense": (arch.dense_units,), "output": (arch.n_classes,)}


class Network:
    def __init__(self, arch: CnnArchitecture, layers: list[Layer], dtype=np.float64):
        self.arch = arch
        self.layers = layers
        self.dtype = np.dtype(dtype)

    def forward(self, x: np.ndarray, train: bool = False, dropout: bool | None = None,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Logits. `train` selects batch statistics in batchnorm; dropout follows
        `train` unless given explicitly."""
        dropout = train if dropout is None else dropout
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.forward(out, train=train, dropout=dropout, rng=rng)
        return out

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def parameters(self):
        """(layer index, name, array) for every trainable tensor, in declared order."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer.params[name]

    def buffers(self):
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.state):
                yield i, name, layer.state[name]

    def get_weights(self) -> dict[str, np.ndarray]:
        w = {f"{i}.{n}": a.copy() for i, n, a in self.parameters()}
        w.update({f"{i}.state.{n}": a.copy() for i, n, a in self.buffers()})
        return w

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for n in layer.params:
                layer.params[n] = weights[f"{i}.{n}"].astype(self.dtype).copy()
            for n in layer.state:
                layer.state[n] = weights[f"{i}.state.{n}"].astype(self.dtype).copy()

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[1:] != self.arch.input_shape:
            raise DataError(f"input shape {x.shape[1:]} does not match network input {self.arch.input_shape}")
        out = [softmax(self.forward(x[s:s + batch_size]).astype(np.float64))
               for s in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.arch.n_classes))


def cnn_init(arch: CnnArchitecture, seed: int = 0, dtype=np.float64) -> Network:
    """batchnorm(input) -> [conv -> batchnorm -> relu] x2 -> maxpool -> dropout
    -> flatten -> dense -> relu -> dropout -> dense (softmax applied by the loss)."""
    rng = np.random.default_rng(seed)
    h, w, c = arch.input_shape
    layers: list[Layer] = []
    if arch.input_batchnorm:
        layers.append(BatchNorm(c, dtype=dtype))
    in_ch = c
    for _ in range(arch.n_convs):
        layers.append(Conv2D(in_ch, arch.conv_filters, arch.kernel, rng=rng, dtype=dtype))
        if arch.conv_batchnorm:
            layers.append(BatchNorm(arch.conv_filters, dtype=dtype))
        layers.append(ReLU())
        in_ch = arch.conv_filters
    shapes = infer_shapes(arch)
    layers += [MaxPool2(), Dropout(arch.conv_dropout), Flatten(),
               Dense(shapes["flatten"][0], arch.dense_units, rng=rng, dtype=dtype), ReLU(),
               Dropout(arch.dense_dropout),
               Dense(arch.dense_units, arch.n_classes, rng=rng, dtype=dtype)]
    return Network(arch, layers, dtype)


class Adam:
    def __init__(self, net: Network, config: TrainConfig):
        self.net, self.cfg = net, config
        self.t = 0
        self.m = {(i, n): np.zeros_like(a) for i, n, a in net.parameters()}
        self.v = {(i, n): np.zeros_like(a) for i, n, a in net.parameters()}

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2 ** self.t) / (1 - cfg.beta1 ** self.t)
        for i, n, p in self.net.parameters():
            g = self.net.layers[i].grads[n]
            m, v = self.m[(i, n)], self.v[(i, n)]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            p -= (lr_t * m / (np.sqrt(v) + cfg.epsilon)).astype(p.dtype, copy=False)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


def evaluate_loss(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> tuple[float, float]:
    """Inference-mode mean cross-entropy and accuracy."""
    total, correct = 0.0, 0
    for s in range(0, len(x), batch_size):
        logits = net.forward(x[s:s + batch_size]).astype(np.float64)
        loss, _ = softmax_cross_entropy(logits, y[s:s + batch_size])
        total += loss * len(logits)
        correct += int((logits.argmax(axis=1) == y[s:s + batch_size]).sum())
    return total / len(x), correct / len(x)


def cnn_train(net: Network, train_x: np.ndarray, train_y: np.ndarray, val_x: np.ndarray, val_y: np.ndarray,
              config: TrainConfig = TrainConfig()) -> tuple[Network, TrainHistory]:
    if len(train_x) == 0 or len(val_x) == 0:
        raise DataError("cnn_train needs non-empty training and validation sets")
    train_x = np.asarray(train_x, dtype=net.dtype)
    val_x = np.asarray(val_x, dtype=net.dtype)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    order_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    opt = Adam(net, config)
    hist = TrainHistory()
    best = (np.inf, net.get_weights())
    wait = 0
    n = len(train_x)
    for epoch in range(config.max_epochs):
        perm = order_rng.permutation(n)
        running = 0.0
        for s in range(0, n, config.batch_size):
            idx = perm[s:s + config.batch_size]
            logits = net.forward(train_x[idx], train=True, rng=dropout_rng)
            loss, dlogits = softmax_cross_entropy(logits.astype(np.float64), train_y[idx])
            net.backward(dlogits.astype(net.dtype))
            opt.step()
            running += loss * len(idx)
        train_loss = running / n
        val_loss, val_acc = evaluate_loss(net, val_x, val_y)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.val_accuracy.append(val_acc)
        log.debug("epoch %d train %.4f val %.4f acc %.3f", epoch, train_loss, val_loss, val_acc)
        if val_loss < best[0] - config.min_delta:
            best = (val_loss, net.get_weights())
            hist.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                hist.stopped_epoch = epoch
                break
    else:
        hist.stopped_epoch = config.max_epochs - 1
    net.set_weights(best[1])
    return net, hist


def cnn_predict_proba(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape == net.arch.input_shape:
        return net.predict_proba(x[None])[0]
    return net.predict_proba(x)


def save_checkpoint(path: str | Path, net: Network, standardization=None, fingerprint: str = "") -> None:
    """npz container: an 'architecture' JSON descriptor, weights in declared
    order as float64, optional standardization stats and a config fingerprint."""
    meta = {"architecture": asdict(net.arch), "layers": [l.describe() for l in net.layers],
            "weight_order": list(net.get_weights()), "fingerprint": fingerprint, "dtype": net.dtype.name}
    arrays = {f"w:{k}": v.astype(np.float64) for k, v in net.get_weights().items()}
    if standardization is not None:
        arrays["std:mean"] = standardization.mean
        arrays["std:std"] = standardization.std
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path):
    from .scaling import Standardization

    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arch_d = meta["architecture"]
        arch_d["input_shape"] = tuple(arch_d["input_shape"])
        arch = CnnArchitecture(**arch_d)
        net = cnn_init(arch, 0, np.dtype(meta["dtype"]))
        net.set_weights({k: data[f"w:{k}"] for k in meta["weight_order"]})
        stats = None
        if "std:mean" in data:
            stats = Standardization(data["std:mean"], data["std:std"])
    return net, stats, meta
