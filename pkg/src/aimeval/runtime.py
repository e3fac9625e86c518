"""Minimal dense-tensor model runtime with hand-written reverse-mode gradients.

Everything runs in float64 numpy. A model is an ordered list of layers from a
small fixed set (dense, conv1d, relu, square, flatten, meanpool) followed by a
softmax cross-entropy head. Layers are functional: ``forward`` returns the
output together with a cache, ``backward`` consumes that cache, so forward and
gradient evaluation are pure and safe to call concurrently on disjoint inputs.
Parameters only change inside :func:`train`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Input does not match the shape the model was built for."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or parameters)."""


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Dense:
    kind = "dense"

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = _f64(w)          # (n_out, n_in)
        self.b = _f64(b)          # (n_out,)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator,
             scale: float | None = None) -> "Dense":
        # He initialisation by default; callers pass scale for linear heads.
        s = np.sqrt(2.0 / n_in) if scale is None else scale
        return cls(rng.normal(0.0, s, size=(n_out, n_in)), np.zeros(n_out))

    def forward(self, x):
        return x @ self.w.T + self.b, x

    def backward(self, cache, g):
        x = cache
        return g @ self.w, {"w": g.T @ x, "b": g.sum(axis=0)}

    def params(self):
        return {"w": self.w, "b": self.b}

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.w.shape[1]:
            raise ShapeError(f"dense expects ({self.w.shape[1]},), got {in_shape}")
        return (self.w.shape[0],)


class Conv1D:
    """Valid-padding, stride-1 convolution over (channels, time) inputs."""

    kind = "conv1d"

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = _f64(w)          # (filters, channels, kernel)
        self.b = _f64(b)          # (filters,)

    @classmethod
    def init(cls, channels: int, filters: int, kernel: int,
             rng: np.random.Generator) -> "Conv1D":
        s = np.sqrt(2.0 / (channels * kernel))
        return cls(rng.normal(0.0, s, size=(filters, channels, kernel)),
                   np.zeros(filters))

    def forward(self, x):
        xw = sliding_window_view(x, self.w.shape[2], axis=2)
        y = np.einsum("nctk,fck->nft", xw, self.w) + self.b[None, :, None]
        return y, xw

    def backward(self, cache, g):
        xw = cache
        k = self.w.shape[2]
        gw = np.einsum("nctk,nft->fck", xw, g)
        gb = g.sum(axis=(0, 2))
        gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1)))
        gpw = sliding_window_view(gp, k, axis=2)
        gx = np.einsum("nftj,fcj->nct", gpw, self.w[:, :, ::-1])
        return gx, {"w": gw, "b": gb}

    def params(self):
        return {"w": self.w, "b": self.b}

    def out_shape(self, in_shape):
        f, c, k = self.w.shape
        if len(in_shape) != 2 or in_shape[0] != c:
            raise ShapeError(f"conv1d expects ({c}, T), got {in_shape}")
        if in_shape[1] < k:
            raise ShapeError(f"conv1d kernel {k} exceeds input length {in_shape[1]}")
        return (f, in_shape[1] - k + 1)


class ReLU:
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0), x

    def backward(self, cache, g):
        return g * (cache > 0.0), {}

    def params(self):
        return {}

    def out_shape(self, in_shape):
        return in_shape


class Square:
    """Elementwise x**2; used to express energy/power readouts."""

    kind = "square"

    def forward(self, x):
        return x * x, x

    def backward(self, cache, g):
        return 2.0 * cache * g, {}

    def params(self):
        return {}

    def out_shape(self, in_shape):
        return in_shape


class Flatten:
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, g):
        return g.reshape(cache), {}

    def params(self):
        return {}

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class MeanPool:
    """Global mean pool over the trailing (time) axis."""

    kind = "meanpool"

    def forward(self, x):
        return x.mean(axis=-1), x.shape

    def backward(self, cache, g):
        t = cache[-1]
        return np.repeat(g[..., None], t, axis=-1) / t, {}

    def params(self):
        return {}

    def out_shape(self, in_shape):
        return in_shape[:-1]


_LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv1D, ReLU, Square, Flatten, MeanPool)}


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class Model:
    """Ordered layer stack producing class logits."""

    def __init__(self, layers: list, input_shape: tuple[int, ...], num_classes: int,
                 arch: str = "custom"):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        self.arch = arch
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        if shape != (self.num_classes,):
            raise ShapeError(f"stack maps {self.input_shape} to {shape}, "
                             f"expected ({self.num_classes},)")

    # -- shape handling ----------------------------------------------------

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        x = _f64(x)
        if x.shape == self.input_shape:
            return x[None], True
        if x.shape[1:] == self.input_shape:
            return x, False
        raise ShapeError(f"expected {self.input_shape} or (N, *that), got {x.shape}")

    # -- forward / backward ------------------------------------------------

    def _forward(self, xb):
        caches = []
        h = xb
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        return h, caches

    def _backward(self, caches, glogits):
        g = glogits
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, pg = layer.backward(cache, g)
            grads.append(pg)
        return g, list(reversed(grads))

    def logits(self, x) -> np.ndarray:
        xb, single = self._batch(x)
        out, _ = self._forward(xb)
        return out[0] if single else out

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x) -> np.ndarray | int:
        logits = self.logits(x)
        # argmax resolves ties toward the lowest class index
        labels = np.argmax(logits, axis=-1)
        return int(labels) if logits.ndim == 1 else labels

    # -- persistence ---------------------------------------------------------

    def to_json(self) -> dict:
        layers = []
        for layer in self.layers:
            entry = {"kind": layer.kind}
            for name, value in layer.params().items():
                entry[name] = {"shape": list(value.shape), "data": value.ravel().tolist()}
            layers.append(entry)
        return {"format": "aimeval-model", "format_version": 1,
                "arch": self.arch, "input_shape": list(self.input_shape),
                "num_classes": self.num_classes, "layers": layers}

    @classmethod
    def from_json(cls, doc: dict) -> "Model":
        if doc.get("format") != "aimeval-model":
            raise ValueError("not a model document")
        if doc.get("format_version") != 1:
            raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
        layers = []
        for entry in doc["layers"]:
            kind = entry["kind"]
            if kind not in _LAYER_KINDS:
                raise ValueError(f"unknown layer kind {kind!r}")
            lcls = _LAYER_KINDS[kind]
            arrays = {name: _f64(spec["data"]).reshape(spec["shape"])
                      for name, spec in entry.items() if name != "kind"}
            layers.append(lcls(**arrays) if arrays else lcls())
        return cls(layers, tuple(doc["input_shape"]), doc["num_classes"],
                   arch=doc.get("arch", "custom"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Model":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# head and spec'd operations
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = _f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = _f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_labels(y, num_classes) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    if np.any((y < 0) | (y >= num_classes)):
        raise ValueError(f"label out of range for {num_classes} classes")
    return y.astype(np.int64)


def loss(model: Model, x, y) -> float | np.ndarray:
    """Cross-entropy of the softmax head, per sample."""
    xb, single = model._batch(x)
    yb = _check_labels(y, model.num_classes)
    logits, _ = model._forward(xb)
    nll = -log_softmax(logits)[np.arange(len(yb)), yb]
    return float(nll[0]) if single else nll


def input_gradient(model: Model, x, y) -> np.ndarray:
    """d loss / d x for the cross-entropy loss at label y."""
    xb, single = model._batch(x)
    yb = _check_labels(y, model.num_classes)
    logits, caches = model._forward(xb)
    g = softmax(logits)
    g[np.arange(len(yb)), yb] -= 1.0
    gx, _ = model._backward(caches, g)
    return gx[0] if single else gx


def class_gradient(model: Model, x, c) -> np.ndarray:
    """d logit_c / d x for class index c."""
    xb, single = model._batch(x)
    cb = _check_labels(c, model.num_classes)
    if len(cb) == 1 and len(xb) > 1:
        cb = np.repeat(cb, len(xb))
    logits, caches = model._forward(xb)
    g = np.zeros_like(logits)
    g[np.arange(len(cb)), cb] = 1.0
    gx, _ = model._backward(caches, g)
    return gx[0] if single else gx


# ---------------------------------------------------------------------------
# data, training, evaluation
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Pairs of inputs (N, *input_shape) and integer labels (N,)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = _f64(self.x)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ShapeError("x and y length mismatch")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


def train(model: Model, data: Dataset, cfg: TrainConfig) -> dict:
    """Mini-batch SGD with momentum; mutates the model in place.

    L2 decay applies to weight matrices only, never biases. Returns a
    history dict with per-epoch mean loss. Deterministic for a fixed seed:
    the only randomness is the epoch shuffle.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x7261]))
    velocity = [{k: np.zeros_like(v) for k, v in layer.params().items()}
                for layer in model.layers]
    history = {"loss": []}
    n = len(data)
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb, yb = data.x[idx], data.y[idx]
            logits, caches = model._forward(xb)
            p = softmax(logits)
            nll = -log_softmax(logits)[np.arange(len(yb)), yb]
            epoch_loss += float(nll.sum())
            g = p
            g[np.arange(len(yb)), yb] -= 1.0
            g /= len(yb)
            _, grads = model._backward(caches, g)
            for layer, vel, pg in zip(model.layers, velocity, grads):
                for name, value in layer.params().items():
                    step = pg[name]
                    if name == "w" and cfg.weight_decay:
                        step = step + cfg.weight_decay * value
                    vel[name] = cfg.momentum * vel[name] - cfg.learning_rate * step
                    value += vel[name]
        mean_loss = epoch_loss / n
        if not np.isfinite(mean_loss):
            raise TrainingError(f"training diverged (epoch loss {mean_loss})")
        history["loss"].append(mean_loss)
    for layer in model.layers:
        for value in layer.params().values():
            if not np.all(np.isfinite(value)):
                raise TrainingError("training diverged (non-finite parameters)")
    history["train_acc"] = accuracy(model, data)
    return history


def accuracy(model: Model, data: Dataset, chunk: int = 512) -> float:
    """Top-1 accuracy; ties in the argmax go to the lowest class index."""
    hits = 0
    for lo in range(0, len(data), chunk):
        logits = model.logits(data.x[lo:lo + chunk])
        hits += int(np.sum(np.argmax(logits, axis=-1) == data.y[lo:lo + chunk]))
    return hits / len(data) if len(data) else float("nan")


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------

def build_mlp(input_shape, num_classes: int, hidden=(48, 32), seed: int = 0) -> Model:
    """Two-hidden-layer ReLU MLP on the flattened input."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6d6c70]))
    layers: list = [Flatten()]
    n_in = int(np.prod(input_shape))
    for width in hidden:
        layers += [Dense.init(n_in, width, rng), ReLU()]
        n_in = width
    layers.append(Dense.init(n_in, num_classes, rng, scale=1.0 / np.sqrt(n_in)))
    return Model(layers, tuple(input_shape), num_classes, arch="mlp")


def build_conv1d(input_shape, num_classes: int, filters: int = 16,
                 kernel: int = 9, seed: int = 0) -> Model:
    """Conv1D -> ReLU -> global mean pool -> dense head, for (C, T) inputs."""
    if len(input_shape) != 2:
        raise ShapeError("conv1d architecture expects (channels, time) input")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x636e76]))
    layers = [Conv1D.init(input_shape[0], filters, kernel, rng), ReLU(),
              MeanPool(),
              Dense.init(filters, num_classes, rng, scale=1.0 / np.sqrt(filters))]
    return Model(layers, tuple(input_shape), num_classes, arch="conv1d")


def build_conv1d_power(input_shape, num_classes: int, filters: int = 12,
                       kernel: int = 63, seed: int = 0) -> Model:
    """Conv1D -> square -> global mean pool -> dense head, for (C, T) inputs.

    Squaring before the pool makes each pooled feature the mean energy of a
    learned filter band, so the readout depends on the input spectrum only
    through band powers (phase-insensitive by construction). The long kernel
    gives the filters enough frequency resolution to isolate nearby bins.
    """
    if len(input_shape) != 2:
        raise ShapeError("conv1d architecture expects (channels, time) input")
    if kernel > input_shape[1]:
        raise ShapeError("kernel longer than the time axis")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x637071]))
    layers = [Conv1D.init(input_shape[0], filters, kernel, rng), Square(),
              MeanPool(),
              Dense.init(filters, num_classes, rng, scale=1.0 / np.sqrt(filters))]
    return Model(layers, tuple(input_shape), num_classes, arch="conv1d_power")


BUILDERS = {"mlp": build_mlp, "conv1d": build_conv1d,
            "conv1d_power": build_conv1d_power}
