"""Gradient-based saliency methods over the model runtime.

All methods attribute the logit of the given label by default (the loss is
available behind ``target="loss"``). Ensemble methods (SG/SS/VG) share one
seeded noise ensemble, so the population-variance identity
``VG == SS - SG**2`` holds to rounding error. Integrated gradients uses the
midpoint rule on the straight path from a zero baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .runtime import Model, class_gradient, input_gradient

BASE_METHODS = ("GD", "GI", "SG", "SS", "VG", "IG", "RANDOM")


@dataclass
class AttributionConfig:
    method: str = "GD"
    absolute: bool = False
    target: str = "logit"        # "logit" of the label, or "loss"
    noise_std: float = 0.1       # SG/SS/VG noise, as a fraction of the input std
    n_samples: int = 32          # SG/SS/VG ensemble size
    ig_steps: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.method not in BASE_METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {BASE_METHODS}")
        if self.target not in ("logit", "loss"):
            raise ValueError(f"target must be 'logit' or 'loss', got {self.target!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.n_samples < 1 or self.ig_steps < 1:
            raise ValueError("n_samples and ig_steps must be >= 1")


@dataclass
class SaliencyMap:
    values: np.ndarray
    method: str
    absolute: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


def parse_method(tag: str) -> AttributionConfig:
    """Map a method tag like ``"GDA"`` onto a config (trailing A = absolute)."""
    base, absolute = tag, False
    if tag not in BASE_METHODS and tag.endswith("A") and tag[:-1] in BASE_METHODS:
        base, absolute = tag[:-1], True
    return AttributionConfig(method=base, absolute=absolute)


def method_tag(cfg: AttributionConfig) -> str:
    return cfg.method + ("A" if cfg.absolute else "")


def _grad_batch(model: Model, y: int, target: str):
    if target == "loss":
        return lambda xs: input_gradient(model, xs, np.repeat(y, len(xs)))
    return lambda xs: class_gradient(model, xs, np.repeat(y, len(xs)))


def _noise_ensemble(x: np.ndarray, cfg: AttributionConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x5347]))
    sigma = cfg.noise_std * float(x.std())
    return x[None] + rng.normal(0.0, 1.0, size=(cfg.n_samples, *x.shape)) * sigma


def _ig_points(x: np.ndarray, steps: int) -> np.ndarray:
    # midpoint nodes (j - 1/2)/m on the straight path from the zero baseline
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    return alphas.reshape(-1, *([1] * x.ndim)) * x[None]


def method_values(x: np.ndarray, cfg: AttributionConfig, grad_batch,
                  feature: np.ndarray | None = None) -> np.ndarray:
    """Raw method scores for one sample.

    ``grad_batch`` maps a stack of evaluation points (in the input space of
    ``x``) to per-point gradients in the feature representation; ``feature``
    is the sample's own feature vector (defaults to ``x``), used by the
    input-times-gradient and path-integral methods. Keeping the gradient
    backend pluggable lets the spectral route reuse every method unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if feature is None:
        feature = x
    m = cfg.method
    if m == "GD":
        return grad_batch(x[None])[0]
    if m == "GI":
        return feature * grad_batch(x[None])[0]
    if m in ("SG", "SS", "VG"):
        grads = grad_batch(_noise_ensemble(x, cfg))
        if m == "SG":
            return grads.mean(axis=0)
        if m == "SS":
            return (grads ** 2).mean(axis=0)
        return (grads ** 2).mean(axis=0) - grads.mean(axis=0) ** 2
    if m == "IG":
        grads = grad_batch(_ig_points(x, cfg.ig_steps))
        return feature * grads.mean(axis=0)
    if m == "RANDOM":
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x726e64]))
        return rng.uniform(0.0, 1.0, size=feature.shape)
    raise AssertionError(m)


def attribute(model: Model, x, y: int, cfg: AttributionConfig) -> SaliencyMap:
    """Saliency map of sample x for label y, in the input (time/grid) domain."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"expected a single sample of shape {model.input_shape}")
    values = method_values(x, cfg, _grad_batch(model, int(y), cfg.target))
    if cfg.absolute:
        values = np.abs(values)
    return SaliencyMap(values, method_tag(cfg), cfg.absolute)


def attribute_random(shape, seed: int = 0) -> SaliencyMap:
    """I.i.d. Uniform(0,1) scores; the reliability null baseline."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x726e64]))
    return SaliencyMap(rng.uniform(0.0, 1.0, size=shape), "RANDOM")


def to_absolute(smap: SaliencyMap) -> SaliencyMap:
    return SaliencyMap(np.abs(smap.values), smap.method + "A"
                       if not smap.absolute else smap.method, True)


def smoothgrad_config(cfg: AttributionConfig, method: str) -> AttributionConfig:
    """Same ensemble, different statistic; keeps SG/SS/VG comparable."""
    return replace(cfg, method=method)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def saliency_to_csv(smap: SaliencyMap, path) -> None:
    with open(path, "w") as fh:
        fh.write("index,value\n")
        for i, v in enumerate(smap.values.ravel()):
            fh.write(f"{i},{float(v)!r}\n")


def saliency_to_json(smap: SaliencyMap) -> str:
    return json.dumps({"method": smap.method, "absolute": smap.absolute,
                       "shape": list(smap.values.shape),
                       "values": smap.values.ravel().tolist()})
