"""Feature domains: how saliency maps turn into maskable feature subsets.

Four domains are supported: whole channels (SPATIAL), a contiguous time
window (TEMPORAL), a contiguous positive-frequency band (SPECTRAL), and
individual pixels of a 2-D grid (GRID). Selection is deterministic, with
documented tie rules, and subsets are nested in the masking ratio wherever
the domain allows it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .attribution import AttributionConfig, attribute, method_values
from .runtime import Model, class_gradient, input_gradient


class Domain(str, Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    SPECTRAL = "spectral"
    GRID = "grid"


class Order(str, Enum):
    MORF = "morf"     # mask most relevant first
    LERF = "lerf"     # mask least relevant first


@dataclass(frozen=True)
class FeatureSubset:
    """A maskable feature set.

    ``indices`` is domain-dependent: a sorted tuple of channel indices
    (SPATIAL), a half-open window ``(t0, t1)`` (TEMPORAL), an inclusive bin
    band ``(f_lo, f_hi)`` (SPECTRAL), or a sorted tuple of flat row-major
    pixel indices (GRID).
    """

    domain: Domain
    indices: tuple
    ratio: float

    def size(self) -> int:
        if self.domain == Domain.TEMPORAL:
            return self.indices[1] - self.indices[0]
        if self.domain == Domain.SPECTRAL:
            return self.indices[1] - self.indices[0] + 1
        return len(self.indices)

    def to_json(self) -> str:
        return json.dumps({"domain": self.domain.value,
                           "indices": list(self.indices),
                           "ratio": self.ratio})

    @classmethod
    def from_json(cls, text: str) -> "FeatureSubset":
        doc = json.loads(text)
        return cls(Domain(doc["domain"]), tuple(doc["indices"]), doc["ratio"])


def _check_ratio(k: float) -> float:
    if not 0.0 < k <= 1.0:
        raise ValueError(f"masking ratio must be in (0, 1], got {k}")
    return float(k)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

class Spectrum:
    """One-sided DFT of a real multichannel signal.

    The rfft representation keeps conjugate symmetry by construction, so
    ``to_signal`` always returns a real signal and round trips are exact to
    rounding error.
    """

    def __init__(self, coeffs: np.ndarray, n_time: int, sample_rate: float | None = None):
        self.coeffs = np.asarray(coeffs, dtype=np.complex128)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs[None]
        self.n_time = int(n_time)
        self.sample_rate = sample_rate
        if self.coeffs.shape[-1] != self.n_time // 2 + 1:
            raise ValueError("coefficient count does not match n_time")

    @classmethod
    def from_signal(cls, x: np.ndarray, sample_rate: float | None = None) -> "Spectrum":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        return cls(np.fft.rfft(x, axis=-1), x.shape[-1], sample_rate)

    def to_signal(self) -> np.ndarray:
        return np.fft.irfft(self.coeffs, n=self.n_time, axis=-1)

    @property
    def n_bins(self) -> int:
        return self.coeffs.shape[-1]

    def amplitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    def phase(self) -> np.ndarray:
        return np.angle(self.coeffs)

    def power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    def freqs(self) -> np.ndarray:
        fs = self.sample_rate if self.sample_rate is not None else float(self.n_time)
        return np.fft.rfftfreq(self.n_time, d=1.0 / fs)


# ---------------------------------------------------------------------------
# aggregation and selection
# ---------------------------------------------------------------------------

def _as_map(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return s[None] if s.ndim == 1 else s


def aggregate_spatial(smap: np.ndarray) -> np.ndarray:
    """Per-channel scores: sum of the map over the time axis."""
    return _as_map(smap).sum(axis=-1)


def select_spatial(scores: np.ndarray, k: float, order: Order) -> FeatureSubset:
    """Top (MoRF) or bottom (LeRF) ceil(k*C) channels; ties to the lower index."""
    k = _check_ratio(k)
    scores = np.asarray(scores, dtype=np.float64)
    c = len(scores)
    count = int(np.ceil(k * c))
    key = -scores if order == Order.MORF else scores
    ranked = np.lexsort((np.arange(c), key))
    return FeatureSubset(Domain.SPATIAL, tuple(sorted(int(i) for i in ranked[:count])), k)


def select_temporal(smap: np.ndarray, k: float, order: Order) -> FeatureSubset:
    """Contiguous window of length ceil(k*T) with extreme summed importance.

    Window importance sums the map over all channels; ties go to the
    earliest start.
    """
    k = _check_ratio(k)
    total = _as_map(smap).sum(axis=0)
    t = len(total)
    length = int(np.ceil(k * t))
    window_sums = np.convolve(total, np.ones(length), mode="valid")
    start = int(np.argmax(window_sums) if order == Order.MORF else np.argmin(window_sums))
    return FeatureSubset(Domain.TEMPORAL, (start, start + length), k)


def select_grid(scores: np.ndarray, k: float, order: Order) -> FeatureSubset:
    """Top/bottom ceil(k*H*W) pixels; ties in row-major order."""
    k = _check_ratio(k)
    flat = np.asarray(scores, dtype=np.float64).ravel()
    count = int(np.ceil(k * flat.size))
    key = -flat if order == Order.MORF else flat
    ranked = np.lexsort((np.arange(flat.size), key))
    return FeatureSubset(Domain.GRID, tuple(sorted(int(i) for i in ranked[:count])), k)


def select_spectral(importance: np.ndarray, power: np.ndarray, k: float,
                    order: Order, tol: float = 0.1) -> FeatureSubset:
    """Contiguous positive-frequency band accounting for ~k of the power.

    For every start bin the shortest band reaching k*total power is a
    candidate; candidates whose power overshoots the target by more than
    ``tol`` (relative) are dropped unless nothing else remains, in which
    case the bands with power closest to the target are kept. Among the
    surviving candidates the band with maximal (MoRF) or minimal (LeRF)
    mean importance wins; ties prefer the shorter, then earlier, band.
    The DC bin never belongs to a band.
    """
    k = _check_ratio(k)
    importance = np.asarray(importance, dtype=np.float64)
    power = np.asarray(power, dtype=np.float64)
    if importance.shape != power.shape or importance.ndim != 1:
        raise ValueError("importance and power must be 1-D of equal length")
    f = len(power)
    if f < 2:
        raise ValueError("need at least one positive-frequency bin")
    pos = power[1:]
    total = float(pos.sum())
    if total <= 0.0:
        raise ValueError("no positive-frequency power to select from")
    target = k * total
    cum = np.cumsum(pos)
    eps = 1e-12 * total

    candidates = []               # (start_bin, end_bin, band_power), bins inclusive
    for s in range(1, f):
        base = cum[s - 2] if s >= 2 else 0.0
        e = int(np.searchsorted(cum, base + target - eps, side="left"))
        if e >= f - 1:
            e = f - 2
        band_power = cum[e] - base
        if band_power + eps < target:
            continue
        candidates.append((s, e + 1, band_power))
    if not candidates:
        raise ValueError("no band reaches the target power")

    within = [c for c in candidates if c[2] <= (1.0 + tol) * target + eps]
    if not within:
        best = min(abs(c[2] - target) for c in candidates)
        within = [c for c in candidates if abs(c[2] - target) <= best + eps]

    sign = -1.0 if order == Order.MORF else 1.0

    def rank(cand):
        s, e, _ = cand
        return (sign * float(importance[s:e + 1].mean()), e - s, s)

    s, e, _ = min(within, key=rank)
    return FeatureSubset(Domain.SPECTRAL, (s, e), k)


def select_subset(domain: Domain, scores: np.ndarray, k: float, order: Order,
                  power: np.ndarray | None = None) -> FeatureSubset:
    """Dispatch to the per-domain selection rule.

    ``scores`` is a saliency map (C, T) for spatial/temporal, per-pixel
    scores for grid, and per-bin importance for spectral, where ``power``
    (per-bin signal power) is required as well.
    """
    domain = Domain(domain)
    order = Order(order)
    if domain == Domain.SPATIAL:
        return select_spatial(aggregate_spatial(scores), k, order)
    if domain == Domain.TEMPORAL:
        return select_temporal(scores, k, order)
    if domain == Domain.GRID:
        return select_grid(scores, k, order)
    if power is None:
        raise ValueError("spectral selection needs the per-bin power")
    return select_spectral(scores, power, k, order)


# ---------------------------------------------------------------------------
# spectral saliency
# ---------------------------------------------------------------------------

def _rfft_weights(n: int) -> np.ndarray:
    """Adjoint scaling for d(signal)/d(rfft coefficient) under irfft."""
    w = np.full(n // 2 + 1, 2.0 / n)
    w[0] = 1.0 / n
    if n % 2 == 0:
        w[-1] = 1.0 / n
    return w


def amplitude_gradient(model: Model, x, y, target: str = "logit") -> np.ndarray:
    """Complex packed d(target)/d(Re X, Im X) per channel and bin.

    The real part is the sensitivity to the real coefficient, the imaginary
    part to the imaginary coefficient. Amplitude sensitivity then follows as
    Re(conj(G) * exp(i*phase)).
    """
    xs = np.asarray(x, dtype=np.float64)
    single = xs.ndim == len(model.input_shape)
    if single:
        xs = xs[None]
    ys = np.repeat(int(y), len(xs)) if np.ndim(y) == 0 else np.asarray(y)
    g = (input_gradient(model, xs, ys) if target == "loss"
         else class_gradient(model, xs, ys))
    gg = np.fft.rfft(g, axis=-1) * _rfft_weights(xs.shape[-1])
    return gg[0] if single else gg


def spectral_saliency(model: Model, x, y: int, mode: str = "chain") -> np.ndarray:
    """Per-frequency saliency of the label logit, summed over channels.

    mode="chain" differentiates the logit with respect to amplitude bins via
    the inverse DFT (phases held fixed); mode="magnitude" takes the DFT
    magnitude of the time-domain gradient instead.
    """
    x = np.asarray(x, dtype=np.float64)
    if mode == "chain":
        gg = amplitude_gradient(model, x, y)
        phase = Spectrum.from_signal(x).phase()
        return np.real(np.conj(gg) * np.exp(1j * phase)).reshape(phase.shape).sum(axis=0)
    if mode == "magnitude":
        g = class_gradient(model, x, int(y))
        if g.ndim == 1:
            g = g[None]
        return np.abs(np.fft.rfft(g, axis=-1)).sum(axis=0)
    raise ValueError(f"unknown spectral saliency mode {mode!r}")


def spectral_attribute(model: Model, x, y: int, cfg: AttributionConfig,
                       mode: str = "chain") -> np.ndarray:
    """Per-frequency scores for any attribution method.

    In chain mode the amplitude gradient replaces the time gradient as the
    method's primitive (evaluation points stay in the time domain, each with
    its own phases); GI and IG multiply by the sample's own amplitudes. In
    magnitude mode the method runs in the time domain and the score is the
    DFT magnitude of its map.
    """
    x = np.asarray(x, dtype=np.float64)
    spec = Spectrum.from_signal(x)
    if cfg.method == "RANDOM":
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x726e64]))
        return rng.uniform(0.0, 1.0, size=spec.n_bins)
    if mode == "magnitude":
        smap = attribute(model, x, y, cfg)
        vals = smap.values if smap.values.ndim > 1 else smap.values[None]
        return np.abs(np.fft.rfft(vals, axis=-1)).sum(axis=0)

    def grad_batch(points):
        gg = amplitude_gradient(model, points, np.repeat(int(y), len(points)),
                                target=cfg.target)
        phases = np.angle(np.fft.rfft(points if points.ndim > 1 else points[:, None, :],
                                      axis=-1))
        return np.real(np.conj(gg).reshape(phases.shape) * np.exp(1j * phases))

    values = method_values(x, cfg, grad_batch, feature=spec.amplitude())
    scores = values.sum(axis=0) if values.ndim > 1 else values
    return np.abs(scores) if cfg.absolute else scores
