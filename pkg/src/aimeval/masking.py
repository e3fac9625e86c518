"""Masking operators: zeroing, model-driven imputation, adversarial blending.

Three families share one interface. ZEROING sets features to zero. MDROAD
imputes them from their surroundings (graph Laplacian interpolation for
channels and pixels, an aperiodic 1/f fit for frequency bands, a multipoint
fractional Brownian bridge for time windows). AIM replaces them with the
corresponding features of a PGD adversarial counterpart of the same sample.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .domains import Domain, FeatureSubset, Spectrum
from .runtime import Dataset, Model, input_gradient
from .stochastic import BridgeAnchors, mfbb

log = logging.getLogger(__name__)

W_DIRECT = 1.0 / 6.0
W_DIAGONAL = 1.0 / 12.0


class ImputationError(RuntimeError):
    """The masked set cannot be interpolated from unmasked context."""


class SpectralFitError(RuntimeError):
    """Not enough unmasked bins to fit the aperiodic background."""


class AttackError(RuntimeError):
    """The adversarial search produced non-finite values."""


class CalibrationError(RuntimeError):
    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

@dataclass
class BinaryMask:
    """Boolean mask; lives over time/grid positions, or over rfft bins for
    SPECTRAL subsets."""

    values: np.ndarray
    domain: Domain

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)

    def popcount(self) -> int:
        return int(self.values.sum())


def subset_to_mask(subset: FeatureSubset, shape: tuple[int, ...]) -> BinaryMask:
    """Indicator of the subset for data of the given shape."""
    if subset.domain == Domain.SPATIAL:
        mask = np.zeros(shape, dtype=bool)
        mask[list(subset.indices), :] = True
    elif subset.domain == Domain.TEMPORAL:
        t0, t1 = subset.indices
        if not 0 <= t0 < t1 <= shape[-1]:
            raise ValueError(f"window {subset.indices} outside length {shape[-1]}")
        mask = np.zeros(shape, dtype=bool)
        mask[..., t0:t1] = True
    elif subset.domain == Domain.SPECTRAL:
        f_lo, f_hi = subset.indices
        n_bins = shape[-1] // 2 + 1
        if not 1 <= f_lo <= f_hi <= n_bins - 1:
            raise ValueError(f"band {subset.indices} outside bins 1..{n_bins - 1}")
        mask = np.zeros((*shape[:-1], n_bins), dtype=bool)
        mask[..., f_lo:f_hi + 1] = True
    elif subset.domain == Domain.GRID:
        mask = np.zeros(int(np.prod(shape)), dtype=bool)
        mask[list(subset.indices)] = True
        mask = mask.reshape(shape)
    else:
        raise ValueError(f"unknown domain {subset.domain!r}")
    return BinaryMask(mask, subset.domain)


def full_subset(domain: Domain, shape: tuple[int, ...]) -> FeatureSubset:
    """The whole feature domain; the normalising endpoint of the protocol."""
    if domain == Domain.SPATIAL:
        return FeatureSubset(domain, tuple(range(shape[0])), 1.0)
    if domain == Domain.TEMPORAL:
        return FeatureSubset(domain, (0, shape[-1]), 1.0)
    if domain == Domain.SPECTRAL:
        return FeatureSubset(domain, (1, shape[-1] // 2), 1.0)
    if domain == Domain.GRID:
        return FeatureSubset(domain, tuple(range(int(np.prod(shape)))), 1.0)
    raise ValueError(f"unknown domain {domain!r}")


def zero_mask(x: np.ndarray, subset: FeatureSubset) -> np.ndarray:
    """Set the subset to zero (band coefficients for SPECTRAL subsets)."""
    x = np.asarray(x, dtype=np.float64)
    if subset.domain == Domain.SPECTRAL:
        spec = Spectrum.from_signal(x)
        f_lo, f_hi = subset.indices
        coeffs = spec.coeffs.copy()
        coeffs[..., f_lo:f_hi + 1] = 0.0
        out = Spectrum(coeffs, spec.n_time).to_signal()
        return out.reshape(x.shape)
    mask = subset_to_mask(subset, x.shape)
    return np.where(mask.values, 0.0, x)


# ---------------------------------------------------------------------------
# graph Laplacian imputation (channels, pixels)
# ---------------------------------------------------------------------------

class NeighborGraph:
    """Direct and diagonal adjacency over nodes, with fixed weights 1/6 and
    1/12 so a full 8-neighbourhood contributes exactly one."""

    def __init__(self, n_nodes: int, direct, diagonal):
        self.n_nodes = int(n_nodes)
        self._w: np.ndarray | None = None
        self.direct = tuple(tuple(sorted(set(n))) for n in direct)
        self.diagonal = tuple(tuple(sorted(set(n))) for n in diagonal)
        if len(self.direct) != self.n_nodes or len(self.diagonal) != self.n_nodes:
            raise ValueError("neighbour lists must cover every node")
        for lists in (self.direct, self.diagonal):
            for i, neigh in enumerate(lists):
                for j in neigh:
                    if not 0 <= j < self.n_nodes or j == i:
                        raise ValueError(f"bad neighbour {j} of node {i}")
                    if i not in lists[j]:
                        raise ValueError(f"asymmetric adjacency between {i} and {j}")

    @classmethod
    def grid(cls, rows: int, cols: int) -> "NeighborGraph":
        def at(r, c):
            return r * cols + c

        direct = [[] for _ in range(rows * cols)]
        diagonal = [[] for _ in range(rows * cols)]
        for r in range(rows):
            for c in range(cols):
                for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols:
                        direct[at(r, c)].append(at(rr, cc))
                for dr, dc in ((-1, -1), (-1, 1), (1, -1), (1, 1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols:
                        diagonal[at(r, c)].append(at(rr, cc))
        return cls(rows * cols, direct, diagonal)

    def weight_matrix(self) -> np.ndarray:
        if self._w is None:
            w = np.zeros((self.n_nodes, self.n_nodes))
            for i in range(self.n_nodes):
                w[i, list(self.direct[i])] = W_DIRECT
                w[i, list(self.diagonal[i])] = W_DIAGONAL
            self._w = w
        return self._w


def laplacian_impute(x: np.ndarray, channels, graph: NeighborGraph,
                     noise_std=0.0, seed=0) -> np.ndarray:
    """Replace masked nodes by neighbour-weighted interpolation plus noise.

    Mutually adjacent masked nodes are solved jointly: with W the weight
    matrix and m the masked set, (I - W_mm) x_m = W_mu x_u. Boundary nodes
    keep their literal weights (no renormalisation), so a fully masked grid
    degenerates to zeros, and only genuinely isolated components (no leak to
    any unmasked node or boundary) are rejected.
    """
    x = np.asarray(x, dtype=np.float64)
    x2 = x[:, None] if x.ndim == 1 else x
    if x2.shape[0] != graph.n_nodes:
        raise ValueError(f"signal has {x2.shape[0]} nodes, graph {graph.n_nodes}")
    masked = sorted(set(int(c) for c in channels))
    if any(not 0 <= c < graph.n_nodes for c in masked):
        raise ValueError("masked channel outside the graph")
    if not masked:
        return x.copy()

    w = graph.weight_matrix()
    masked_set = set(masked)
    # a masked component whose nodes keep their full weight inside the
    # component (no unmasked neighbour, no under-weighted boundary row) makes
    # the system singular: the equations say nothing about its level
    row_sums = w.sum(axis=1)
    seen: set[int] = set()
    for start in masked:
        if start in seen:
            continue
        seen.add(start)
        stack, leak = [start], False
        while stack:
            i = stack.pop()
            if row_sums[i] < 1.0 - 1e-9:
                leak = True
            for j in (*graph.direct[i], *graph.diagonal[i]):
                if j in masked_set:
                    if j not in seen:
                        seen.add(j)
                        stack.append(j)
                else:
                    leak = True
        if not leak:
            raise ImputationError("masked set has an isolated component with no "
                                  "unmasked neighbours")

    unmasked = [i for i in range(graph.n_nodes) if i not in masked_set]
    a = np.eye(len(masked)) - w[np.ix_(masked, masked)]
    rhs = w[np.ix_(masked, unmasked)] @ x2[unmasked] if unmasked else \
        np.zeros((len(masked), x2.shape[1]))
    try:
        imputed = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise ImputationError("masked set has an isolated component with no "
                              "unmasked neighbours") from exc
    if not np.all(np.isfinite(imputed)) or \
            not np.allclose(a @ imputed, rhs, atol=1e-8 * max(1.0, np.abs(rhs).max())):
        raise ImputationError("masked set has an isolated component with no "
                              "unmasked neighbours")

    if np.any(np.asarray(noise_std) > 0):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6c6170]))
        sigma = np.broadcast_to(np.asarray(noise_std, dtype=np.float64),
                                (graph.n_nodes,))[masked]
        imputed = imputed + rng.standard_normal(imputed.shape) * sigma[:, None]

    out = x2.copy()
    out[masked] = imputed
    return out.reshape(x.shape)


# ---------------------------------------------------------------------------
# spectral imputation (1/f aperiodic fit)
# ---------------------------------------------------------------------------

@dataclass
class SpectralFit:
    """Degree-3 inverse-polynomial background: P(f) = sum_i a_i * f**-i."""

    coeffs: np.ndarray
    bins: np.ndarray
    target: str

    def evaluate(self, bins) -> np.ndarray:
        f = np.asarray(bins, dtype=np.float64)
        basis = np.stack([f ** -i for i in range(4)], axis=-1)
        return basis @ self.coeffs


def fit_aperiodic(values: np.ndarray, bins: np.ndarray, target: str = "power") -> SpectralFit:
    bins = np.asarray(bins, dtype=np.float64)
    if np.any(bins < 1):
        raise ValueError("aperiodic fit runs on positive-frequency bins only")
    if len(bins) < 4:
        raise SpectralFitError(f"need >= 4 unmasked bins to fit, got {len(bins)}")
    basis = np.stack([bins ** -i for i in range(4)], axis=-1)
    coeffs, *_ = np.linalg.lstsq(basis, np.asarray(values, dtype=np.float64), rcond=None)
    return SpectralFit(coeffs, bins, target)


def spectral_impute(x: np.ndarray, band: tuple[int, int], target: str = "power",
                    fit_bins: str = "unmasked") -> np.ndarray:
    """Replace band amplitudes by the 1/f background fit, preserving phases.

    The fit runs per channel on the unmasked positive-frequency power (or
    amplitude, per ``target``); masked amplitudes become sqrt(max(P, 0))
    for power fits and max(P, 0) for amplitude fits. ``fit_bins="all"``
    fits on every positive bin, which is how the fully masked endpoint is
    defined (there is no unmasked context left to fit on).
    """
    if target not in ("power", "amplitude"):
        raise ValueError(f"target must be 'power' or 'amplitude', got {target!r}")
    if fit_bins not in ("unmasked", "all"):
        raise ValueError(f"fit_bins must be 'unmasked' or 'all', got {fit_bins!r}")
    x = np.asarray(x, dtype=np.float64)
    spec = Spectrum.from_signal(x)
    f_lo, f_hi = int(band[0]), int(band[1])
    if not 1 <= f_lo <= f_hi <= spec.n_bins - 1:
        raise ValueError(f"band {band} outside bins 1..{spec.n_bins - 1}")

    positive = np.arange(1, spec.n_bins)
    if fit_bins == "unmasked":
        keep = positive[(positive < f_lo) | (positive > f_hi)]
    else:
        keep = positive
    band_bins = np.arange(f_lo, f_hi + 1)

    coeffs = spec.coeffs.copy()
    amp = spec.amplitude()
    phase = spec.phase()
    for c in range(coeffs.shape[0]):
        obs = amp[c] ** 2 if target == "power" else amp[c]
        fit = fit_aperiodic(obs[keep], keep, target)
        pred = np.maximum(fit.evaluate(band_bins), 0.0)
        new_amp = np.sqrt(pred) if target == "power" else pred
        coeffs[c, band_bins] = new_amp * np.exp(1j * phase[c, band_bins])
    out = Spectrum(coeffs, spec.n_time).to_signal()
    return out.reshape(x.shape)


# ---------------------------------------------------------------------------
# temporal imputation (multipoint bridge)
# ---------------------------------------------------------------------------

def temporal_impute(x: np.ndarray, window: tuple[int, int], hurst: float = 1e-5,
                    seed: int = 0) -> np.ndarray:
    """Replace a time window by an anchored fractional Brownian bridge.

    Three anchors (window start, centre, end) keep their original values;
    the bridge fluctuation is scaled to the increment std of the unmasked
    neighbourhood, so the imputed segment is locally plausible but carries
    no class-locked structure. Windows of up to three samples are entirely
    anchors and pass through unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    x2 = x[None] if x.ndim == 1 else x
    t0, t1 = int(window[0]), int(window[1])
    t = x2.shape[-1]
    if not 0 <= t0 < t1 <= t:
        raise ValueError(f"window {window} outside signal of length {t}")
    length = t1 - t0
    offsets = sorted({0, (length - 1) // 2, length - 1})
    if len(offsets) >= length:
        return x.copy()

    out = x2.copy()
    times = (np.asarray(offsets) + 1.0) / length
    for c in range(x2.shape[0]):
        left, right = x2[c, max(0, t0 - length):t0], x2[c, t1:t1 + length]
        diffs = np.concatenate([np.diff(left), np.diff(right)])
        if len(diffs) < 2:
            diffs = np.concatenate([np.diff(x2[c, :t0]), np.diff(x2[c, t1:])])
        scale = float(diffs.std()) if len(diffs) else 0.0
        anchors = BridgeAnchors.from_points(times, x2[c, t0 + np.asarray(offsets)], hurst)
        seg = mfbb(length, anchors, hurst,
                   np.random.default_rng(np.random.SeedSequence([int(seed), 0x6d66, c])),
                   scale=scale)
        out[c, t0:t1] = seg
        out[c, t0 + np.asarray(offsets)] = x2[c, t0 + np.asarray(offsets)]
    return out.reshape(x.shape)


# ---------------------------------------------------------------------------
# PGD and AIM
# ---------------------------------------------------------------------------

@dataclass
class AdversarialConfig:
    epsilon: float
    alpha: float | None = None      # None: 2.5 * epsilon / iterations
    iterations: int = 10
    norm: str = "linf"
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0 when given")

    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else 2.5 * self.epsilon / self.iterations


@dataclass
class AdversarialCounterpart:
    x_adv: np.ndarray
    delta0: np.ndarray
    config: AdversarialConfig


def _project(delta: np.ndarray, cfg: AdversarialConfig, batched: bool) -> np.ndarray:
    if cfg.norm == "linf":
        return np.clip(delta, -cfg.epsilon, cfg.epsilon)
    flat = delta.reshape(len(delta), -1) if batched else delta.reshape(1, -1)
    norms = np.linalg.norm(flat, axis=1)
    factor = np.minimum(1.0, cfg.epsilon / np.maximum(norms, 1e-300))
    return (flat * factor[:, None]).reshape(delta.shape)


def pgd(model: Model, x, y, cfg: AdversarialConfig) -> AdversarialCounterpart:
    """Projected gradient ascent on the cross-entropy loss around x.

    x'_{t+1} = proj_ball(x'_t + alpha * sign(grad_x L(f(x'_t), y))), starting
    from a uniform perturbation in [-eps, eps]. Works on a single sample or a
    batch; per-sample starts are seeded independently of batch composition.
    """
    xs = np.asarray(x, dtype=np.float64)
    batched = xs.ndim != len(model.input_shape)
    xb = xs if batched else xs[None]
    yb = np.asarray(y).reshape(-1) if batched else np.asarray([y])

    delta0 = np.empty_like(xb)
    for i in range(len(xb)):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x706764, i]))
        delta0[i] = rng.uniform(-cfg.epsilon, cfg.epsilon, size=model.input_shape)
    delta0 = _project(delta0, cfg, batched=True)

    alpha = cfg.step_size()
    xa = xb + delta0
    for _ in range(cfg.iterations):
        g = input_gradient(model, xa, yb)
        if not np.all(np.isfinite(g)):
            raise AttackError("non-finite gradient during PGD")
        xa = xb + _project(xa + alpha * np.sign(g) - xb, cfg, batched=True)
    if not np.all(np.isfinite(xa)):
        raise AttackError("non-finite adversarial point")
    if not batched:
        xa, delta0 = xa[0], delta0[0]
    return AdversarialCounterpart(xa, delta0, cfg)


@dataclass
class EpsilonCalibration:
    epsilon: float
    trace: tuple            # (epsilon, full-replacement accuracy) pairs
    chance: float
    tol: float


def calibrate_epsilon(model: Model, data: Dataset, cfg: AdversarialConfig,
                      grid=None, chance: float | None = None, tol: float = 0.05,
                      domain: Domain | None = None) -> EpsilonCalibration:
    """Smallest epsilon on a geometric grid that drives full-replacement
    accuracy down to chance level (within tol). Raises CalibrationError with
    the full trace attached when even the largest epsilon is not enough.

    ``domain`` selects what "full replacement" means: the domain's all-ones
    mask (which for spectral masking keeps the DC bin) rather than the raw
    counterpart. Time-domain full masks cover everything, so only the
    spectral domain behaves differently from the default.
    """
    if chance is None:
        chance = 1.0 / model.num_classes
    if grid is None:
        scale = float(data.x.std())
        grid = np.geomspace(0.05, 4.0, 10) * (scale if scale > 0 else 1.0)
    grid = np.sort(np.asarray(grid, dtype=np.float64))

    trace = []
    for eps in grid:
        adv = pgd(model, data.x, data.y, replace(cfg, epsilon=float(eps)))
        if domain is None:
            replaced = adv.x_adv
        else:
            mask = subset_to_mask(full_subset(Domain(domain), data.x.shape[1:]),
                                  data.x.shape[1:])
            replaced = np.stack([aim_mask(data.x[i], adv.x_adv[i], mask)
                                 for i in range(len(data))])
        acc = float(np.mean(np.argmax(model.logits(replaced), axis=-1) == data.y))
        trace.append((float(eps), acc))
    for eps, acc in trace:
        if acc <= chance + tol:
            return EpsilonCalibration(eps, tuple(trace), chance, tol)
    raise CalibrationError(
        f"no epsilon in the grid reaches chance + {tol}", tuple(trace))


def counterpart_to_json(cp: AdversarialCounterpart) -> str:
    """Serialize a counterpart (values, delta0, config) for exact replay."""
    doc = {"format": "aimeval-counterpart/1",
           "shape": list(cp.x_adv.shape),
           "x_adv": [float(v) for v in cp.x_adv.ravel()],
           "delta0": [float(v) for v in cp.delta0.ravel()],
           "config": {"epsilon": cp.config.epsilon, "alpha": cp.config.alpha,
                      "iterations": cp.config.iterations,
                      "norm": cp.config.norm, "seed": cp.config.seed}}
    return json.dumps(doc, sort_keys=True)


def counterpart_from_json(text: str) -> AdversarialCounterpart:
    doc = json.loads(text)
    if doc.get("format") != "aimeval-counterpart/1":
        raise ValueError("not a serialized adversarial counterpart")
    shape = tuple(doc["shape"])
    return AdversarialCounterpart(
        np.asarray(doc["x_adv"], dtype=np.float64).reshape(shape),
        np.asarray(doc["delta0"], dtype=np.float64).reshape(shape),
        AdversarialConfig(**doc["config"]))


def mask_to_json(mask: BinaryMask) -> str:
    doc = {"format": "aimeval-mask/1", "domain": mask.domain.value,
           "shape": list(mask.values.shape),
           "values": [int(v) for v in mask.values.ravel()]}
    return json.dumps(doc, sort_keys=True)


def mask_from_json(text: str) -> BinaryMask:
    doc = json.loads(text)
    if doc.get("format") != "aimeval-mask/1":
        raise ValueError("not a serialized mask")
    values = np.asarray(doc["values"], dtype=bool).reshape(tuple(doc["shape"]))
    return BinaryMask(values, Domain(doc["domain"]))


def aim_mask(x: np.ndarray, x_adv: np.ndarray, mask: BinaryMask) -> np.ndarray:
    """Blend x' = (1-M) . x + M . x_adv; exact feature swap, no mixing.

    SPECTRAL masks swap the complex rfft coefficients of the band and
    transform back; other domains swap raw positions.
    """
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if mask.domain == Domain.SPECTRAL:
        spec, spec_adv = Spectrum.from_signal(x), Spectrum.from_signal(x_adv)
        coeffs = np.where(mask.values, spec_adv.coeffs, spec.coeffs)
        return Spectrum(coeffs, spec.n_time).to_signal().reshape(x.shape)
    return np.where(mask.values, x_adv, x)


def half_freq_targets(band: tuple[int, int], n_bins: int) -> tuple[list[int], list[int]]:
    """Bins hit by the half-frequency correction, plus those that fell below
    the frequency resolution and were clamped to bin 1."""
    targets, clamped = [], []
    for f in range(int(band[0]), int(band[1]) + 1):
        tgt = int(np.floor(f / 2.0 + 0.5))
        if tgt < 1:
            clamped.append(f)
            tgt = 1
        if tgt < n_bins:
            targets.append(tgt)
    return sorted(set(targets)), clamped


def half_freq_correction(x: np.ndarray, x_adv: np.ndarray,
                         band: tuple[int, int]) -> np.ndarray:
    """Replace the half-frequency bins of the band from the counterpart.

    Rectifying distortions can shift content to half the apparent frequency,
    so for every band bin f the bin nearest f/2 is also taken from x_adv.
    Bins below the resolution clamp to bin 1 and are logged.
    """
    x = np.asarray(x, dtype=np.float64)
    spec, spec_adv = Spectrum.from_signal(x), Spectrum.from_signal(np.asarray(x_adv))
    if not 1 <= band[0] <= band[1] <= spec.n_bins - 1:
        raise ValueError(f"band {band} outside bins 1..{spec.n_bins - 1}")
    targets, clamped = half_freq_targets(band, spec.n_bins)
    if clamped:
        log.warning("half-frequency correction clamped bins %s to bin 1", clamped)
    coeffs = spec.coeffs.copy()
    coeffs[..., targets] = spec_adv.coeffs[..., targets]
    return Spectrum(coeffs, spec.n_time).to_signal().reshape(x.shape)


# ---------------------------------------------------------------------------
# operator interface used by the evaluation protocol
# ---------------------------------------------------------------------------

class MaskingOperator:
    """Uniform interface: optional per-sample preparation, then masking."""

    name = "?"

    def compatible(self, domain: Domain, data_kind: str) -> bool:
        if data_kind == "grid":
            return domain == Domain.GRID
        return domain in (Domain.SPATIAL, Domain.TEMPORAL, Domain.SPECTRAL)

    def prepare(self, model: Model, data: Dataset, seed: int = 0):
        return [None] * len(data)

    def apply(self, x: np.ndarray, subset: FeatureSubset, state=None,
              seed: int = 0) -> np.ndarray:
        raise NotImplementedError

    def apply_full(self, x: np.ndarray, domain: Domain, state=None,
                   seed: int = 0) -> np.ndarray:
        return self.apply(x, full_subset(domain, x.shape), state, seed)


class IdentityOperator(MaskingOperator):
    """No-op masking; a test hook that should never degrade accuracy."""

    name = "IDENTITY"

    def apply(self, x, subset, state=None, seed=0):
        return np.array(x, dtype=np.float64, copy=True)


class ZeroingOperator(MaskingOperator):
    name = "ZEROING"

    def apply(self, x, subset, state=None, seed=0):
        return zero_mask(x, subset)


class MdRoadOperator(MaskingOperator):
    """Domain-matched imputation: Laplacian (channels/pixels), 1/f fit
    (bands), multipoint bridge (windows)."""

    name = "MDROAD"

    def __init__(self, montage: NeighborGraph | None = None,
                 noise_frac: float = 0.01, hurst: float = 1e-5,
                 spectral_target: str = "power"):
        self.montage = montage
        self.noise_frac = noise_frac
        self.hurst = hurst
        self.spectral_target = spectral_target
        self._grids: dict = {}

    def _grid_graph(self, shape) -> NeighborGraph:
        if shape not in self._grids:
            self._grids[shape] = NeighborGraph.grid(*shape)
        return self._grids[shape]

    def compatible(self, domain, data_kind):
        if not super().compatible(domain, data_kind):
            return False
        if domain == Domain.SPATIAL:
            return self.montage is not None
        return True

    def apply(self, x, subset, state=None, seed=0):
        x = np.asarray(x, dtype=np.float64)
        if subset.domain == Domain.SPATIAL:
            if self.montage is None:
                raise ImputationError("spatial imputation needs a montage graph")
            sigma = self.noise_frac * x.std(axis=-1)
            return laplacian_impute(x, subset.indices, self.montage, sigma, seed)
        if subset.domain == Domain.GRID:
            graph = self._grid_graph(x.shape)
            sigma = self.noise_frac * float(x.std())
            flat = laplacian_impute(x.reshape(-1, 1), subset.indices, graph,
                                    sigma, seed)
            return flat.reshape(x.shape)
        if subset.domain == Domain.TEMPORAL:
            return temporal_impute(x, subset.indices, self.hurst, seed)
        if subset.domain == Domain.SPECTRAL:
            n_bins = x.shape[-1] // 2 + 1
            lo, hi = subset.indices
            # too little unmasked context to anchor the 4-term fit: fall back
            # to fitting the whole positive spectrum, matching apply_full
            unmasked = (n_bins - 1) - (min(hi, n_bins - 1) - max(lo, 1) + 1)
            fit_bins = "unmasked" if unmasked >= 4 else "all"
            return spectral_impute(x, subset.indices, self.spectral_target,
                                   fit_bins=fit_bins)
        raise ValueError(f"unknown domain {subset.domain!r}")


class AimOperator(MaskingOperator):
    """Adversarial information masking around a PGD counterpart."""

    name = "AIM"

    def __init__(self, adv: AdversarialConfig):
        self.adv = adv

    def prepare(self, model, data, seed=0):
        counter = pgd(model, data.x, data.y, replace(self.adv, seed=int(seed)))
        return list(counter.x_adv)

    def apply(self, x, subset, state=None, seed=0):
        if state is None:
            raise ValueError("AIM needs the prepared adversarial counterpart")
        return aim_mask(np.asarray(x, dtype=np.float64), state,
                        subset_to_mask(subset, np.shape(x)))


OPERATOR_NAMES = ("ZEROING", "MDROAD", "AIM", "IDENTITY")
