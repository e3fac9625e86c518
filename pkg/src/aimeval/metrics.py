"""MoRF/LeRF degradation protocol and reliability diagnostics.

A degradation curve masks the most (MoRF) or least (LeRF) relevant feature
subset at a grid of ratios and records accuracy. Area metrics normalise by
the span between unmasked accuracy and the fully masked endpoint:

    AOC = mean_k (acc0 - morf_k) / (acc0 - full)
    ABC = mean_k (lerf_k - morf_k) / (acc0 - full)
    AUC = mean_k (lerf_k - full)  / (acc0 - full)

so ABC == AUC - (1 - AOC) identically. Reliability diagnostics: the random
attribution bias (zero in expectation for any operator), Spearman consistency
between MoRF and LeRF method rankings, and cross-configuration stability.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .attribution import AttributionConfig, attribute, method_tag
from .domains import Domain, Order, Spectrum, select_subset, spectral_attribute
from .masking import MaskingOperator
from .runtime import Dataset, Model, accuracy

DEFAULT_RATIOS = tuple(round(0.05 * i, 2) for i in range(1, 11))


class DegenerateCurveError(RuntimeError):
    """acc0 and the fully masked endpoint coincide; areas are undefined."""


def child_seed(*parts: int) -> int:
    """Stable derived seed; order-sensitive and collision-resistant."""
    ss = np.random.SeedSequence([int(p) & 0x7FFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class DegradationCurve:
    ratios: tuple
    acc_morf: tuple
    acc_lerf: tuple
    acc0: float
    acc_full: float
    meta: dict

    def __post_init__(self):
        if not (len(self.ratios) == len(self.acc_morf) == len(self.acc_lerf)):
            raise ValueError("ratio and accuracy grids must align")
        if list(self.ratios) != sorted(self.ratios) or len(set(self.ratios)) != len(self.ratios):
            raise ValueError("ratios must be strictly increasing")


@dataclass
class AreaMetrics:
    aoc: float
    abc: float
    auc: float

    def as_dict(self) -> dict:
        return {"aoc": self.aoc, "abc": self.abc, "auc": self.auc}


def area_metrics(curve: DegradationCurve) -> AreaMetrics:
    denom = curve.acc0 - curve.acc_full
    if abs(denom) < 1e-6:
        raise DegenerateCurveError(
            f"acc0 ({curve.acc0}) and fully-masked accuracy ({curve.acc_full}) "
            "coincide; the operator did not remove usable information")
    morf = np.asarray(curve.acc_morf)
    lerf = np.asarray(curve.acc_lerf)
    return AreaMetrics(aoc=float(np.mean((curve.acc0 - morf) / denom)),
                       abc=float(np.mean((lerf - morf) / denom)),
                       auc=float(np.mean((lerf - curve.acc_full) / denom)))


# ---------------------------------------------------------------------------
# curve CSV round trip
# ---------------------------------------------------------------------------

def curve_to_csv(curve: DegradationCurve, path) -> None:
    meta = " ".join(f"{k}={curve.meta[k]}" for k in sorted(curve.meta))
    with open(path, "w") as fh:
        fh.write("# aimeval-curve/1\n")
        fh.write(f"# {meta}\n")
        fh.write(f"# acc0={curve.acc0!r} acc_full={curve.acc_full!r}\n")
        fh.write("ratio,acc_morf,acc_lerf\n")
        for k, m, l in zip(curve.ratios, curve.acc_morf, curve.acc_lerf):
            fh.write(f"{float(k)!r},{float(m)!r},{float(l)!r}\n")


def curve_from_csv(path) -> DegradationCurve:
    meta: dict = {}
    acc0 = acc_full = None
    rows = []
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "# aimeval-curve/1":
        raise ValueError(f"{path}: not a curve file")
    for ln in lines[1:]:
        if ln.startswith("# acc0="):
            parts = dict(p.split("=", 1) for p in ln[2:].split())
            acc0, acc_full = float(parts["acc0"]), float(parts["acc_full"])
        elif ln.startswith("# "):
            meta.update(p.split("=", 1) for p in ln[2:].split() if "=" in p)
        elif ln and ln != "ratio,acc_morf,acc_lerf":
            k, m, l = ln.split(",")
            rows.append((float(k), float(m), float(l)))
    if acc0 is None:
        raise ValueError(f"{path}: missing endpoint header")
    return DegradationCurve(tuple(r[0] for r in rows), tuple(r[1] for r in rows),
                            tuple(r[2] for r in rows), acc0, acc_full, meta)


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

@dataclass
class ProtocolCache:
    """Reusable per-(operator, domain) state: adversarial counterparts and
    protocol endpoints, so permutation sweeps do not recompute them."""

    states: list | None = None
    acc0: float | None = None
    acc_full: float | None = None


def _batch_accuracy(model: Model, xs: np.ndarray, ys: np.ndarray) -> float:
    return float(np.mean(np.argmax(model.logits(xs), axis=-1) == ys))


def _sample_scores(model, x, y, method, domain, sample_seed, spectral_mode):
    """Domain representation of the sample's saliency: a map for positional
    domains, per-bin scores for the spectral one."""
    if hasattr(method, "domain_scores"):
        return method.domain_scores(model, x, y, domain, sample_seed)
    cfg = replace(method, seed=sample_seed)
    if domain == Domain.SPECTRAL:
        return spectral_attribute(model, x, int(y), cfg, mode=spectral_mode)
    return attribute(model, x, int(y), cfg).values


def _select(scores, power, domain, k, order):
    return select_subset(domain, scores, k, order, power=power)


def run_curve(model: Model, data: Dataset, method, domain: Domain,
              operator: MaskingOperator, ratios=DEFAULT_RATIOS, seed: int = 0,
              cache: ProtocolCache | None = None,
              spectral_mode: str = "chain") -> DegradationCurve:
    """One MoRF/LeRF degradation curve.

    ``method`` is an AttributionConfig or any object with a
    ``domain_scores(model, x, y, domain, seed)`` method (the planted-feature
    oracle uses this hook). Adversarial counterparts, acc0, and the fully
    masked endpoint are cached across calls via ``cache``; masking noise is
    re-drawn per call from ``seed``.
    """
    domain = Domain(domain)
    data_kind = "grid" if domain == Domain.GRID else "timeseries"
    if not operator.compatible(domain, data_kind):
        raise ValueError(f"operator {operator.name} is not compatible with "
                         f"domain {domain.value} on {data_kind} data")
    ratios = tuple(float(k) for k in ratios)
    n = len(data)
    cache = cache if cache is not None else ProtocolCache()

    if cache.states is None:
        cache.states = operator.prepare(model, data, seed=child_seed(seed, 0x70))
    if cache.acc0 is None:
        cache.acc0 = accuracy(model, data)
    if cache.acc_full is None:
        full = np.stack([operator.apply_full(data.x[i], domain, cache.states[i],
                                             seed=child_seed(seed, 0x66, i))
                         for i in range(n)])
        cache.acc_full = _batch_accuracy(model, full, data.y)

    scores, powers = [], []
    for i in range(n):
        s = _sample_scores(model, data.x[i], data.y[i], method, domain,
                           child_seed(_method_seed(method), seed, 0x61, i),
                           spectral_mode)
        scores.append(np.asarray(s, dtype=np.float64))
        if domain == Domain.SPECTRAL:
            powers.append(Spectrum.from_signal(data.x[i]).power().sum(axis=0))
        else:
            powers.append(None)

    acc_morf, acc_lerf = [], []
    for j, k in enumerate(ratios):
        for order, sink in ((Order.MORF, acc_morf), (Order.LERF, acc_lerf)):
            masked = np.stack([
                operator.apply(data.x[i],
                               _select(scores[i], powers[i], domain, k, order),
                               cache.states[i],
                               seed=child_seed(seed, 0x6d, i, j,
                                               0 if order == Order.MORF else 1))
                for i in range(n)])
            sink.append(_batch_accuracy(model, masked, data.y))

    tag = method_tag(method) if isinstance(method, AttributionConfig) else \
        getattr(method, "name", type(method).__name__)
    return DegradationCurve(ratios, tuple(acc_morf), tuple(acc_lerf),
                            cache.acc0, cache.acc_full,
                            {"method": tag, "operator": operator.name,
                             "domain": domain.value,
                             "model": getattr(model, "arch", "custom"),
                             "seed": seed, "n": n})


def _method_seed(method) -> int:
    return method.seed if isinstance(method, AttributionConfig) else 0


# ---------------------------------------------------------------------------
# reliability diagnostics
# ---------------------------------------------------------------------------

def average_ranks(values) -> np.ndarray:
    """Ranks 1..n with ties receiving the average of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Rank correlation with average ranks; 0.0 when either side is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("spearman needs two equal-length 1-D arrays, n >= 2")
    ra, rb = average_ranks(a), average_ranks(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((ra - ra.mean()) * (rb - rb.mean())).mean() / (sa * sb))


@dataclass
class ConsistencyResult:
    ratios: tuple
    rho_per_ratio: tuple
    degenerate: tuple          # zero-variance rankings at this ratio
    mean_rho: float            # over ratios <= 0.5
    methods: tuple
    rank_morf: tuple = ()      # method ranks per ratio, MoRF degradation
    rank_lerf: tuple = ()      # method ranks per ratio, LeRF preservation


def ranking_consistency(curves: Mapping[str, DegradationCurve]) -> ConsistencyResult:
    """Spearman agreement between MoRF and LeRF method rankings per ratio.

    MoRF ranks methods by acc0 - acc_morf[k], LeRF by acc_lerf[k] - acc_full
    (higher = more faithful on both sides). Zero-variance rankings get
    rho = 0 and a degeneracy flag.
    """
    methods = tuple(sorted(curves))
    if len(methods) < 2:
        raise ValueError("consistency needs at least two methods")
    ratios = curves[methods[0]].ratios
    for m in methods:
        if curves[m].ratios != ratios:
            raise ValueError("curves must share the ratio grid")
    rhos, degen, ranks_m, ranks_l = [], [], [], []
    for j in range(len(ratios)):
        morf = np.array([curves[m].acc0 - curves[m].acc_morf[j] for m in methods])
        lerf = np.array([curves[m].acc_lerf[j] - curves[m].acc_full for m in methods])
        rm, rl = average_ranks(morf), average_ranks(lerf)
        ranks_m.append(tuple(rm))
        ranks_l.append(tuple(rl))
        degen.append(bool(rm.std() == 0.0 or rl.std() == 0.0))
        rhos.append(spearman(morf, lerf))
    keep = [j for j, k in enumerate(ratios) if k <= 0.5 + 1e-12]
    mean_rho = float(np.mean([rhos[j] for j in keep])) if keep else float("nan")
    return ConsistencyResult(ratios, tuple(rhos), tuple(degen), mean_rho, methods,
                             tuple(ranks_m), tuple(ranks_l))


@dataclass
class RandomBiasResult:
    mean_abc: float
    std_abc: float             # population std across permutations
    n_perm: int
    abcs: tuple

    def within_clt_band(self, factor: float = 3.0) -> bool:
        if self.std_abc == 0.0:
            return self.mean_abc == 0.0
        return bool(abs(self.mean_abc) <= factor * self.std_abc / np.sqrt(self.n_perm))


def random_bias(model: Model, data: Dataset, operator: MaskingOperator,
                domain: Domain, ratios=DEFAULT_RATIOS, n_perm: int = 200,
                seed: int = 0, cache: ProtocolCache | None = None) -> RandomBiasResult:
    """ABC of freshly drawn random attributions, repeated n_perm times.

    Under any masking operator the expected ABC of a random attribution is
    zero; the sample mean should sit inside the central-limit band around 0.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    cache = cache if cache is not None else ProtocolCache()
    abcs = []
    for p in range(n_perm):
        cfg = AttributionConfig(method="RANDOM", seed=child_seed(seed, 0x72, p))
        curve = run_curve(model, data, cfg, domain, operator, ratios,
                          seed=child_seed(seed, 0x62, p), cache=cache)
        # identical curves have ABC identically 0 (the limit is well defined
        # even when the denominator degenerates, e.g. the identity operator)
        if curve.acc_morf == curve.acc_lerf:
            abcs.append(0.0)
        else:
            abcs.append(area_metrics(curve).abc)
    arr = np.asarray(abcs)
    return RandomBiasResult(float(arr.mean()), float(arr.std()), n_perm, tuple(abcs))


def stability(metrics) -> dict:
    """Population std of each area metric across configurations.

    A single configuration has zero spread by definition.
    """
    rows = [m.as_dict() if isinstance(m, AreaMetrics) else dict(m) for m in metrics]
    if not rows:
        raise ValueError("stability needs at least one configuration")
    return {key: float(np.std([r[key] for r in rows])) for key in ("aoc", "abc", "auc")}


@dataclass
class ReliabilityReport:
    bias: RandomBiasResult | None = None
    consistency: ConsistencyResult | None = None
    stability_std: dict | None = None

    def as_dict(self) -> dict:
        out: dict = {}
        if self.bias is not None:
            out["random_bias"] = {"mean_abc": self.bias.mean_abc,
                                  "std_abc": self.bias.std_abc,
                                  "n_perm": self.bias.n_perm,
                                  "within_band": self.bias.within_clt_band()}
        if self.consistency is not None:
            out["consistency"] = {"mean_rho": self.consistency.mean_rho,
                                  "rho_per_ratio": list(self.consistency.rho_per_ratio),
                                  "ratios": list(self.consistency.ratios),
                                  "degenerate": list(self.consistency.degenerate)}
        if self.stability_std is not None:
            out["stability_std"] = dict(self.stability_std)
        return out
