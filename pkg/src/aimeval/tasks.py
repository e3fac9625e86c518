"""Synthetic classification tasks with planted, known-informative features.

Each generator hides the class signal in one feature domain: a fixed channel
subset (spatial), a fixed time window (temporal), the dominant one of the
per-class sinusoid frequencies (spectral), or a class-specific patch location
(grid). Everything else is noise, so the informative feature set is known
exactly and doubles as a ground-truth attribution oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

import json
from pathlib import Path

from .domains import Domain
from .masking import NeighborGraph
from .runtime import BUILDERS, Dataset, Model

# rows of a 4x4 Hadamard matrix; distinct +-1 class patterns
_H4 = np.array([[1, 1, 1, 1],
                [1, -1, 1, -1],
                [1, 1, -1, -1],
                [1, -1, -1, 1]], dtype=np.float64)


@dataclass
class TaskSpec:
    name: str
    domain: Domain
    classes: int = 3
    noise_std: float = 1.0
    amplitude: float = 1.2
    n_train: int = 512
    n_test: int = 256
    seed: int = 0
    # timeseries layouts
    channels: int = 4
    time: int = 96
    # spatial: channels arranged on a montage grid, signal on a fixed subset
    montage: tuple = (3, 3)
    informative_channels: tuple = (2, 4, 6)
    # temporal: signal confined to a window
    window: tuple = (36, 60)
    # spectral: every class bin carries a base tone, the sample's own class
    # bin is raised to `amplitude`, all over a 1/f background
    class_bins: tuple = (10, 18, 26)
    base_tone: float = 0.9
    background: float = 0.5
    # grid: one patch origin per class
    grid_shape: tuple = (12, 12)
    patch_size: int = 3
    patch_origins: tuple = ((2, 2), (8, 3), (5, 8))

    def __post_init__(self):
        self.domain = Domain(self.domain)
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.classes > len(_H4):
            raise ValueError(f"at most {len(_H4)} classes supported")
        if self.domain == Domain.SPATIAL:
            self.channels = self.montage[0] * self.montage[1]
            if any(not 0 <= c < self.channels for c in self.informative_channels):
                raise ValueError("informative channel outside the montage")
        if self.domain == Domain.TEMPORAL:
            t0, t1 = self.window
            if not 0 <= t0 < t1 <= self.time:
                raise ValueError(f"window {self.window} outside 0..{self.time}")
        if self.domain == Domain.SPECTRAL:
            if len(self.class_bins) < self.classes:
                raise ValueError("need one frequency bin per class")
            used = self.class_bins[:self.classes]
            if len(set(used)) != len(used):
                raise ValueError("duplicate class frequencies")
            if any(not 1 <= b <= self.time // 2 - 1 for b in self.class_bins):
                raise ValueError("class bin outside the positive spectrum")
            if not 0.0 <= self.base_tone < self.amplitude:
                raise ValueError("base tone must sit below the class amplitude")
        if self.domain == Domain.GRID:
            if len(self.patch_origins) < self.classes:
                raise ValueError("need one patch origin per class")
            h, w = self.grid_shape
            for r, c in self.patch_origins:
                if not (0 <= r <= h - self.patch_size and 0 <= c <= w - self.patch_size):
                    raise ValueError("patch outside the grid")

    @property
    def input_shape(self) -> tuple:
        if self.domain == Domain.GRID:
            return tuple(self.grid_shape)
        return (self.channels, self.time)


def make_task(name: str, **overrides) -> TaskSpec:
    """Shipped task presets; overrides replace individual fields."""
    presets = {
        "spatial": dict(domain=Domain.SPATIAL, time=64, amplitude=1.2),
        "temporal": dict(domain=Domain.TEMPORAL, channels=4, time=96, amplitude=1.2),
        "spectral": dict(domain=Domain.SPECTRAL, channels=2, time=128,
                         amplitude=1.6, base_tone=0.8, background=1.2,
                         class_bins=(11, 13, 15)),
        "grid": dict(domain=Domain.GRID, amplitude=1.5),
    }
    if name not in presets:
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(presets)}")
    spec = TaskSpec(name=name, **presets[name])
    return replace(spec, **overrides) if overrides else spec


def _split_rng(spec: TaskSpec, split: str) -> tuple[np.random.Generator, int]:
    tags = {"train": 0x7472, "test": 0x7465}
    if split not in tags:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    n = spec.n_train if split == "train" else spec.n_test
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), tags[split]]))
    return rng, n


def _class_patterns(spec: TaskSpec, width: int) -> np.ndarray:
    return spec.amplitude * _H4[:spec.classes, :width]


def generate(spec: TaskSpec, split: str = "train") -> Dataset:
    """Sample a dataset for the given split, deterministic per (seed, split)."""
    rng, n = _split_rng(spec, split)
    y = np.arange(n) % spec.classes

    if spec.domain == Domain.SPATIAL:
        x = rng.normal(0.0, spec.noise_std, size=(n, spec.channels, spec.time))
        patterns = _class_patterns(spec, len(spec.informative_channels))
        for cls in range(spec.classes):
            rows = np.asarray(spec.informative_channels)
            x[np.ix_(y == cls, rows)] += patterns[cls][None, :, None]
        return Dataset(x, y)

    if spec.domain == Domain.TEMPORAL:
        x = rng.normal(0.0, spec.noise_std, size=(n, spec.channels, spec.time))
        t0, t1 = spec.window
        patterns = _class_patterns(spec, spec.channels)
        for cls in range(spec.classes):
            x[y == cls, :, t0:t1] += patterns[cls][None, :, None]
        return Dataset(x, y)

    if spec.domain == Domain.SPECTRAL:
        t = spec.time
        n_bins = t // 2 + 1
        x = np.empty((n, spec.channels, t))
        # 1/f background: amplitude b * f^-1/2, random phases, Nyquist left out
        f = np.arange(1, n_bins - 1, dtype=np.float64)
        amp = 0.5 * t * spec.background / np.sqrt(f)    # |X_f| for unit time amp
        tones = np.asarray(spec.class_bins[:spec.classes])
        tt = np.arange(t)
        for i in range(n):
            coeffs = np.zeros((spec.channels, n_bins), dtype=np.complex128)
            theta = rng.uniform(0.0, 2.0 * np.pi, size=(spec.channels, len(f)))
            coeffs[:, 1:n_bins - 1] = amp * np.exp(1j * theta)
            x[i] = np.fft.irfft(coeffs, n=t, axis=-1)
            # base tone at every class bin, the sample's own bin raised; the
            # class is carried by which bin dominates, so a phase-blind model
            # must compare powers rather than detect presence
            phase = rng.uniform(0.0, 2.0 * np.pi,
                                size=(spec.channels, spec.classes))
            for cls, bin_c in enumerate(tones):
                a = spec.amplitude if cls == y[i] else spec.base_tone
                x[i] += a * np.sin(2.0 * np.pi * bin_c * tt / t
                                   + phase[:, cls][:, None])
        return Dataset(x, y)

    h, w = spec.grid_shape
    x = rng.normal(0.0, spec.noise_std, size=(n, h, w))
    p = spec.patch_size
    for cls in range(spec.classes):
        r, c = spec.patch_origins[cls]
        x[y == cls, r:r + p, c:c + p] += spec.amplitude
    return Dataset(x, y)


def montage_graph(spec: TaskSpec) -> NeighborGraph:
    if spec.domain != Domain.SPATIAL:
        raise ValueError("montage graphs exist for spatial tasks only")
    return NeighborGraph.grid(*spec.montage)


# ---------------------------------------------------------------------------
# ground-truth attribution
# ---------------------------------------------------------------------------

@dataclass
class OracleAttribution:
    """Indicator of the planted features, per class.

    Plugs into the degradation protocol through ``domain_scores``: positional
    domains get the indicator map of the sample's class, the spectral domain
    gets per-bin indicator scores.
    """

    name: str = field(default="ORACLE", init=False)
    maps: np.ndarray | None = None      # (classes, *input_shape)
    bins: np.ndarray | None = None      # (classes, n_bins)

    def indicator(self, y: int) -> np.ndarray:
        source = self.bins if self.maps is None else self.maps
        return source[int(y)]

    def domain_scores(self, model, x, y, domain, seed) -> np.ndarray:
        if domain == Domain.SPECTRAL:
            if self.bins is None:
                raise ValueError("this oracle carries no spectral indicator")
            return self.bins[int(y)]
        if self.maps is None:
            raise ValueError("this oracle carries no positional indicator")
        return self.maps[int(y)]


def oracle_attribution(spec: TaskSpec) -> OracleAttribution:
    shape = spec.input_shape
    if spec.domain == Domain.SPATIAL:
        maps = np.zeros((spec.classes, *shape))
        maps[:, list(spec.informative_channels), :] = 1.0
        return OracleAttribution(maps=maps)
    if spec.domain == Domain.TEMPORAL:
        maps = np.zeros((spec.classes, *shape))
        t0, t1 = spec.window
        maps[:, :, t0:t1] = 1.0
        return OracleAttribution(maps=maps)
    if spec.domain == Domain.SPECTRAL:
        bins = np.zeros((spec.classes, spec.time // 2 + 1))
        for cls in range(spec.classes):
            bins[cls, spec.class_bins[cls]] = 1.0
        return OracleAttribution(bins=bins)
    maps = np.zeros((spec.classes, *shape))
    p = spec.patch_size
    for cls in range(spec.classes):
        r, c = spec.patch_origins[cls]
        maps[cls, r:r + p, c:c + p] = 1.0
    return OracleAttribution(maps=maps)


# ---------------------------------------------------------------------------
# default models
# ---------------------------------------------------------------------------

def build_task_model(spec: TaskSpec, arch: str | None = None, seed: int = 0) -> Model:
    """Default architecture per task: a band-power conv net for the spectral
    task (phase-insensitive by construction), an MLP elsewhere."""
    if arch is None:
        arch = "conv1d_power" if spec.domain == Domain.SPECTRAL else "mlp"
    if arch not in BUILDERS:
        raise ValueError(f"unknown architecture {arch!r}; "
                         f"expected one of {sorted(BUILDERS)}")
    return BUILDERS[arch](spec.input_shape, spec.classes, seed=seed)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_TUPLE_FIELDS = ("montage", "informative_channels", "window", "class_bins",
                 "grid_shape", "patch_origins")


def spec_to_dict(spec: TaskSpec) -> dict:
    doc = {k: v for k, v in vars(spec).items()}
    doc["domain"] = spec.domain.value
    for key in _TUPLE_FIELDS:
        doc[key] = [list(v) if isinstance(v, tuple) else v for v in doc[key]] \
            if key == "patch_origins" else list(doc[key])
    return doc


def spec_from_dict(doc: dict) -> TaskSpec:
    kwargs = dict(doc)
    for key in _TUPLE_FIELDS:
        if key in kwargs:
            if key == "patch_origins":
                kwargs[key] = tuple(tuple(v) for v in kwargs[key])
            else:
                kwargs[key] = tuple(kwargs[key])
    return TaskSpec(**kwargs)


def save_dataset(directory, spec: TaskSpec, splits: dict[str, Dataset]) -> None:
    """Persist datasets as one CSV per split (rows: label + flattened sample)
    next to a single JSON spec sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "spec.json").write_text(
        json.dumps(spec_to_dict(spec), sort_keys=True, indent=2) + "\n")
    d = int(np.prod(spec.input_shape))
    header = "y," + ",".join(f"x{j}" for j in range(d))
    for split, data in splits.items():
        with open(directory / f"{split}.csv", "w") as fh:
            fh.write(header + "\n")
            flat = data.x.reshape(len(data), -1)
            for label, row in zip(data.y, flat):
                fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in row)
                         + "\n")


def load_dataset(directory, split: str) -> tuple[Dataset, TaskSpec]:
    directory = Path(directory)
    spec = spec_from_dict(json.loads((directory / "spec.json").read_text()))
    path = directory / f"{split}.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such dataset split")
    with open(path) as fh:
        lines = fh.read().splitlines()
    rows = [line.split(",") for line in lines[1:] if line]
    y = np.array([int(r[0]) for r in rows], dtype=np.int64)
    x = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return Dataset(x.reshape(len(rows), *spec.input_shape), y), spec
