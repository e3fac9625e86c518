"""Synthetic tasks: planted-feature statistics, determinism, presets, the
ground-truth oracle, and dataset persistence."""

from dataclasses import replace

import numpy as np
import pytest

from aimeval.domains import Domain, Spectrum
from aimeval.runtime import Dataset, TrainConfig, accuracy, train
from aimeval.tasks import (TaskSpec, build_task_model, generate, make_task,
                           load_dataset, montage_graph, oracle_attribution,
                           save_dataset, spec_from_dict, spec_to_dict)

_H4 = np.array([[1, 1, 1, 1],
                [1, -1, 1, -1],
                [1, 1, -1, -1],
                [1, -1, -1, 1]], dtype=np.float64)


# ---------------------------------------------------------------------------
# presets and validation
# ---------------------------------------------------------------------------

def test_presets():
    spatial = make_task("spatial")
    assert spatial.domain == Domain.SPATIAL
    assert spatial.channels == 9            # montage rows x cols
    assert spatial.input_shape == (9, 64)
    temporal = make_task("temporal")
    assert temporal.window == (36, 60) and temporal.input_shape == (4, 96)
    spectral = make_task("spectral")
    assert spectral.class_bins == (11, 13, 15)
    assert spectral.amplitude == 1.6 and spectral.base_tone == 0.8
    grid = make_task("grid")
    assert grid.input_shape == (12, 12) and grid.patch_size == 3
    with pytest.raises(ValueError):
        make_task("images")


def test_preset_overrides():
    spec = make_task("spatial", n_train=64, seed=9)
    assert spec.n_train == 64 and spec.seed == 9
    assert spec.domain == Domain.SPATIAL


def test_spec_validation():
    with pytest.raises(ValueError):
        make_task("spectral", class_bins=(5, 5, 9))
    with pytest.raises(ValueError):
        make_task("spectral", class_bins=(0, 4, 8))
    with pytest.raises(ValueError):
        make_task("spectral", class_bins=(11, 13, 64))
    with pytest.raises(ValueError):
        make_task("spectral", base_tone=1.6)        # must sit below amplitude
    with pytest.raises(ValueError):
        make_task("temporal", window=(60, 36))
    with pytest.raises(ValueError):
        make_task("temporal", window=(36, 200))
    with pytest.raises(ValueError):
        make_task("spatial", informative_channels=(2, 11))
    with pytest.raises(ValueError):
        make_task("grid", patch_origins=((2, 2), (8, 3), (11, 11)))
    with pytest.raises(ValueError):
        make_task("spatial", classes=5)
    with pytest.raises(ValueError):
        make_task("spatial", classes=1)
    with pytest.raises(ValueError):
        make_task("spectral", class_bins=(11, 13))  # fewer bins than classes


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def test_generation_is_deterministic():
    spec = make_task("temporal", n_train=32, n_test=16)
    a, b = generate(spec, "train"), generate(spec, "train")
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    t = generate(spec, "test")
    assert t.x.shape == (16, 4, 96)
    assert not np.array_equal(a.x[:16], t.x)
    other = generate(replace(spec, seed=1), "train")
    assert not np.array_equal(a.x, other.x)
    with pytest.raises(ValueError):
        generate(spec, "validation")


def test_splits_are_independent():
    spec = make_task("temporal", n_train=128, n_test=16)
    t1 = generate(spec, "test")
    t2 = generate(replace(spec, n_train=8), "test")
    assert np.array_equal(t1.x, t2.x) and np.array_equal(t1.y, t2.y)


def test_labels_are_balanced():
    data = generate(make_task("grid", n_train=60), "train")
    assert np.array_equal(np.bincount(data.y), [20, 20, 20])


def test_spatial_class_means():
    spec = make_task("spatial", n_train=510)
    data = generate(spec, "train")
    informative = list(spec.informative_channels)
    rest = [c for c in range(spec.channels) if c not in informative]
    for cls in range(spec.classes):
        cls_mean = data.x[data.y == cls].mean(axis=(0, 2))
        want = spec.amplitude * _H4[cls, :len(informative)]
        assert np.allclose(cls_mean[informative], want, atol=0.05)
        assert np.allclose(cls_mean[rest], 0.0, atol=0.05)


def test_temporal_class_means():
    spec = make_task("temporal", n_train=510)
    data = generate(spec, "train")
    t0, t1 = spec.window
    for cls in range(spec.classes):
        grp = data.x[data.y == cls]
        inside = grp[:, :, t0:t1].mean(axis=(0, 2))
        want = spec.amplitude * _H4[cls, :spec.channels]
        assert np.allclose(inside, want, atol=0.06)
        outside = np.concatenate([grp[:, :, :t0], grp[:, :, t1:]], axis=-1)
        assert np.allclose(outside.mean(axis=(0, 2)), 0.0, atol=0.06)


def test_spectral_own_bin_dominates_every_sample():
    spec = make_task("spectral")
    data = generate(spec, "test")
    bins = np.asarray(spec.class_bins)
    for i in range(len(data)):
        power = Spectrum.from_signal(data.x[i]).power().sum(axis=0)
        own = power[bins[data.y[i]]]
        others = [power[b] for c, b in enumerate(bins) if c != data.y[i]]
        assert own > max(others)


def test_grid_patch_means():
    spec = make_task("grid", n_train=300)
    data = generate(spec, "train")
    p = spec.patch_size
    for cls in range(spec.classes):
        r, c = spec.patch_origins[cls]
        grp = data.x[data.y == cls]
        patch = grp[:, r:r + p, c:c + p].mean()
        assert abs(patch - spec.amplitude) < 0.1
        outside = grp.copy()
        outside[:, r:r + p, c:c + p] = np.nan
        assert abs(np.nanmean(outside)) < 0.05


def test_planted_channels_carry_the_class_signal():
    # a model trained on the spatial task must lose the class signal when the
    # planted channels are zeroed, and keep it when only they remain
    spec = make_task("spatial", n_train=240, n_test=120, time=32)
    train_data = generate(spec, "train")
    test_data = generate(spec, "test")
    model = build_task_model(spec, seed=0)
    train(model, train_data, TrainConfig(learning_rate=0.05, epochs=10,
                                         batch_size=32, seed=1))
    assert accuracy(model, test_data) > 0.85
    informative = list(spec.informative_channels)
    destroyed = test_data.x.copy()
    destroyed[:, informative, :] = 0.0
    acc_destroyed = np.mean(
        np.argmax(model.logits(destroyed), axis=-1) == test_data.y)
    assert acc_destroyed <= 1.0 / spec.classes + 0.15
    preserved = np.zeros_like(test_data.x)
    preserved[:, informative, :] = test_data.x[:, informative, :]
    acc_preserved = np.mean(
        np.argmax(model.logits(preserved), axis=-1) == test_data.y)
    assert acc_preserved > 0.8


# ---------------------------------------------------------------------------
# oracle attribution
# ---------------------------------------------------------------------------

def test_oracle_indicators():
    spec = make_task("spatial")
    oracle = oracle_attribution(spec)
    assert oracle.maps.shape == (3, 9, 64)
    for cls in range(3):
        ind = oracle.indicator(cls)
        assert ind.sum() == 3 * 64
        assert np.all(ind[list(spec.informative_channels)] == 1.0)

    spec = make_task("temporal")
    ind = oracle_attribution(spec).indicator(1)
    assert ind.sum() == 4 * 24 and np.all(ind[:, 36:60] == 1.0)

    spec = make_task("spectral")
    oracle = oracle_attribution(spec)
    for cls, b in enumerate(spec.class_bins):
        ind = oracle.indicator(cls)
        assert ind.shape == (65,) and ind.sum() == 1.0 and ind[b] == 1.0

    spec = make_task("grid")
    ind = oracle_attribution(spec).indicator(2)
    assert ind.sum() == 9
    r, c = spec.patch_origins[2]
    assert np.all(ind[r:r + 3, c:c + 3] == 1.0)


def test_oracle_domain_scores_and_errors():
    spatial = oracle_attribution(make_task("spatial"))
    got = spatial.domain_scores(None, None, 1, Domain.SPATIAL, 0)
    assert np.array_equal(got, spatial.maps[1])
    with pytest.raises(ValueError):
        spatial.domain_scores(None, None, 1, Domain.SPECTRAL, 0)
    spectral = oracle_attribution(make_task("spectral"))
    got = spectral.domain_scores(None, None, 2, Domain.SPECTRAL, 0)
    assert np.array_equal(got, spectral.bins[2])
    with pytest.raises(ValueError):
        spectral.domain_scores(None, None, 2, Domain.TEMPORAL, 0)


def test_montage_graph():
    g = montage_graph(make_task("spatial"))
    assert g.n_nodes == 9
    with pytest.raises(ValueError):
        montage_graph(make_task("grid"))


def test_build_task_model():
    spectral = build_task_model(make_task("spectral"))
    kinds = [type(layer).__name__ for layer in spectral.layers]
    assert kinds[0] == "Conv1D" and "Square" in kinds
    mlp = build_task_model(make_task("spatial"))
    assert mlp.input_shape == (9, 64) and mlp.num_classes == 3
    with pytest.raises(ValueError):
        build_task_model(make_task("spatial"), arch="transformer")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_spec_dict_roundtrip():
    for name in ("spatial", "temporal", "spectral", "grid"):
        spec = make_task(name)
        clone = spec_from_dict(spec_to_dict(spec))
        assert clone == spec


def test_dataset_save_load_roundtrip(tmp_path):
    spec = make_task("grid", n_train=12, n_test=6)
    splits = {"train": generate(spec, "train"), "test": generate(spec, "test")}
    save_dataset(tmp_path / "task", spec, splits)
    for split in ("train", "test"):
        data, loaded_spec = load_dataset(tmp_path / "task", split)
        assert loaded_spec == spec
        assert np.array_equal(data.x, splits[split].x)
        assert np.array_equal(data.y, splits[split].y)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "task", "eval")


def test_dataset_csv_shape(tmp_path):
    spec = make_task("temporal", n_train=4, n_test=2)
    save_dataset(tmp_path / "t", spec, {"train": generate(spec, "train")})
    lines = (tmp_path / "t" / "train.csv").read_text().strip().splitlines()
    assert lines[0].startswith("y,x0,") and len(lines) == 5
    assert len(lines[1].split(",")) == 1 + 4 * 96
