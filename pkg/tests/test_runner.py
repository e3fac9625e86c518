"""Run configs and end-to-end orchestration.

The heavyweight guarantee checked here is replay determinism: evaluating the
same config twice must reproduce every output file byte for byte. The small
configs keep training and the curve sweep cheap.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from aimeval.domains import Domain
from aimeval.masking import (AimOperator, IdentityOperator, MdRoadOperator,
                             ZeroingOperator)
from aimeval.metrics import child_seed, curve_from_csv
from aimeval.runner import (ConfigError, DEFAULT_METHODS, RunConfig,
                            build_operators, config_from_dict, evaluate_run,
                            load_config, prepare_run, train_run)
from aimeval.runtime import Model
from aimeval.tasks import generate, make_task, save_dataset


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_requires_exactly_one_source():
    with pytest.raises(ConfigError, match="exactly one of 'task' and 'dataset'"):
        RunConfig(task="spatial", dataset="somedir")
    with pytest.raises(ConfigError, match="exactly one of 'task' and 'dataset'"):
        RunConfig()


def test_config_overrides_need_task():
    with pytest.raises(ConfigError, match="'task_overrides' needs 'task'"):
        RunConfig(dataset="somedir", task_overrides={"time": 32})


def test_config_method_validation():
    with pytest.raises(ConfigError, match="'methods' must not be empty"):
        RunConfig(task="spatial", methods=())
    with pytest.raises(ConfigError, match="unknown tag 'XX'"):
        RunConfig(task="spatial", methods=("GD", "XX"))
    with pytest.raises(ConfigError, match="unknown tag 'A'"):
        RunConfig(task="spatial", methods=("A",))
    # absolute-value variants and the task oracle are legal tags
    cfg = RunConfig(task="spatial", methods=("IGA", "ORACLE", "VG"))
    assert cfg.methods == ("IGA", "ORACLE", "VG")


def test_config_operator_validation():
    with pytest.raises(ConfigError, match="'operators' must not be empty"):
        RunConfig(task="spatial", operators={})
    with pytest.raises(ConfigError, match="unknown name 'FOO'"):
        RunConfig(task="spatial", operators={"FOO": {}})
    with pytest.raises(ConfigError, match="parameters must be an object"):
        RunConfig(task="spatial", operators={"ZEROING": 3})


def test_config_ratio_validation():
    with pytest.raises(ConfigError, match="'ratios' must not be empty"):
        RunConfig(task="spatial", ratios=())
    with pytest.raises(ConfigError, match="must lie in"):
        RunConfig(task="spatial", ratios=(0.0, 0.5))
    with pytest.raises(ConfigError, match="must lie in"):
        RunConfig(task="spatial", ratios=(0.5, 1.2))
    with pytest.raises(ConfigError, match="strictly increasing"):
        RunConfig(task="spatial", ratios=(0.5, 0.5))
    with pytest.raises(ConfigError, match="strictly increasing"):
        RunConfig(task="spatial", ratios=(0.6, 0.4))


def test_config_domain_and_count_validation():
    with pytest.raises(ConfigError, match="unknown domain 'fourier'"):
        RunConfig(task="spatial", domains=("spatial", "fourier"))
    with pytest.raises(ConfigError, match="'n_perm' must be >= 1"):
        RunConfig(task="spatial", n_perm=0)
    with pytest.raises(ConfigError, match="'eval_samples' must be >= 1"):
        RunConfig(task="spatial", eval_samples=0)
    with pytest.raises(ConfigError, match="'calib_samples' must be >= 1"):
        RunConfig(task="spatial", calib_samples=0)
    with pytest.raises(ConfigError, match="'spectral_mode'"):
        RunConfig(task="spatial", spectral_mode="both")


def test_config_defaults():
    cfg = RunConfig(task="temporal")
    assert cfg.methods == DEFAULT_METHODS
    assert set(cfg.operators) == {"ZEROING", "MDROAD", "AIM"}
    assert cfg.domains is None
    assert cfg.n_perm == 200


# ---------------------------------------------------------------------------
# dict / file parsing
# ---------------------------------------------------------------------------

def test_config_from_dict_minimal_and_roundtrip():
    cfg = config_from_dict({"task": "spatial"})
    assert cfg.task == "spatial" and cfg.dataset is None
    assert cfg.methods == DEFAULT_METHODS

    original = RunConfig(task="temporal", methods=("GD", "RANDOM"),
                         ratios=(0.25, 0.5), n_perm=3, seed=11,
                         operators={"ZEROING": {}},
                         domains=("temporal", "spectral"))
    doc = original.resolved()
    json.dumps(doc)
    assert config_from_dict(doc) == original


def test_config_from_dict_rejections():
    with pytest.raises(ConfigError, match="config root must be a JSON object"):
        config_from_dict(["task"])
    with pytest.raises(ConfigError, match="unknown config field"):
        config_from_dict({"task": "spatial", "foo": 1})
    with pytest.raises(ConfigError, match="'n_perm' has wrong type \\(str\\)"):
        config_from_dict({"task": "spatial", "n_perm": "5"})
    # JSON true is not an integer seed
    with pytest.raises(ConfigError, match="'seed' has wrong type \\(bool\\)"):
        config_from_dict({"task": "spatial", "seed": True})
    with pytest.raises(ConfigError, match="'methods' has wrong type"):
        config_from_dict({"task": "spatial", "methods": "GD"})


def test_load_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"task": "grid", "n_perm": 7}))
    cfg = load_config(path)
    assert cfg.task == "grid" and cfg.n_perm == 7

    bad = tmp_path / "bad.json"
    bad.write_text('{"task": "grid",}')
    with pytest.raises(ConfigError, match="invalid JSON at line 1"):
        load_config(bad)


# ---------------------------------------------------------------------------
# prepare_run
# ---------------------------------------------------------------------------

_QUICK_OVERRIDES = dict(time=32, n_train=96, n_test=48)


def _quick_cfg(**over):
    base = dict(task="spatial", task_overrides=dict(_QUICK_OVERRIDES),
                train=dict(epochs=3), methods=("GD", "RANDOM", "ORACLE"),
                operators={"ZEROING": {}}, ratios=(0.25, 0.5), n_perm=3,
                eval_samples=6)
    base.update(over)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def quick_ctx():
    return prepare_run(_quick_cfg(eval_samples=8))


def test_prepare_run_eval_subset(quick_ctx):
    ctx = quick_ctx
    assert ctx.spec.name == "spatial" and ctx.spec.time == 32
    assert len(ctx.eval_data) == 8
    assert np.array_equal(ctx.eval_data.x, ctx.test_data.x[:8])
    assert np.array_equal(ctx.eval_data.y, ctx.test_data.y[:8])
    assert len(ctx.history["loss"]) == 3
    assert 0.0 <= ctx.train_acc <= 1.0 and 0.0 <= ctx.test_acc <= 1.0

    big = prepare_run(_quick_cfg(eval_samples=500, train=dict(epochs=1)))
    assert len(big.eval_data) == 48


def test_prepare_run_deterministic(quick_ctx):
    again = prepare_run(_quick_cfg(eval_samples=8))
    assert again.model.to_json() == quick_ctx.model.to_json()
    assert np.array_equal(again.test_data.x, quick_ctx.test_data.x)
    assert again.history["loss"] == quick_ctx.history["loss"]


def test_prepare_run_from_dataset_dir(tmp_path):
    spec = make_task("grid", n_train=40, n_test=20, seed=123)
    splits = {"train": generate(spec, "train"), "test": generate(spec, "test")}
    save_dataset(tmp_path, spec, splits)

    cfg = RunConfig(dataset=str(tmp_path), train=dict(epochs=2))
    ctx = prepare_run(cfg)
    assert ctx.spec.name == "grid" and ctx.spec.grid_shape == spec.grid_shape
    assert len(ctx.train_data) == 40
    assert np.array_equal(ctx.test_data.x, splits["test"].x)
    assert len(ctx.eval_data) == 20


# ---------------------------------------------------------------------------
# operator construction
# ---------------------------------------------------------------------------

def test_build_operators_instances(quick_ctx):
    cfg = _quick_cfg(operators={
        "ZEROING": {}, "IDENTITY": {},
        "MDROAD": {"noise_frac": 0.05, "hurst": 0.3,
                   "spectral_target": "amplitude"},
        "AIM": {"epsilon": 0.7, "iterations": 4, "norm": "l2"},
    })
    ops, cals = build_operators(cfg, quick_ctx, Domain.SPATIAL, seed=17)
    assert cals == {}
    assert isinstance(ops["ZEROING"], ZeroingOperator)
    assert isinstance(ops["IDENTITY"], IdentityOperator)

    md = ops["MDROAD"]
    assert isinstance(md, MdRoadOperator)
    assert md.noise_frac == 0.05 and md.hurst == 0.3
    assert md.spectral_target == "amplitude"
    assert md.montage is not None
    assert md.montage.n_nodes == quick_ctx.spec.channels

    aim = ops["AIM"]
    assert isinstance(aim, AimOperator)
    assert aim.adv.epsilon == 0.7 and aim.adv.iterations == 4
    assert aim.adv.norm == "l2" and aim.adv.seed == 17


def test_build_operators_no_montage_off_spatial_tasks():
    cfg = RunConfig(task="temporal",
                    task_overrides=dict(time=32, window=(10, 22),
                                        n_train=48, n_test=24),
                    train=dict(epochs=1), operators={"MDROAD": {}})
    ctx = prepare_run(cfg)
    ops, _ = build_operators(cfg, ctx, Domain.TEMPORAL, seed=0)
    assert ops["MDROAD"].montage is None


def test_build_operators_aim_auto_calibration(quick_ctx):
    cfg = _quick_cfg(operators={"AIM": {"epsilon": "auto"}}, calib_samples=8)
    ops, cals = build_operators(cfg, quick_ctx, Domain.SPATIAL, seed=3)
    cal = cals["AIM"]
    assert set(cal) == {"epsilon", "chance", "tol", "trace"}
    assert cal["chance"] == pytest.approx(1 / 3) and cal["tol"] == 0.05
    assert ops["AIM"].adv.epsilon == cal["epsilon"]

    # the trace covers the whole grid and the chosen epsilon is the first
    # grid point whose fully-replaced accuracy reaches chance + tol
    trace = cal["trace"]
    assert len(trace) == 10
    sufficient = [eps for eps, acc in trace if acc <= cal["chance"] + cal["tol"]]
    assert sufficient and cal["epsilon"] == sufficient[0]


# ---------------------------------------------------------------------------
# evaluate_run
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "a"
    summary = evaluate_run(_quick_cfg(), out)
    return _quick_cfg(), out, summary


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_evaluate_run_summary_and_layout(mini_run):
    cfg, out, summary = mini_run
    assert set(summary) == {"task", "train_acc", "test_acc", "eval_samples",
                            "compatibility", "metrics"}
    assert summary["task"] == "spatial" and summary["eval_samples"] == 6
    assert summary["compatibility"] == ["ZEROING x spatial: ok"]

    cell = summary["metrics"]["ZEROING"]["spatial"]
    assert set(cell) == {"GD", "RANDOM", "ORACLE"}
    for vals in cell.values():
        assert set(vals) == {"aoc", "abc", "auc"}
        for v in vals.values():
            assert np.isfinite(v)

    names = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()}
    assert names == {"model.json", "metrics.json", "reliability.json",
                     "manifest.json",
                     "curves/curve__ZEROING__spatial__GD.csv",
                     "curves/curve__ZEROING__spatial__RANDOM.csv",
                     "curves/curve__ZEROING__spatial__ORACLE.csv"}
    assert json.loads((out / "metrics.json").read_text()) == summary


def test_evaluate_run_curve_files(mini_run):
    cfg, out, _ = mini_run
    path = out / "curves" / "curve__ZEROING__spatial__ORACLE.csv"
    assert path.read_text().splitlines()[0] == "# aimeval-curve/1"
    curve = curve_from_csv(path)
    assert curve.ratios == (0.25, 0.5)
    assert curve.meta["method"] == "ORACLE"
    assert curve.meta["operator"] == "ZEROING"
    assert curve.meta["domain"] == "spatial"
    assert curve.meta["n"] == "6"


def test_evaluate_run_manifest(mini_run):
    cfg, out, _ = mini_run
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["format"] == "aimeval-run/1"
    assert manifest["config"] == json.loads(json.dumps(cfg.resolved()))
    assert manifest["seeds"]["task"] == child_seed(cfg.seed, 0x7461)
    assert manifest["seeds"]["model"] == child_seed(cfg.seed, 0x6d6f)
    assert manifest["seeds"]["train"] == child_seed(cfg.seed, 0x7473)

    cells = manifest["seeds"]["cells"]
    assert set(cells) == {"ZEROING__spatial"}
    cell = cells["ZEROING__spatial"]
    assert cell["prepare"] == child_seed(cfg.seed, 0x7072, 0, 0)
    assert cell["random_bias"] == child_seed(cfg.seed, 0x7262, 0, 0)
    assert cell["curves"] == {m: child_seed(cfg.seed, 0x6376, 0, 0, i)
                              for i, m in enumerate(cfg.methods)}

    for rel, digest in manifest["files"].items():
        blob = (out / rel).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == digest
    assert set(manifest["files"]) == {
        "model.json", "metrics.json", "reliability.json",
        "curves/curve__ZEROING__spatial__GD.csv",
        "curves/curve__ZEROING__spatial__RANDOM.csv",
        "curves/curve__ZEROING__spatial__ORACLE.csv"}
    assert manifest["train"]["final_loss"] > 0.0


def test_evaluate_run_reliability(mini_run):
    cfg, out, _ = mini_run
    rel = json.loads((out / "reliability.json").read_text())
    cell = rel["ZEROING"]["spatial"]
    bias = cell["random_bias"]
    assert bias["n_perm"] == 3
    assert np.isfinite(bias["mean_abc"]) and bias["std_abc"] >= 0.0
    assert isinstance(bias["within_band"], bool)
    cons = cell["consistency"]
    assert cons["ratios"] == [0.25, 0.5]
    assert len(cons["rho_per_ratio"]) == 2


def test_evaluate_run_byte_identical_replay(mini_run, tmp_path):
    cfg, out, _ = mini_run
    replay = tmp_path / "b"
    evaluate_run(_quick_cfg(), replay)
    first, second = _tree(out), _tree(replay)
    assert set(first) == set(second)
    for name in first:
        assert first[name] == second[name], f"{name} differs between runs"


def test_evaluate_run_skips_incompatible_cells(tmp_path):
    cfg = _quick_cfg(domains=("spatial", "grid"), methods=("GD", "RANDOM"))
    summary = evaluate_run(cfg, tmp_path)
    assert "ZEROING x grid: incompatible" in summary["compatibility"]
    assert "ZEROING x spatial: ok" in summary["compatibility"]
    assert set(summary["metrics"]["ZEROING"]) == {"spatial"}

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["seeds"]["cells"]) == {"ZEROING__spatial"}
    assert not list((tmp_path / "curves").glob("*grid*"))

    rel = json.loads((tmp_path / "reliability.json").read_text())
    assert "stability" not in rel["ZEROING"]


def test_evaluate_run_cross_domain_stability(tmp_path):
    cfg = _quick_cfg(domains=("spatial", "temporal"), methods=("GD", "RANDOM"))
    summary = evaluate_run(cfg, tmp_path)
    assert set(summary["metrics"]["ZEROING"]) == {"spatial", "temporal"}

    rel = json.loads((tmp_path / "reliability.json").read_text())
    stab = rel["ZEROING"]["stability"]
    assert set(stab) == {"GD", "RANDOM"}
    for spread in stab.values():
        assert set(spread) == {"aoc", "abc", "auc"}
        for v in spread.values():
            assert v >= 0.0


# ---------------------------------------------------------------------------
# train_run
# ---------------------------------------------------------------------------

def test_train_run(tmp_path):
    doc = train_run(_quick_cfg(), tmp_path)
    assert doc["task"] == "spatial" and doc["epochs"] == 3
    assert len(doc["loss"]) == 3
    assert json.loads((tmp_path / "training.json").read_text()) == doc

    model = Model.load(tmp_path / "model.json")
    spec = make_task("spatial", seed=child_seed(0, 0x7461), **_QUICK_OVERRIDES)
    logits = model.logits(generate(spec, "test").x[:4])
    assert logits.shape == (4, spec.classes)
