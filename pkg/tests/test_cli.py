import csv
import hashlib
import json

import numpy as np
import pytest

from pimforge import cli, config
from pimforge.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from pimforge.config import ConfigError, RunConfig
from pimforge.datagen import allocate_counts, load_split
from pimforge.datagen.dataset import sample_plan
from pimforge.datagen.io import ManifestRecord, read_probability_map, write_manifest
from pimforge.evaluation import aggregate, evaluate_maps
from pimforge.model import ModelConfig, TwoStreamModel, model_forward
from pimforge.registry import REFERENCE_COUNTS, DatasetRegistryEntry, load_registry, save_registry
from pimforge.training import LOG_FIELDS, make_optimizer

SMALL_MODEL = {"patch_size": 8, "widths": [8, 8, 8, 8], "mlp_ratio": 1, "decoder_dim": 4, "stem_channels": 2}


def write_config(tmp_path, **sections):
    cfg = RunConfig()
    cfg.data.train_pristine = cfg.data.train_forged = 3
    cfg.data.test_pristine = cfg.data.test_forged = 3
    cfg.data.image_size = 32
    cfg.optim.steps = 1
    cfg.optim.batch_size = 2
    raw = cfg.to_dict()
    raw["model"].update(SMALL_MODEL)
    for name, over in sections.items():
        raw[name].update(over)
    path = tmp_path / "run.toml"
    path.write_text(config.from_dict(raw).dumps())
    return path


@pytest.fixture
def dataset(tmp_path):
    path = write_config(tmp_path)
    assert cli.main(["simulate", "--config", str(path)]) == 0
    return path


# config

def test_config_round_trip_equal():
    cfg = config.from_dict({"preset": "paper-reference", "seed": 5, "optim": {"steps": 10}})
    assert config.loads(cfg.dumps()) == cfg
    assert config.loads(RunConfig().dumps()) == RunConfig()


def test_presets_echo_reference_values():
    ref = config.from_dict({"preset": "paper-reference"})
    assert (ref.optim.learning_rate, ref.optim.weight_decay) == (6e-5, 1e-5)
    assert (ref.optim.beta1, ref.optim.beta2) == (0.9, 0.999)
    assert (ref.optim.batch_size, ref.optim.validate_every) == (28, 1600)
    assert ref.data.image_size == 512
    desk = config.from_dict({})
    assert (desk.optim.batch_size, desk.optim.steps, desk.data.image_size) == (8, 2000, 64)


@pytest.mark.parametrize("raw", [
    {"preset": "huge"},
    {"optim": {"learning_rate": -1}},
    {"optim": {"lr": 1}},
    {"bogus": 1},
    {"data": {"image_size": 62}},
    {"eval": {"threshold": 1.0}},
    {"seed": -3},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config.from_dict(raw)


def test_load_checks_path_parents(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[paths]\ndata_dir = "missing/deeper/data"\n')
    with pytest.raises(ConfigError):
        config.load(path)
    path.write_text('[paths]\ndata_dir = "data"\n')
    assert config.load(path).paths.data_dir == str(tmp_path / "data")


# exit codes

def test_bad_config_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[optim]\nlearning_rate = 'fast'\n")
    assert cli.main(["simulate", "--config", str(path)]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2


def test_missing_dataset_exit_3(tmp_path):
    path = write_config(tmp_path)
    assert cli.main(["eval", "--config", str(path), "--checkpoint", "oracle"]) == 3
    assert cli.main(["train", "--config", str(path)]) == 3


def test_unwritable_output_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    path = write_config(tmp_path)
    assert cli.main(["simulate", "--config", str(path), "--out", str(blocker / "sub")]) == 3


def test_nan_training_exit_4(dataset, tmp_path, monkeypatch):
    from pimforge import training

    def broken(model, batch, state, w):
        raise training.NumericFailure("non-finite loss", {"L_M": float("nan")})

    monkeypatch.setattr(training, "train_step", broken)
    assert cli.main(["train", "--config", str(dataset)]) == 4


# simulate

def test_simulate_twice_byte_identical(tmp_path):
    digests = []
    for run in ("a", "b"):
        (tmp_path / run).mkdir()
        path = write_config(tmp_path / run, data={"train_pristine": 5, "train_forged": 5})
        assert cli.main(["simulate", "--config", str(path), "--seed", "7"]) == 0
        files = sorted(p for p in (tmp_path / run / "data").rglob("*") if p.is_file())
        digests.append({str(p.relative_to(tmp_path / run)): hashlib.sha256(p.read_bytes()).hexdigest()
                        for p in files})
    assert digests[0] == digests[1]


def test_mix_counts_for_100():
    plan = sample_plan(0, 100, {"splice": 0.5, "copy-move": 0.3, "inpaint": 0.2}, seed=3)
    counts = {k: sum(1 for kind, _ in plan if kind == k) for k in ("splice", "copy-move", "inpaint")}
    for k, expected in (("splice", 50), ("copy-move", 30), ("inpaint", 20)):
        assert abs(counts[k] - expected) <= 1
    assert sum(allocate_counts(100, {"splice": 1, "pida-blend": 1, "inpaint": 1}).values()) == 100


def test_registry_written_and_verified(dataset):
    entries = load_registry(dataset.parent / "data" / "registry.json")
    assert [(e.split, e.real, e.fake) for e in entries] == [("train", 3, 3), ("test", 3, 3)]


def test_registry_casia_reference_round_trip(tmp_path):
    real, fake, per_type = REFERENCE_COUNTS["CASIAv2"]
    assert (real, fake, per_type["copy-move"], per_type["splice"]) == (7491, 5123, 3295, 1828)
    types = ["pristine"] * real + ["copy-move"] * per_type["copy-move"] + ["splice"] * per_type["splice"]
    write_manifest(tmp_path / "casia.jsonl",
                   [ManifestRecord(f"i/{n}.png", f"m/{n}.png", f"b/{n}.png", t, n) for n, t in enumerate(types)])
    entry = DatasetRegistryEntry.from_manifest("CASIAv2", "train", tmp_path / "casia.jsonl")
    assert entry.matches_reference()
    save_registry(tmp_path / "reg.json", [entry])
    (back,) = load_registry(tmp_path / "reg.json")
    assert (back.real, back.fake, back.per_type) == (7491, 5123, {"copy-move": 3295, "splice": 1828})


def test_registry_detects_stale_counts(tmp_path):
    write_manifest(tmp_path / "m.jsonl", [ManifestRecord("i", "m", "b", "splice", 0)])
    entry = DatasetRegistryEntry.from_manifest("x", "test", tmp_path / "m.jsonl")
    entry.fake = 2
    save_registry(tmp_path / "reg.json", [entry])
    with pytest.raises(ValueError):
        load_registry(tmp_path / "reg.json")


# train

def test_one_step_train_log(dataset, tmp_path):
    out = tmp_path / "run1"
    assert cli.main(["train", "--config", str(dataset), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "train_log.csv")))
    assert rows[0] == list(LOG_FIELDS)
    assert len(rows) == 2 and rows[1][0] == "1"
    values = [float(v) for v in rows[1][1:]]
    assert all(np.isfinite(values))
    w = RunConfig().loss
    assert values[4] == pytest.approx(values[0] + w.lambda_b * values[1] + w.lambda_c * values[2]
                                      + w.lambda_r * values[3], rel=1e-6)
    model, _, meta = load_checkpoint(out / "checkpoint_final.pimf")
    assert meta["step"] == 1


def test_resume_continues_and_rejects_other_geometry(dataset, tmp_path):
    out = tmp_path / "run2"
    assert cli.main(["train", "--config", str(dataset), "--out", str(out)]) == 0
    raw = config.load(dataset).to_dict()
    raw["optim"]["steps"] = 2
    more = tmp_path / "more.toml"
    more.write_text(config.from_dict(raw).dumps())
    assert cli.main(["train", "--config", str(more), "--out", str(tmp_path / "run3"),
                     "--checkpoint", str(out / "checkpoint_final.pimf")]) == 0
    rows = list(csv.reader(open(tmp_path / "run3" / "train_log.csv")))
    assert [r[0] for r in rows[1:]] == ["2"]
    raw["model"]["widths"] = [8, 8, 16, 16]
    other = tmp_path / "other.toml"
    other.write_text(config.from_dict(raw).dumps())
    assert cli.main(["train", "--config", str(other), "--out", str(tmp_path / "run4"),
                     "--checkpoint", str(out / "checkpoint_final.pimf")]) == 2


# checkpoints

def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = TwoStreamModel(ModelConfig(**SMALL_MODEL, seed=4))
    state = make_optimizer(model)
    state.init_for(model.parameters())
    save_checkpoint(tmp_path / "a.pimf", model, state, {"step": 3})
    back, st, meta = load_checkpoint(tmp_path / "a.pimf")
    assert meta["step"] == 3
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and p1.data.dtype == p2.data.dtype and p1.data.tobytes() == p2.data.tobytes()
    img = np.random.default_rng(0).uniform(size=(1, 3, 32, 32))
    assert np.array_equal(model_forward(img, model).forgery_prob.data, model_forward(img, back).forgery_prob.data)
    assert st.learning_rate == state.learning_rate
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "a.pimf", expect=ModelConfig(**{**SMALL_MODEL, "widths": (8, 8, 8, 16)}))


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.pimf").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "x.pimf")


# eval and perturb

def test_oracle_eval_is_perfect(dataset, tmp_path, capsys):
    out = tmp_path / "ev"
    assert cli.main(["eval", "--config", str(dataset), "--checkpoint", "oracle", "--out", str(out), "--sweep"]) == 0
    agg = json.loads(capsys.readouterr().out)
    assert (agg["pixel_f1"], agg["pixel_mcc"], agg["pixel_iou"], agg["pixel_auc"]) == (1.0, 1.0, 1.0, 1.0)
    assert agg["image_auc"] == 1.0
    sweep = list(csv.DictReader(open(out / "report_sweep.csv")))
    assert len(sweep) == 9 and all(float(r["f1"]) == 1.0 for r in sweep)


def test_saved_maps_reproduce_report(dataset, tmp_path):
    ckpt = tmp_path / "m.pimf"
    save_checkpoint(ckpt, TwoStreamModel(ModelConfig(**SMALL_MODEL, seed=1)))
    out = tmp_path / "ev"
    assert cli.main(["eval", "--config", str(dataset), "--checkpoint", str(ckpt), "--out", str(out),
                     "--save-maps"]) == 0
    report = json.loads((out / "report.json").read_text())
    test = load_split(dataset.parent / "data" / "test" / "manifest.jsonl")
    probs = np.stack([read_probability_map(out / "maps" / f"{sid}.png") for sid in test.ids])
    again = aggregate(evaluate_maps(probs, test.masks, test.ids, test.manip_types))
    assert again == report["aggregate"]


def test_perturb_grid_rows(dataset, tmp_path):
    out = tmp_path / "pt"
    assert cli.main(["perturb", "--config", str(dataset), "--checkpoint", "oracle", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "robustness.csv")))
    assert len(rows) == 60
    assert list(rows[0]) == ["kind", "severity", "auc", "n_images", "n_skipped"]
    assert all(float(r["auc"]) == 1.0 for r in rows)  # the oracle ignores the image


def test_eval_option_validation(dataset):
    assert cli.main(["eval", "--config", str(dataset), "--checkpoint", "oracle", "--threshold", "1.5"]) == 2
    assert cli.main(["eval", "--config", str(dataset)]) == 2
    assert cli.main(["eval", "--config", str(dataset), "--checkpoint", "missing.pimf"]) == 3
