import dataclasses

import numpy as np
import pytest

from himt.cli import main
from himt.config import ExperimentConfig, load_config, parse_config
from himt.errors import ConfigError, PathError
from himt.experiment import build_bags, cross_validate, evaluate_checkpoints, run_ablation, train_fold
from himt.metrics import kfold_split
from himt.synth import synth_generate

TINY = dict(per_level_k=8, d_k=8, d_attn=4, epochs=2, synth_n_patients=30, synth_rows_per_level=10,
            synth_d_in=5, synth_genes_per_category=(2, 2, 2, 2, 2, 2))


@pytest.fixture(scope="module")
def tiny():
    cfg = ExperimentConfig(**TINY)
    ds = synth_generate(cfg.synth_config(), 11)
    return cfg, ds.records, ds.signature


# ---------------------------------------------------------------- config


def test_parse_config_keys():
    cfg = parse_config("""
        # comment
        lr = 0.001
        loss.event_term_survival = true
        levels = 20x,10x
        synth.censor_rate = 0.1
        synth.genes_per_category = 1,2,3
    """)
    assert cfg.lr == 0.001 and cfg.loss_event_term_survival is True
    assert cfg.levels == ("20x", "10x") and cfg.synth_censor_rate == 0.1
    assert cfg.synth_genes_per_category == (1, 2, 3)


def test_config_defaults_follow_protocol():
    cfg = ExperimentConfig()
    assert (cfg.lr, cfg.weight_decay, cfg.k_folds, cfg.per_level_k, cfg.n_bins, cfg.d_k) == \
        (2e-4, 1e-5, 5, 1000, 4, 256)


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="lerning_rate"):
        parse_config("lerning_rate = 1")


def test_config_bad_value():
    with pytest.raises(ConfigError):
        parse_config("epochs = many")
    with pytest.raises(ConfigError):
        parse_config("levels = 40x")


def test_config_roundtrip():
    cfg = ExperimentConfig(**TINY, loss_event_term_survival=True, beta=0.25)
    assert parse_config(cfg.dumps()) == cfg
    assert cfg.digest() == parse_config(cfg.dumps()).digest()


def test_load_config_missing(tmp_path):
    with pytest.raises(PathError):
        load_config(tmp_path / "none.txt")


# ---------------------------------------------------------------- training


def test_same_seed_same_losses(tiny):
    cfg, records, sig = tiny
    bags = build_bags(records, sig, cfg)
    ids = [r.patient_id for r in records][:20]
    a = train_fold(cfg, bags, ids).runlog.epoch_losses
    b = train_fold(cfg, bags, ids).runlog.epoch_losses
    assert a == b and all(np.isfinite(a))


def test_zero_lr_constant_loss(tiny):
    cfg, records, sig = tiny
    cfg = cfg.replace(lr=0.0, weight_decay=0.0, dropout=0.0, epochs=3)
    bags = build_bags(records, sig, cfg)
    losses = train_fold(cfg, bags, [r.patient_id for r in records][:20]).runlog.epoch_losses
    assert max(losses) - min(losses) < 1e-12


def test_no_test_fold_leakage(tiny):
    cfg, records, sig = tiny
    train_ids, test_ids = kfold_split([r.patient_id for r in records], 5, cfg.seed)[0]
    held = set(test_ids)
    perturbed = [dataclasses.replace(r, surv_time=r.surv_time * 7.3 + 1, censor=1 - r.censor)
                 if r.patient_id in held else r for r in records]
    results = []
    for recs in (records, perturbed):
        bags = build_bags(recs, sig, cfg)
        results.append(train_fold(cfg, bags, train_ids, 0, test_ids))
    a, b = results
    assert a.bins == b.bins and a.horizon == b.horizon
    assert a.runlog.epoch_losses == b.runlog.epoch_losses
    for pa, pb in zip(a.model.parameters(), b.model.parameters()):
        np.testing.assert_array_equal(pa.value, pb.value)


def test_threads_do_not_change_results(tiny, tmp_path, monkeypatch):
    cfg, records, sig = tiny
    cfg = cfg.replace(epochs=1)
    monkeypatch.setenv("HIMT_THREADS", "1")
    cross_validate(cfg, records, sig, tmp_path / "one")
    monkeypatch.setenv("HIMT_THREADS", "2")
    cross_validate(cfg, records, sig, tmp_path / "two")
    for name in ("folds.csv", "summary.csv", "fold0.ckpt", "fold4.ckpt"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_eval_replays_training_scores(tiny, tmp_path):
    cfg, records, sig = tiny
    _, reports = cross_validate(cfg, records, sig, tmp_path / "run")
    again = evaluate_checkpoints(cfg, records, sig, tmp_path / "run", tmp_path / "eval1")
    evaluate_checkpoints(cfg, records, sig, tmp_path / "run", tmp_path / "eval2")
    as_rows = lambda rs: np.array([[r.fold, r.c_index, r.auc, r.n_pairs] for r in rs])
    np.testing.assert_array_equal(as_rows(again), as_rows(reports))
    for name in ("folds.csv", "summary.csv"):
        assert (tmp_path / "eval1" / name).read_bytes() == (tmp_path / "eval2" / name).read_bytes()
        assert (tmp_path / "eval1" / name).read_bytes() == (tmp_path / "run" / name).read_bytes()


def test_ablation_rows(tiny, tmp_path):
    cfg, records, sig = tiny
    rows = run_ablation(cfg.replace(epochs=1), records, sig, tmp_path / "abl.csv")
    assert [r["setting"] for r in rows] == ["5x", "10x", "20x", "20x+10x", "20x+10x+5x"]
    assert [r["mean_instances"] for r in rows] == [8, 8, 8, 16, 24]
    header = (tmp_path / "abl.csv").read_text().splitlines()[0].split(",")
    assert {"c_mean", "c_std", "auc_mean", "auc_std"} <= set(header)
    assert len((tmp_path / "abl.csv").read_text().splitlines()) == 6


# ---------------------------------------------------------------- CLI


def _write_cfg(path, **extra):
    kv = {**TINY, **extra}
    cfg = ExperimentConfig(**kv)
    path.write_text(cfg.dumps())
    return path


def test_cli_end_to_end(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "cfg.txt", data_dir=str(tmp_path / "data"))
    assert main(["synth", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "data")]) == 0
    assert "planted-risk c_index" in capsys.readouterr().out
    assert main(["train", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "fold4.ckpt").exists()
    assert main(["eval", "--config", str(cfg), "--seed", "3", "--checkpoint", str(tmp_path / "run"),
                 "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "folds.csv").read_bytes() == (tmp_path / "run" / "folds.csv").read_bytes()
    assert main(["train", "--config", str(cfg), "--levels", "20x", "--out", str(tmp_path / "r20")]) == 0


def test_cli_synth_censor_zero(tmp_path):
    cfg = _write_cfg(tmp_path / "cfg.txt", synth_censor_rate=0.0)
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    flags = [line.split(",")[2] for line in (tmp_path / "d" / "labels.csv").read_text().splitlines()]
    assert set(flags) == {"0"}


def test_cli_missing_checkpoint(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "cfg.txt", data_dir=str(tmp_path))
    code = main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "nope")])
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert code != 0 and err.startswith("error: PathError:")


def test_cli_unknown_config_key(tmp_path, capsys):
    (tmp_path / "cfg.txt").write_text("bogus = 1\n")
    assert main(["synth", "--config", str(tmp_path / "cfg.txt")]) != 0
    assert "error: ConfigError:" in capsys.readouterr().err


def test_cli_missing_data(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "cfg.txt", data_dir=str(tmp_path / "absent"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert "error: PathError:" in capsys.readouterr().err
