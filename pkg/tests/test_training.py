import json

import numpy as np
import pytest

from helpers import TINY, tiny_corpus
from segmn import autodiff as ad
from segmn import training
from segmn.training import (
    ABLATION_ROWS,
    ExperimentConfig,
    TrainingDiverged,
    ablation_harness,
    build_model,
    config_from_mapping,
    evaluate,
    format_table,
    load_config,
    portability_harness,
    train,
)


@pytest.fixture(scope="module")
def corpus():
    return tiny_corpus(n=16)


def checksum(model):
    return ad.parameters_checksum(model.params().values())


def test_defaults_match_documented_values():
    c = ExperimentConfig()
    assert (c.lr, c.batch_size, c.epochs, c.d, c.dk, len(c.conv_channels)) == (1e-3, 32, 200, 64, 64, 2)


def test_zero_learning_rate_leaves_parameters(corpus):
    cfg = ExperimentConfig(**TINY, lr=0.0)
    before = checksum(build_model(cfg, corpus))
    res = train(cfg.with_(epochs=3), corpus)
    assert checksum(res.model) == before


def test_same_seed_identical_different_seed_differs(corpus):
    a = train(ExperimentConfig(**TINY, seed=1), corpus)
    b = train(ExperimentConfig(**TINY, seed=1), corpus)
    c = train(ExperimentConfig(**TINY, seed=2), corpus)
    assert checksum(a.model) == checksum(b.model)
    def strip(hist):
        return [{k: v for k, v in h.items() if k != "wallclock"} for h in hist]

    assert strip(a.history) == strip(b.history)
    assert checksum(a.model) != checksum(c.model)


def test_self_pairs_option():
    c = tiny_corpus(n=6, seed=4, test_fraction=0.0)
    on = train(ExperimentConfig(**dict(TINY, epochs=1, val_fraction=0.0, self_pairs=True)), c)
    off = train(ExperimentConfig(**dict(TINY, epochs=1, val_fraction=0.0)), c)
    assert on.history[0]["pairs"] == 15 + 6 and off.history[0]["pairs"] == 15


def test_overfits_ten_pairs():
    c = tiny_corpus(n=5, seed=3, test_fraction=0.0)
    cfg = ExperimentConfig(**dict(TINY, epochs=500, val_fraction=0.0, lr=3e-3))
    res = train(cfg, c)
    assert len(res.history) == 500
    final = res.history[-1]["train_mse"]
    assert final <= 1e-4, final


def test_evaluation_does_not_mutate_parameters(corpus):
    res = train(ExperimentConfig(**TINY), corpus)
    before = checksum(res.model)
    rep = evaluate(res.model, corpus)
    assert checksum(res.model) == before
    assert rep.n_queries == len(corpus.test_ids)
    assert rep.n_pairs == len(corpus.test_ids) * len(corpus.train_ids)


def test_training_log_records(corpus, tmp_path):
    path = tmp_path / "log.jsonl"
    train(ExperimentConfig(**dict(TINY, eval_every=1)), corpus, log_path=path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["epoch"] for r in recs] == [1, 2]
    for r in recs:
        assert {"epoch", "train_mse", "val_mse", "wallclock", "test"} <= set(r)


def test_best_checkpoint_restored(corpus):
    res = train(ExperimentConfig(**dict(TINY, epochs=4)), corpus)
    best = min(h["val_mse"] for h in res.history)
    assert res.best_val_mse == best
    assert res.history[res.best_epoch - 1]["val_mse"] == best


def test_target_mse_stops_early(corpus):
    res = train(ExperimentConfig(**dict(TINY, epochs=50, target_mse=1.0)), corpus)
    assert len(res.history) == 1


def test_non_finite_loss_aborts(corpus, monkeypatch):
    real = training.build_model

    def poisoned(cfg, c):
        m = real(cfg, c)
        m.matcher.mlp_b.values[...] = np.nan
        return m

    monkeypatch.setattr(training, "build_model", poisoned)
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(ExperimentConfig(**TINY), corpus)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown config keys: bogus"):
        config_from_mapping({"bogus": 1})
    with pytest.raises(ValueError, match="variant"):
        ExperimentConfig(variant="both")
    p = tmp_path / "c.yaml"
    p.write_text("variant: edge\nspm_layers: 2\nconv_channels: [8, 8]\n")
    cfg = load_config(p)
    assert (cfg.variant, cfg.spm_layers, cfg.conv_channels) == ("edge", 2, (8, 8))
    p.write_text("nested:\n  a: 1\n")
    with pytest.raises(ValueError, match="flat"):
        load_config(p)


def test_ablation_rows_cover_variant_grid():
    assert {(v, min(s, 1)) for _, v, s in ABLATION_ROWS} == {(v, s) for v in ("node", "edge", "dual") for s in (0, 1)}


def test_ablation_harness_schema_and_determinism(corpus):
    base = ExperimentConfig(**dict(TINY, epochs=1))
    rows = ablation_harness(base, corpus)
    assert [r["model"] for r in rows] == [name for name, _, _ in ABLATION_ROWS]
    assert rows[-1]["model"] == "DE+SPM(SEGMN)"
    assert all(r["status"] == "ok" for r in rows)
    for r in rows:
        assert r["mse"] >= 0 and -1 <= r["spearman"] <= 1 and 0 <= r["p@10"] <= 1
    assert ablation_harness(base, corpus) == rows
    assert "DE+SPM(SEGMN)" in format_table(rows)


def test_failed_run_marks_row_and_continues(corpus, monkeypatch):
    real = training.train

    def flaky(cfg, c, *a, **kw):
        if cfg.variant == "edge":
            raise RuntimeError("boom")
        return real(cfg, c, *a, **kw)

    monkeypatch.setattr(training, "train", flaky)
    rows = ablation_harness(ExperimentConfig(**dict(TINY, epochs=1)), corpus)
    assert len(rows) == 6
    status = {r["model"]: r["status"] for r in rows}
    assert status["edge"].startswith("failed: RuntimeError: boom")
    assert status["DE+SPM(SEGMN)"] == "ok"
    assert "failed" in format_table(rows)


def test_portability_harness(corpus):
    rows = portability_harness(ExperimentConfig(**dict(TINY, epochs=1)), corpus)
    assert len(rows) == 4
    assert [r["spm_positions"] for r in rows] == [[], [1], [1, 2], [1, 2, 3]]
    assert rows[0]["spm_executions"] == 0
    assert all(r["spm_executions"] > 0 for r in rows[1:])
    assert all(r["status"] == "ok" for r in rows)
