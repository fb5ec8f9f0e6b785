from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from molcpt import ndiff as nd
from molcpt.canon import EMPTY_KEY, canonical_key
from molcpt.checkpoint import CheckpointError, dumps, loads
from molcpt.data import MISSING, TaskDataset
from molcpt.fragment import build_vocabulary, fragment_molecule
from molcpt.pipeline import (DEFAULT_GRID, PromptModel, RunConfig, Runner, build_model, expand_grid, finetune_run,
                             sweep, sweep_tsv)
from molcpt.smiles import parse_smiles
from molcpt.synthetic import PLANTED_SMILES


def encoder_bytes(enc) -> list[bytes]:
    return [t.data.tobytes() for t in enc.tensors()]


def test_zeroshot_is_deterministic_and_takes_no_steps(tiny):
    ds, base, pre = tiny
    cfg = replace(base, regime="zeroshot")
    a = finetune_run(ds, cfg, pre.encoder, pre.head)
    b = finetune_run(ds, cfg, pre.encoder, pre.head)
    assert a.metrics_tsv() == b.metrics_tsv()
    run = a.runs[0]
    assert run.best_epoch == 0 and {r[1] for r in run.rows} == {"valid", "test"}


def test_zeroshot_answers_are_class_means(tiny):
    ds, base, pre = tiny
    cfg = replace(base, regime="zeroshot")
    vocab = build_vocabulary([ds.graphs[i] for i in ds.indices("train")], cfg.rules, cfg.t)
    model = build_model(ds, cfg, pre.encoder, pre.head, vocab, 0)
    train = ds.indices("train")
    y = Runner(model, ds, cfg).outputs(train).data
    lab = ds.labels[train, 0]
    for c in (0, 1):
        assert np.allclose(model.banks[0].answers.data[c], y[lab == c].mean(axis=0), atol=1e-12)


@pytest.mark.parametrize("regime", ["frozen", "zeroshot"])
def test_fixed_encoder_regimes_leave_encoder_untouched(tiny, regime):
    ds, base, pre = tiny
    before = encoder_bytes(pre.encoder)
    res = finetune_run(ds, replace(base, regime=regime), pre.encoder, pre.head)
    assert encoder_bytes(res.best.model.encoder) == before
    assert encoder_bytes(pre.encoder) == before


def test_molcpt_updates_encoder_but_not_the_input(tiny):
    ds, base, pre = tiny
    before = encoder_bytes(pre.encoder)
    res = finetune_run(ds, replace(base, regime="molcpt", epochs=2), pre.encoder, pre.head)
    assert encoder_bytes(pre.encoder) == before
    if res.best.best_epoch > 0:
        assert encoder_bytes(res.best.model.encoder) != before


def test_trainable_sets_per_regime(tiny):
    ds, base, pre = tiny
    vocab = build_vocabulary([ds.graphs[i] for i in ds.indices("train")], base.rules, base.t)
    enc_ids = {id(t) for t in pre.encoder.tensors()}
    for regime, update_head, trains_enc, trains_head in [("frozen", None, False, False),
                                                          ("molcpt", None, True, True),
                                                          ("molcpt", False, True, False)]:
        cfg = replace(base, regime=regime, update_head=update_head)
        model = build_model(ds, cfg, pre.encoder, pre.head, vocab, 0)
        ids = {id(t) for t in Runner(model, ds, cfg).trainable()}
        assert ({id(t) for t in model.encoder.tensors()} <= ids) == trains_enc
        assert ({id(t) for t in model.head.tensors()} <= ids) == trains_head
        assert id(model.prompt.table) in ids and id(model.banks[0].answers) in ids
        assert not (enc_ids & ids)  # the model works on copies
    probe = replace(base, regime="probe", freeze_encoder=True)
    model = build_model(ds, probe, pre.encoder, pre.head, None, 0)
    assert len(Runner(model, ds, probe).trainable()) == 2


def test_model_selection_picks_best_validation_epoch(tiny):
    ds, base, pre = tiny
    run = finetune_run(ds, replace(base, regime="frozen", epochs=6), pre.encoder, pre.head).runs[0]
    valid = [(e, loss, auc) for e, split, loss, auc in run.rows if split == "valid"]
    best_auc = max(auc for _, _, auc in valid)
    tied = [v for v in valid if v[2] == best_auc]
    assert run.valid_auc == best_auc
    assert run.best_epoch == min(tied, key=lambda v: (v[1], v[0]))[0]
    assert run.rows[-1][:2] == (run.best_epoch, "test")


def test_metrics_tsv_format(tiny):
    ds, base, pre = tiny
    res = finetune_run(ds, replace(base, regime="frozen", epochs=2, seeds=(0, 1)), pre.encoder, pre.head)
    lines = res.metrics_tsv().splitlines()
    assert lines[0] == "epoch\tsplit\tloss\troc_auc"
    body = [l.split("\t") for l in lines[1:]]
    assert all(len(r) == 4 for r in body)
    splits = {r[1] for r in body}
    assert {"train@0", "valid@0", "test@1", "test_mean", "test_std"} <= splits
    assert float(body[-2][3]) == pytest.approx(res.test_mean)


def test_threads_do_not_change_results(tiny, monkeypatch):
    ds, base, pre = tiny
    cfg = replace(base, regime="frozen", epochs=1)
    monkeypatch.setattr("molcpt.pipeline.EVAL_CHUNK", 4)
    monkeypatch.setenv("MOLCPT_THREADS", "1")
    one = finetune_run(ds, cfg, pre.encoder, pre.head).metrics_tsv()
    monkeypatch.setenv("MOLCPT_THREADS", "4")
    four = finetune_run(ds, cfg, pre.encoder, pre.head).metrics_tsv()
    assert one == four


def test_untrained_probe_scores_chance(tiny):
    ds, base, pre = tiny
    res = finetune_run(ds, replace(base, regime="probe", epochs=0), pre.encoder, pre.head)
    assert res.test_mean == 0.5


def test_threshold_above_planted_frequency_collapses_vocabulary(planted):
    train = [planted.graphs[i] for i in planted.indices("train")]
    full = build_vocabulary(train, "simple", 0)
    key = canonical_key(fragment_molecule(parse_smiles(PLANTED_SMILES))[0].subgraph)
    freq = full.entries[full.index[key]].frequency
    assert freq == max(e.frequency for e in full.entries[1:])  # the planted motif is the most common
    assert key in build_vocabulary(train, "simple", freq).index
    assert build_vocabulary(train, "simple", freq + 1).keys == [EMPTY_KEY]


def test_multitask_with_missing_labels(tiny):
    ds, base, pre = tiny
    rng = np.random.default_rng(0)
    second = np.where(rng.random(len(ds)) < 0.3, MISSING, rng.integers(2, size=len(ds)))
    labels = np.stack([ds.labels[:, 0], second], axis=1)
    multi = TaskDataset(ds.graphs, labels, ["a", "b"], split=ds.split)
    res = finetune_run(multi, replace(base, regime="frozen", epochs=1), pre.encoder, pre.head)
    assert len(res.best.model.banks) == 2 and np.isfinite(res.test_mean)


def test_checkpoint_round_trip_reproduces_predictions(tiny):
    ds, base, pre = tiny
    cfg = replace(base, regime="frozen", epochs=1, ensemble=2, orth=1e-4)
    model = finetune_run(ds, cfg, pre.encoder, pre.head).best.model
    back = PromptModel.from_checkpoint(loads(dumps(model.to_checkpoint()), model.vocab.content_hash()), model.vocab)
    idx = ds.indices("test")
    a = [l.data for l in Runner(model, ds, cfg).logits(idx)]
    b = [l.data for l in Runner(back, ds, cfg).logits(idx)]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    other = build_vocabulary([parse_smiles("CCO"), parse_smiles("CCO")], "simple", 1)
    with pytest.raises(CheckpointError):
        loads(dumps(model.to_checkpoint()), other.content_hash())
    with pytest.raises(CheckpointError):
        PromptModel.from_checkpoint(model.to_checkpoint(), other)


def test_expand_grid():
    assert expand_grid({"t": [1, 2], "heads": [2]}) == [{"t": 1, "heads": 2}, {"t": 2, "heads": 2}]
    a = expand_grid(DEFAULT_GRID, budget=20, seed=3)
    assert len(a) == 20 and a == expand_grid(DEFAULT_GRID, budget=20, seed=3)
    assert a != expand_grid(DEFAULT_GRID, budget=20, seed=4)
    assert len({tuple(sorted(c.items())) for c in a}) == 20
    with pytest.raises(ValueError):
        expand_grid({"bogus": [1]})


def test_singleton_sweep_equals_direct_run(tiny):
    ds, base, pre = tiny
    cfg = replace(base, regime="frozen", epochs=2)
    rows = sweep(ds, {"t": [base.t]}, cfg, pre.encoder, pre.head)
    direct = finetune_run(ds, cfg, pre.encoder, pre.head)
    assert len(rows) == 1
    assert rows[0]["valid_auc"] == direct.valid_mean and rows[0]["test_auc"] == direct.test_mean
    text = sweep_tsv(rows)
    assert text.splitlines()[0] == "t\tvocab_size\tvalid_auc\ttest_auc\ttest_std"


def test_sweep_rows_sorted_by_validation(tiny):
    ds, base, pre = tiny
    rows = sweep(ds, {"t": [0, 3, 1000]}, replace(base, regime="frozen", epochs=2), pre.encoder, pre.head)
    vals = [r["valid_auc"] for r in rows]
    assert vals == sorted(vals, reverse=True)
    assert next(r for r in rows if r["t"] == 1000)["vocab_size"] == 1


@pytest.mark.parametrize("kwargs", [dict(regime="nope"), dict(heads=3), dict(t=-1), dict(ensemble=51),
                                    dict(orth=-1.0), dict(seeds=()), dict(lr=0.0), dict(rules="x"),
                                    dict(motif_init="zeros"), dict(pretrain_task="x")])
def test_run_config_validation(kwargs):
    with pytest.raises(ValueError):
        RunConfig(**kwargs)


def test_full_prompt_tuning_on_planted(planted, planted_pretrained):
    res = finetune_run(planted, RunConfig(regime="molcpt", tau_ans=10, t=5), planted_pretrained.encoder,
                       planted_pretrained.head)
    assert res.test_mean >= 0.9


def test_non_finite_loss_raises(tiny, monkeypatch):
    ds, base, pre = tiny
    monkeypatch.setattr(Runner, "loss", lambda self, idx, logits: nd.Tensor(float("nan")))
    with pytest.raises(FloatingPointError):
        finetune_run(ds, replace(base, regime="frozen", epochs=1), pre.encoder, pre.head)
