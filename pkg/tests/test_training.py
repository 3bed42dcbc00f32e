import json
import statistics

import pytest
import torch

from personsynth.config import load_config
from personsynth.data import synthetic_dataset
from personsynth.features import stub_extractor
from personsynth.training import (
    Discriminator, Trainer, TrainingAborted, batch_indices, load_generators, train_image, train_joint, train_parsing,
)

SMALL = [
    "model.parsing_widths=[8, 16, 16, 16]",
    "model.n_gated=2",
    "model.image.source_widths=[8, 16, 16, 16]",
    "model.image.source_up_widths=[16]",
    "model.image.context_widths=[8, 16]",
    "model.image.decoder_widths=[16, 8]",
    "data.size=32",
]


def small_cfg(*extra):
    return load_config(overrides=SMALL + list(extra))


@pytest.fixture(scope="module")
def data():
    return synthetic_dataset(4, 0, 32, 32)


@pytest.fixture(scope="module")
def fx():
    return stub_extractor(0)


def test_batch_indices_cover_each_epoch():
    seen = [batch_indices(3, s, 1, 5)[0] for s in range(10)]
    assert sorted(seen[:5]) == list(range(5)) and sorted(seen[5:]) == list(range(5))
    assert batch_indices(3, 7, 2, 5) == batch_indices(3, 7, 2, 5)
    assert seen != [batch_indices(4, s, 1, 5)[0] for s in range(10)]


def test_discriminator_patch_logits():
    assert Discriminator()(torch.zeros(2, 3, 64, 64)).shape == (2, 1, 4, 4)


def test_parsing_descent(data):
    cfg = small_cfg("run.steps=60", "optim.lr_g=1e-3")
    hist = train_parsing(cfg, data).history
    assert len(hist) == 60
    assert hist[-1]["parsing"] < hist[0]["parsing"]
    assert {"step", "phase", "parsing", "cross", "parsing_l1", "total", "wall_ms"} <= set(hist[0])


def test_resume_matches_uninterrupted(tmp_path, data):
    cfg = small_cfg("run.steps=6", f"run.run_dir={tmp_path / 'a'}")
    full = Trainer(cfg, data)
    ref = full.run(6)
    part = Trainer(cfg, data)
    part.run(4)
    ck = part.save(tmp_path / "mid")
    again = Trainer(small_cfg("run.steps=6", f"run.resume={ck}"), data)
    assert again.step == 4
    nxt = again.run(2)
    for a, b in zip(ref[4:], nxt):
        assert abs(a["total"] - b["total"]) < 1e-5
        assert a["step"] == b["step"]


def test_run_dir_outputs(tmp_path, data):
    cfg = small_cfg("run.steps=4", "run.ckpt_every=2", f"run.run_dir={tmp_path}")
    res = train_parsing(cfg, data)
    assert (tmp_path / "ckpt_parsing_2").is_dir() and (tmp_path / "ckpt_parsing_4").is_dir()
    assert res.checkpoint == tmp_path / "ckpt_parsing_4"
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert [json.loads(l)["step"] for l in lines] == [1, 2, 3, 4]
    assert (tmp_path / "config_parsing.yaml").exists()
    pg, G, _ = load_generators(res.checkpoint)
    assert pg is not None and G is None


def test_image_phase_partitions_parameters(data, fx):
    tr = Trainer(small_cfg("run.phase=image"), data, fx)
    d_before = [p.detach().clone() for p in tr.D.parameters()]
    g_before = [p.detach().clone() for p in tr.G.parameters()]
    fx_before = [p.detach().clone() for p in fx.parameters()]
    b = tr.batch()
    I_g, _, _ = tr.image_terms(b, b["S_t"])
    tr.discriminator_step(b, I_g)
    assert all(torch.equal(a, p) for a, p in zip(g_before, tr.G.parameters()))
    assert any(not torch.equal(a, p) for a, p in zip(d_before, tr.D.parameters()))

    # a generator update on its own leaves D untouched
    d_mid = [p.detach().clone() for p in tr.D.parameters()]
    tr.opt_g.zero_grad()
    I_g, _, _ = tr.image_terms(b, b["S_t"])
    tr.D.requires_grad_(False)
    (I_g - b["I_t"]).abs().mean().add(tr.D(I_g).mean()).backward()
    tr.D.requires_grad_(True)
    tr.opt_g.step()
    assert all(torch.equal(a, p) for a, p in zip(d_mid, tr.D.parameters()))
    assert any(not torch.equal(a, p) for a, p in zip(g_before, tr.G.parameters()))

    tr.run(2)
    assert all(torch.equal(a, p) for a, p in zip(fx_before, fx.parameters()))


def test_discriminator_only_descent(data, fx):
    drops = []
    for seed in range(3):
        tr = Trainer(small_cfg("run.phase=image", f"run.seed={seed}", "optim.lr_d=1e-3"), data, fx)
        b = tr.batch()
        with torch.no_grad():
            I_g, _, _ = tr.image_terms(b, b["S_t"])
        losses = [tr.discriminator_step(b, I_g).item() for _ in range(30)]
        drops.append(losses[0] - losses[-1])
    assert statistics.median(drops) > 0


def test_frozen_stage1_source(tmp_path, data, fx):
    ck = train_parsing(small_cfg("run.steps=2", f"run.run_dir={tmp_path / 'p'}"), data).checkpoint
    res = train_image(small_cfg("run.steps=2", f"run.ckpt_parsing={ck}"), data, "frozen_stage1", fx)
    tr = res.trainer
    assert tr.freeze_pg and not any(p.requires_grad for p in tr.pg.parameters())
    ref = load_generators(ck)[0]
    assert all(torch.equal(a, b) for a, b in zip(ref.parameters(), tr.pg.parameters()))


def _stage_checkpoints(tmp_path, data, fx):
    p = train_parsing(small_cfg("run.steps=2", f"run.run_dir={tmp_path / 'p'}"), data).checkpoint
    i = train_image(small_cfg("run.steps=2", f"run.run_dir={tmp_path / 'i'}"), data, extractor=fx).checkpoint
    return p, i


def test_joint_updates_parsing_generator_through_image_loss(tmp_path, data, fx):
    p, i = _stage_checkpoints(tmp_path, data, fx)
    cfg = small_cfg("run.steps=1", "loss.parsing_in_joint=false")
    tr = train_joint(cfg, data, p, i, fx).trainer
    before = load_generators(p)[0]
    assert any(not torch.equal(a, b) for a, b in zip(before.parameters(), tr.pg.parameters()))


def test_joint_with_zero_image_weights_matches_parsing(tmp_path, data, fx):
    p, i = _stage_checkpoints(tmp_path, data, fx)
    zero = [f"loss.lambda_{k}=0" for k in "clpsa"]
    joint = train_joint(small_cfg("run.steps=4", *zero), data, p, i, fx).history
    plain = train_parsing(small_cfg("run.steps=4", f"run.init={p}"), data).history
    for a, b in zip(joint, plain):
        assert abs(a["parsing"] - b["parsing"]) < 1e-6


def test_nan_aborts_with_snapshot(tmp_path, data):
    tr = Trainer(small_cfg(f"run.run_dir={tmp_path}"), data)
    with torch.no_grad():
        tr.pg.head.bias.fill_(float("nan"))
    with pytest.raises(TrainingAborted, match="non-finite"):
        tr.train_step()
    assert (tmp_path / "abort_parsing_0" / "record.json").exists()


def test_nan_record_aborts(tmp_path, data):
    tr = Trainer(small_cfg(f"run.run_dir={tmp_path}"), data)
    with pytest.raises(TrainingAborted):
        tr._abort({"total": float("nan")}, ["total"])
    snap = tmp_path / "abort_parsing_0"
    assert (snap / "manifest.json").exists() and (snap / "record.json").exists()


def test_reproducible_traces(data, fx):
    cfg = small_cfg("run.phase=image", "run.steps=3", "run.seed=5")
    a = Trainer(cfg, data, fx).run()
    b = Trainer(cfg, data, fx).run()
    for x, y in zip(a, b):
        for k in ("total", "l1", "d_loss"):
            assert abs(x[k] - y[k]) < 1e-6
