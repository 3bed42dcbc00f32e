"""One test per acceptance criterion, each at its stated tolerance and runtime limit.

The terminal summary (see conftest) prints a PASS/FAIL line per criterion.
"""
import math
import statistics
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from personsynth.blocks import gated_conv
from personsynth.config import load_config
from personsynth.data import make_synthetic_pair, one_hot, synthetic_dataset
from personsynth.editing import EditScript, ReplaceRegionStyle, interpolate_texture
from personsynth.features import stub_extractor
from personsynth.generator import ImageGenConfig, ImageGenerator, receptive_field_mask
from personsynth.losses import (
    correspondence_loss, discriminator_loss, generator_adv_loss, perceptual_loss, reconstruction_l1, style_loss,
)
from personsynth.metrics import fid, psnr
from personsynth.norm import compute_correlation
from personsynth.parsing import ParsingGenerator, parsing_loss
from personsynth.pipeline import Synthesizer
from personsynth.style import StyleCodeTable, downsample_mask, per_region_pool
from personsynth.training import Trainer, load_generators

from conftest import check_gradients


@contextmanager
def time_limit(seconds, report):
    t0 = time.perf_counter()
    yield
    elapsed = time.perf_counter() - t0
    report(f"runtime {elapsed:.1f}s (limit {seconds}s)")
    assert elapsed < seconds, f"took {elapsed:.1f}s, limit {seconds}s"


@pytest.fixture
def report(capsys):
    def _report(msg):
        with capsys.disabled():
            print(f"\n    {msg}", end="")
    return _report


@pytest.fixture(scope="module")
def fx():
    return stub_extractor(0)


def _masked_mean_oracle(F_i, labels):
    f, lab = F_i.double().numpy(), labels.numpy()
    C = f.shape[0]
    glob = f.reshape(C, -1).mean(1)
    rows = []
    for r in range(8):
        sel = lab == r
        rows.append(f[:, sel].mean(1) if sel.any() else glob)
    return np.stack(rows)


def test_criterion_01_pool_oracle_equivalence(report):
    with time_limit(5, report):
        g = torch.Generator().manual_seed(2024)
        worst, absent_rows = 0.0, 0
        for _ in range(50):
            F_i = torch.randn(4, 4, 4, generator=g)
            n_labels = int(torch.randint(1, 9, (1,), generator=g))
            labels = torch.randint(0, n_labels, (4, 4), generator=g)
            codes, present = per_region_pool(F_i, one_hot(labels), "joint")
            worst = max(worst, float(np.abs(codes.double().numpy() - _masked_mean_oracle(F_i, labels)).max()))
            glob = F_i.mean(dim=(-2, -1))
            for r in torch.nonzero(~present).flatten().tolist():
                assert torch.equal(codes[r], glob)
                absent_rows += 1
        report(f"max abs error {worst:.2e}; {absent_rows} absent rows equal the global mean exactly")
        assert worst < 1e-6
        assert absent_rows > 0


def test_criterion_02_correlation_layer(report):
    with time_limit(5, report):
        g = torch.Generator().manual_seed(7)
        worst_diag = 0.0
        for C, h, w in [(256, 16, 16), (8, 4, 4), (3, 5, 2), (64, 8, 8)]:
            Fm = torch.randn(1, C, h, w, generator=g) * 5 + 1
            M = compute_correlation(Fm, Fm)
            assert ((M >= -1) & (M <= 1)).all()
            worst_diag = max(worst_diag, float((M.diagonal(dim1=-2, dim2=-1) - 1).abs().max()))
            other = torch.randn(1, C, h, w, generator=g)
            assert ((compute_correlation(Fm, other).abs()) <= 1).all()
        hand = torch.tensor([[[1.0, 0.0]], [[0.0, 1.0]]])
        value = compute_correlation(hand, hand)[0, 1].item()
        report(f"worst diagonal deviation {worst_diag:.2e}; hand case {value}")
        assert worst_diag < 1e-5
        assert value == -1.0


def test_criterion_03_gated_convolution(report):
    with time_limit(30, report):
        g = torch.Generator().manual_seed(3)
        x = torch.randn(1, 4, 8, 8, generator=g)
        wu, bu = torch.randn(4, 4, 3, 3, generator=g), torch.randn(4, generator=g)
        zeros = torch.zeros(4, 4, 3, 3)
        closed = gated_conv(x, wu, bu, zeros, torch.full((4,), -60.0))
        opened = gated_conv(x, wu, bu, zeros, torch.full((4,), 60.0))
        plain = F.leaky_relu(F.conv2d(x, wu, bu, padding=1), 0.2)
        err_closed = float(closed.abs().max())
        err_open = float((opened - plain).abs().max())

        dt = torch.float64
        xs = torch.randn(1, 4, 8, 8, generator=g, dtype=dt, requires_grad=True)
        ws = [torch.randn(2, 4, 3, 3, generator=g, dtype=dt, requires_grad=True) for _ in range(2)]
        bs = [torch.randn(2, generator=g, dtype=dt, requires_grad=True) for _ in range(2)]
        proj = torch.randn(1, 2, 8, 8, generator=g, dtype=dt)
        rel = check_gradients(lambda: (gated_conv(xs, ws[0], bs[0], ws[1], bs[1]) * proj).sum(),
                              [xs, ws[0], bs[0], ws[1], bs[1]], h=1e-6, tol=1e-3)
        report(f"gate closed {err_closed:.1e}, gate open {err_open:.1e}, gradient rel. error {rel:.1e}")
        assert err_closed < 1e-6 and err_open < 1e-6


def test_criterion_04_loss_suite(report, fx):
    with time_limit(60, report):
        g = torch.Generator().manual_seed(4)
        I = torch.rand(1, 3, 32, 32, generator=g) * 2 - 1
        tap = torch.randn(1, 256, 8, 8, generator=g)
        S = one_hot(torch.randint(0, 8, (1, 8, 8), generator=g))
        zeros = {
            "correspondence": correspondence_loss(tap, tap).item(),
            "l1": reconstruction_l1(I, I).item(),
            "perceptual": perceptual_loss(I, I, fx).item(),
            "style": style_loss(I, I, fx).item(),
            "parsing": parsing_loss(S * 1e4, S).item(),
        }
        assert all(v == 0 for v in zeros.values()), zeros

        _, terms = parsing_loss(torch.zeros(1, 8, 8, 8), S, return_terms=True)
        ce = terms["cross"].item()
        assert abs(ce - math.log(8) / 8) < 1e-6
        half = torch.zeros(1, 1, 4, 4)
        d = discriminator_loss(half, half).item()
        assert abs(d - 2 * math.log(2)) < 1e-6

        dt = torch.float64
        fx64 = stub_extractor(0).double()
        a = torch.randn(1, 3, 4, 4, generator=g, dtype=dt, requires_grad=True)
        b = torch.randn(1, 3, 4, 4, generator=g, dtype=dt)
        logits = torch.randn(1, 8, 4, 4, generator=g, dtype=dt, requires_grad=True)
        S64 = one_hot(torch.randint(0, 8, (1, 4, 4), generator=g)).double()
        img = (torch.rand(1, 3, 16, 16, generator=g, dtype=dt) * 1.6 - 0.8).requires_grad_(True)
        ref = torch.rand(1, 3, 16, 16, generator=g, dtype=dt) * 2 - 1
        d_logits = torch.randn(1, 1, 3, 3, generator=g, dtype=dt, requires_grad=True)
        real = torch.randn(1, 1, 3, 3, generator=g, dtype=dt)
        checks = {
            "parsing": (lambda: parsing_loss(logits, S64), [logits]),
            "correspondence": (lambda: correspondence_loss(a, b), [a]),
            "l1": (lambda: reconstruction_l1(a, b), [a]),
            "perceptual": (lambda: perceptual_loss(img, ref, fx64), [img]),
            "style": (lambda: style_loss(img, ref, fx64), [img]),
            "d_loss": (lambda: discriminator_loss(real, d_logits), [d_logits]),
            "g_loss": (lambda: generator_adv_loss(d_logits), [d_logits]),
        }
        worst = {k: check_gradients(fn, ts, h=1e-6, tol=1e-3) for k, (fn, ts) in checks.items()}
        report(f"uniform CE {ce:.7f} (ln8/8 = {math.log(8) / 8:.7f}); d_loss {d:.7f}; "
               f"worst gradient rel. error {max(worst.values()):.1e}")


def _toy_generator():
    torch.manual_seed(11)
    return ImageGenerator(ImageGenConfig(decoder_ups=0, use_san=False)).eval()


def test_criterion_05_decoupling(report, fx):
    with time_limit(30, report):
        G = _toy_generator()
        torch.manual_seed(12)
        pg = ParsingGenerator().eval()
        syn = Synthesizer(pg, G, fx)
        s = make_synthetic_pair(5, 64, 64)
        S_g = syn.parse(s.source_image, s.source_parsing, s.source_keypoints, s.target_keypoints)
        base_table = syn.style(s.source_image, s.source_parsing)
        base = syn.render(s.source_image, s.source_parsing, S_g, s.target_keypoints, base_table)
        seg = downsample_mask(one_hot(S_g), (16, 16))
        g = torch.Generator().manual_seed(13)
        tested = 0
        for j in range(8):
            edited = base_table.clone()
            edited.codes[j] += torch.randn(edited.codes[j].shape, generator=g)
            out = syn.render(s.source_image, s.source_parsing, S_g, s.target_keypoints, edited)
            changed = (out != base).any(dim=0)
            rf = receptive_field_mask(seg[j] > 0, G.decoder)
            assert not (changed & ~rf).any(), f"row {j} changed pixels outside its receptive field"
            if seg[j].any():
                assert changed.any()
                tested += 1

            ref = StyleCodeTable(edited.codes, edited.present)
            _, S_after = syn.edit(s.source_image, s.source_parsing, s.source_keypoints, s.target_keypoints,
                                  EditScript([ReplaceRegionStyle(j, ref)]))
            assert torch.equal(S_after, S_g)
        report(f"{tested} regions present in S_g; no pixel outside any receptive field changed; S_g unchanged")


def test_criterion_06_interpolation_endpoints(report, fx):
    with time_limit(30, report):
        torch.manual_seed(21)
        syn = Synthesizer(ParsingGenerator(), ImageGenerator(), fx)
        s, r1, r2 = (make_synthetic_pair(k, 64, 64) for k in (1, 2, 3))
        src = (s.source_image, s.source_parsing, s.source_keypoints, s.target_keypoints)
        ref_a = (r1.source_image, r1.source_parsing)
        ref_b = (r2.target_image, r2.target_parsing)
        region = 2
        outs, _ = syn.interpolate(*src, ref_a, ref_b, region, [0.0, 1.0])
        pure_a, _ = syn.transfer_texture(*src, *ref_a, [region])
        pure_b, _ = syn.transfer_texture(*src, *ref_b, [region])
        assert torch.equal(outs[0], pure_a)
        assert torch.equal(outs[1], pure_b)

        t_a, t_b = syn.style(*ref_a), syn.style(*ref_b)
        worst = 0.0
        for alpha in (0.25, 0.5, 0.75):
            row = interpolate_texture(t_a, t_b, region, alpha).codes[region]
            expected = (1 - alpha) * t_a.codes[region].double() + alpha * t_b.codes[region].double()
            worst = max(worst, float((row.double() - expected).abs().max()))
        report(f"endpoints bit-identical; max linearity error {worst:.1e}")
        assert worst < 1e-6


@pytest.mark.slow
def test_criterion_07_trainability(report, fx):
    # stage 1 uses lr 1e-3: the default 2e-4 does not reach the threshold within 500 steps
    with time_limit(20 * 60, report):
        stage1, stage2 = [], []
        for seed in range(3):
            sample = make_synthetic_pair(seed, 64, 64)
            cfg1 = load_config(overrides=[f"run.seed={seed}", "optim.lr_g=1e-3"])
            h1 = Trainer(cfg1, [sample]).run(500, until=lambda r: r["parsing"] < 0.1)
            stage1.append((min(r["parsing"] for r in h1), len(h1)))
            cfg2 = load_config(overrides=[f"run.seed={seed}", "run.phase=image"])
            h2 = Trainer(cfg2, [sample], fx).run(2000, until=lambda r: r["l1"] < 0.05)
            stage2.append((min(r["l1"] for r in h2), len(h2)))
        m1 = statistics.median(v for v, _ in stage1)
        m2 = statistics.median(v for v, _ in stage2)
        report(f"stage 1 (loss, steps) {[(round(v, 4), n) for v, n in stage1]}; median {m1:.4f}")
        report(f"stage 2 (L1, steps) {[(round(v, 4), n) for v, n in stage2]}; median {m2:.4f}")
        assert m1 < 0.1
        assert m2 < 0.05


def test_criterion_08_metrics(report):
    with time_limit(60, report):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(500, 8))
        same = fid(X, X)
        delta = rng.normal(size=8)
        A = rng.normal(size=(10_000, 8))
        B = rng.normal(size=(10_000, 8)) + delta
        shift = fid(A, B)
        target = float(delta @ delta)
        rel = abs(shift - target) / target
        a = torch.zeros(3, 16, 16)
        p = psnr(a, a + 16 / 127.5)
        report(f"fid(X,X) {same:.1e}; shift FID {shift:.4f} vs {target:.4f} ({100 * rel:.2f}%); PSNR {p:.4f} dB")
        assert same < 1e-6
        assert rel < 0.05
        assert abs(p - 24.05) < 0.01


@pytest.mark.slow
def test_criterion_09_ablation_presets(report, fx):
    with time_limit(5 * 60, report):
        data = synthetic_dataset(2, 9, 64, 64)
        s = data[0]
        torch.manual_seed(0)
        pg = ParsingGenerator().eval()
        absent_seen = 0
        for preset in ("global-enc", "local-enc", "wo-sn"):
            cfg = load_config(overrides=["run.phase=image", f"model.preset={preset}"])
            tr = Trainer(cfg, data, fx)
            hist = tr.run(3)
            assert all(math.isfinite(r["total"]) for r in hist)
            syn = Synthesizer(pg, tr.G, fx)
            I_g, S_g = syn.transfer_pose(s.source_image, s.source_parsing, s.source_keypoints, s.target_keypoints)
            assert I_g.shape == (3, 64, 64) and torch.isfinite(I_g).all() and I_g.abs().max() <= 1
            table = syn.style(s.source_image, s.source_parsing)
            if preset == "global-enc":
                assert torch.equal(table.codes, table.codes[:1].expand_as(table.codes))
            if preset == "local-enc":
                assert table.codes[~table.present].eq(0).all()
                absent_seen += int((~table.present).sum())
            if preset == "wo-sn":
                assert tr.G.san is None
        report(f"presets ran end-to-end; local-enc zeroed {absent_seen} absent rows")
        assert absent_seen > 0


def test_criterion_10_reproducibility(report, fx, tmp_path):
    data = synthetic_dataset(3, 10, 64, 64)
    s = data[0]

    def run(tag):
        cfg_p = load_config(overrides=["run.steps=4", "run.seed=3", "run.batch=2"])
        hp = Trainer(cfg_p, data).run()
        cfg_i = load_config(overrides=["run.phase=image", "run.steps=3", "run.seed=3", "run.batch=2",
                                       f"run.run_dir={tmp_path / tag}"])
        ti = Trainer(cfg_i, data, fx)
        hi = ti.run()
        ck = ti.save()
        torch.manual_seed(0)
        pg = ParsingGenerator()
        args = (s.source_image, s.source_parsing, s.source_keypoints, s.target_keypoints)
        out, _ = Synthesizer(pg, ti.G, fx).transfer_pose(*args)
        reloaded, _ = Synthesizer(pg, load_generators(ck)[1], fx).transfer_pose(*args)
        assert torch.equal(out, reloaded)
        return hp + hi, out

    trace_a, out_a = run("a")
    trace_b, out_b = run("b")
    keys = ("total", "parsing", "l1", "cor", "per", "style", "adv", "d_loss")
    worst = max(abs(x[k] - y[k]) for x, y in zip(trace_a, trace_b) for k in keys if k in x)
    report(f"{len(trace_a)} records, max trace difference {worst:.1e}; outputs bit-identical: {torch.equal(out_a, out_b)}")
    assert len(trace_a) == len(trace_b)
    assert worst < 1e-6
    assert torch.equal(out_a, out_b)
