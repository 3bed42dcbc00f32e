"""Discriminator, optimizers and the three training phases (parsing, image, joint)."""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn

from .blocks import DownBlock
from .checkpoint import load_checkpoint, load_module, module_tensors, save_checkpoint
from .config import TrainConfig, dump_config, load_config
from .data import collate, load_pair_dir, sample_to_inputs, synthetic_dataset
from .features import CORRESPONDENCE_TAP, PERCEPTUAL_TAPS, STYLE_TAPS, FeatureExtractor, build_extractor
from .generator import ImageGenerator
from .losses import (correspondence_loss, discriminator_loss, generator_adv_loss, perceptual_loss,
                     reconstruction_l1, style_loss, total_image_loss)
from .parsing import ParsingGenerator, parsing_loss, parsing_to_onehot

log = logging.getLogger(__name__)

ALL_TAPS = (CORRESPONDENCE_TAP,) + PERCEPTUAL_TAPS + STYLE_TAPS


class TrainingAborted(RuntimeError):
    pass


class Discriminator(nn.Module):
    """Four stride-2 convolution blocks ending in a one-channel patch logit map."""

    def __init__(self, widths=(32, 64, 128)):
        super().__init__()
        self.net = nn.Sequential(
            DownBlock(3, widths[0], norm="none"),
            DownBlock(widths[0], widths[1]),
            DownBlock(widths[1], widths[2]),
            DownBlock(widths[2], 1, norm="none", activation="identity"),
        )

    def forward(self, img):
        return self.net(img)


def batch_indices(seed: int, step: int, batch: int, n: int) -> list:
    """Sample indices for ``step``: a seeded permutation per epoch, independent of history."""
    out = []
    for pos in range(step * batch, (step + 1) * batch):
        epoch, k = divmod(pos, n)
        out.append(int(np.random.default_rng([seed, epoch]).permutation(n)[k]))
    return out


def build_parsing_generator(cfg: TrainConfig) -> ParsingGenerator:
    return ParsingGenerator(tuple(cfg.model.parsing_widths), cfg.model.n_gated)


def load_dataset(cfg: TrainConfig) -> list:
    d = cfg.data
    if d.source == "dir":
        root = Path(d.root)
        if not (root / d.pair_list).exists():
            raise FileNotFoundError(f"pair list {root / d.pair_list} not found (data.root)")
        return load_pair_dir(root, d.pair_list)
    return synthetic_dataset(d.n, d.seed, d.size, d.size)


@dataclass
class TrainResult:
    trainer: "Trainer"
    history: list = field(default_factory=list)
    checkpoint: Optional[Path] = None


class Trainer:
    def __init__(self, cfg: TrainConfig, dataset, extractor: FeatureExtractor = None):
        self.cfg = cfg = copy.deepcopy(cfg).validate()
        if not dataset:
            raise ValueError("empty dataset")
        self.items = [sample_to_inputs(s, cfg.model.sigma) for s in dataset]
        phase = cfg.run.phase
        self.phase = phase
        torch.manual_seed(cfg.run.seed)

        self.pg = self.G = self.D = None
        self.freeze_pg = phase == "image" and cfg.run.parsing_source == "frozen_stage1"
        if phase in ("parsing", "joint") or self.freeze_pg:
            self.pg = build_parsing_generator(cfg)
        if phase in ("image", "joint"):
            self.G = ImageGenerator(cfg.image_config())
            self.D = Discriminator()
            self.fx = extractor if extractor is not None else build_extractor(cfg.run.extractor, cfg.run.extractor_seed)
        else:
            self.fx = None

        if cfg.run.ckpt_parsing and self.pg is not None:
            tensors, _, _ = load_checkpoint(cfg.run.ckpt_parsing)
            load_module("parsing", self.pg, tensors)
        if cfg.run.ckpt_image and self.G is not None:
            tensors, _, _ = load_checkpoint(cfg.run.ckpt_image)
            load_module("image", self.G, tensors)
            if any(k.startswith("disc/") for k in tensors):
                load_module("disc", self.D, tensors)
        if cfg.run.init:
            tensors, _, _ = load_checkpoint(cfg.run.init)
            for prefix, mod in self._modules().items():
                if any(k.startswith(prefix + "/") for k in tensors):
                    load_module(prefix, mod, tensors)
        if self.freeze_pg:
            self.pg.requires_grad_(False)
            self.pg.eval()

        o = cfg.optim
        g_params = []
        if self.pg is not None and not self.freeze_pg:
            g_params += list(self.pg.parameters())
        if self.G is not None:
            g_params += list(self.G.parameters())
        self.opt_g = torch.optim.Adam(g_params, o.lr_g, betas=(o.beta1, o.beta2), eps=o.eps)
        self.opt_d = (torch.optim.Adam(self.D.parameters(), o.lr_d, betas=(o.beta1, o.beta2), eps=o.eps)
                      if self.D is not None else None)
        self.step = 0
        self.wall_ms = 0.0
        self.run_dir = Path(cfg.run.run_dir) if cfg.run.run_dir else None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            dump_config(cfg, self.run_dir / f"config_{phase}.yaml")
        if cfg.run.resume:
            self.resume(cfg.run.resume)

    # -- state ---------------------------------------------------------------

    def _modules(self) -> dict:
        mods = {"parsing": self.pg, "image": self.G, "disc": self.D}
        return {k: v for k, v in mods.items() if v is not None}

    def save(self, path=None) -> Path:
        if path is None:
            if self.run_dir is None:
                raise ValueError("no run_dir configured")
            path = self.run_dir / f"ckpt_{self.phase}_{self.step}"
        tensors = {}
        for prefix, mod in self._modules().items():
            tensors.update(module_tensors(prefix, mod))
        state = {"opt_g": self.opt_g.state_dict()}
        if self.opt_d is not None:
            state["opt_d"] = self.opt_d.state_dict()
        meta = {"phase": self.phase, "step": self.step, "config": self.cfg.to_dict()}
        return save_checkpoint(path, tensors, meta, state)

    def resume(self, path) -> None:
        tensors, meta, state = load_checkpoint(path)
        if meta.get("phase") != self.phase:
            raise ValueError(f"cannot resume phase {self.phase!r} from a {meta.get('phase')!r} checkpoint")
        for prefix, mod in self._modules().items():
            load_module(prefix, mod, tensors)
        self.opt_g.load_state_dict(state["opt_g"])
        if self.opt_d is not None:
            self.opt_d.load_state_dict(state["opt_d"])
        self.step = int(meta["step"])

    # -- steps ---------------------------------------------------------------

    def batch(self, step=None) -> dict:
        step = self.step if step is None else step
        idx = batch_indices(self.cfg.run.seed, step, self.cfg.run.batch, len(self.items))
        return collate([self.items[i] for i in idx])

    def generated_parsing(self, b, logits=None):
        if self.phase == "joint":
            return torch.softmax(logits, dim=-3)
        if self.freeze_pg:
            with torch.no_grad():
                return parsing_to_onehot(self.pg(b["P_s"], b["P_t"], b["S_s"]))
        return b["S_t"]  # teacher forcing

    def discriminator_step(self, b, I_g) -> torch.Tensor:
        d_loss = discriminator_loss(self.D(b["I_t"]), self.D(I_g.detach()))
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()
        return d_loss.detach()

    def image_terms(self, b, S_g):
        with torch.no_grad():
            tap_s = self.fx.extract(b["I_s"], [CORRESPONDENCE_TAP])[CORRESPONDENCE_TAP]
            feats_t = self.fx.extract(b["I_t"], ALL_TAPS)
        I_g, F_n = self.G(b["I_s"], b["S_s"], S_g, b["P_t"], src_tap=tap_s)
        return I_g, F_n, feats_t

    def train_step(self) -> dict:
        t0 = time.perf_counter()
        rec = {"step": self.step + 1, "phase": self.phase}
        try:
            total = self._losses(rec)
        except ValueError as e:
            if "non-finite" not in str(e):
                raise
            self._abort(rec, [str(e)])
        rec["total"] = float(total.detach())
        bad = [k for k, v in rec.items() if isinstance(v, float) and not math.isfinite(v)]
        if bad:
            self._abort(rec, bad)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        self.step += 1
        dt = (time.perf_counter() - t0) * 1000
        self.wall_ms += dt
        rec["wall_ms"] = round(dt, 3)
        return rec

    def _losses(self, rec) -> torch.Tensor:
        b = self.batch()
        total = torch.zeros(())
        logits = None
        if self.phase in ("parsing", "joint"):
            logits = self.pg(b["P_s"], b["P_t"], b["S_s"])
            p_loss, p_terms = parsing_loss(logits, b["S_t"], self.cfg.loss.lambda_pl, return_terms=True)
            rec.update(parsing=p_loss.item(), cross=p_terms["cross"].item(), parsing_l1=p_terms["l1"].item())
            if self.phase == "parsing" or self.cfg.loss.parsing_in_joint:
                total = p_loss
        if self.phase in ("image", "joint"):
            S_g = self.generated_parsing(b, logits)
            I_g, F_n, feats_t = self.image_terms(b, S_g)
            rec["d_loss"] = self.discriminator_step(b, I_g).item()
            self.D.requires_grad_(False)
            try:
                cor = correspondence_loss(F_n, feats_t[CORRESPONDENCE_TAP])
                l1 = reconstruction_l1(I_g, b["I_t"])
                per = perceptual_loss(I_g, b["I_t"], self.fx, feats_t=feats_t)
                sty = style_loss(I_g, b["I_t"], self.fx, feats_t=feats_t)
                adv = generator_adv_loss(self.D(I_g))
            finally:
                self.D.requires_grad_(True)
            img_loss = total_image_loss(cor, l1, per, sty, adv, self.cfg.loss.weights())
            rec.update(cor=cor.item(), l1=l1.item(), per=per.item(), style=sty.item(), adv=adv.item(),
                       image=img_loss.item())
            total = total + img_loss
        return total

    def _abort(self, rec, bad):
        where = ""
        if self.run_dir is not None:
            snap = self.save(self.run_dir / f"abort_{self.phase}_{self.step}")
            (snap / "record.json").write_text(json.dumps(rec, default=str))
            where = f"; snapshot written to {snap}"
        raise TrainingAborted(f"non-finite loss term(s) {bad} at step {self.step + 1}{where}")

    def run(self, steps: int = None, until: Callable[[dict], bool] = None) -> list:
        """Run ``steps`` optimizer steps (default ``cfg.run.steps``), stopping early once ``until(record)``."""
        steps = self.cfg.run.steps if steps is None else steps
        history = []
        log_fh = open(self.run_dir / "log.jsonl", "a") if self.run_dir is not None else None
        try:
            for _ in range(steps):
                rec = self.train_step()
                history.append(rec)
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                    log_fh.flush()
                every = self.cfg.run.ckpt_every
                if every and self.step % every == 0 and self.run_dir is not None:
                    self.save()
                if until is not None and until(rec):
                    break
        finally:
            if log_fh is not None:
                log_fh.close()
        return history


def _with_phase(cfg: TrainConfig, phase: str, **run) -> TrainConfig:
    cfg = copy.deepcopy(cfg)
    cfg.run.phase = phase
    for k, v in run.items():
        if v is not None:
            setattr(cfg.run, k, v)
    return cfg


def _train(cfg, dataset, extractor, until) -> TrainResult:
    trainer = Trainer(cfg, dataset if dataset is not None else load_dataset(cfg), extractor)
    history = trainer.run(until=until)
    ckpt = trainer.save() if trainer.run_dir is not None else None
    return TrainResult(trainer, history, ckpt)


def train_parsing(cfg: TrainConfig, dataset=None, until=None) -> TrainResult:
    return _train(_with_phase(cfg, "parsing"), dataset, None, until)


def train_image(cfg: TrainConfig, dataset=None, parsing_source: str = None, extractor=None,
                until=None) -> TrainResult:
    return _train(_with_phase(cfg, "image", parsing_source=parsing_source), dataset, extractor, until)


def train_joint(cfg: TrainConfig, dataset=None, ckpt_parsing=None, ckpt_image=None, extractor=None,
                until=None) -> TrainResult:
    cfg = _with_phase(cfg, "joint", ckpt_parsing=str(ckpt_parsing) if ckpt_parsing else None,
                      ckpt_image=str(ckpt_image) if ckpt_image else None)
    return _train(cfg, dataset, extractor, until)


def load_generators(path):
    """Inference models from a checkpoint: ``(parsing_generator | None, image_generator | None, cfg)``."""
    tensors, meta, _ = load_checkpoint(path)
    cfg = load_config(base=_flatten(meta["config"]))
    pg = G = None
    if any(k.startswith("parsing/") for k in tensors):
        pg = build_parsing_generator(cfg)
        load_module("parsing", pg, tensors)
        pg.eval()
    if any(k.startswith("image/") for k in tensors):
        G = ImageGenerator(cfg.image_config())
        load_module("image", G, tensors)
        G.eval()
    return pg, G, cfg


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out
