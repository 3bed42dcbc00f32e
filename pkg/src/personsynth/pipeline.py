"""Inference: pose transfer and the editing applications on top of trained generators."""
from __future__ import annotations

import torch

from .data import encode_pose_heatmap, one_hot, validate_parsing
from .editing import EditScript, apply_style_edits, edit_region, interpolate_texture, transfer_texture
from .features import CORRESPONDENCE_TAP, build_extractor
from .parsing import parsing_to_labels
from .style import StyleCodeTable
from .training import load_generators


class Synthesizer:
    """Wraps a parsing generator, an image generator and the frozen extractor.

    All methods take and return unbatched tensors: images ``3 x H x W``,
    parsing maps as ``H x W`` labels, keypoints as ``Keypoints``.
    """

    def __init__(self, parsing_generator, image_generator, extractor, sigma=None):
        self.pg = parsing_generator
        self.G = image_generator
        self.fx = extractor
        self.sigma = sigma
        for m in (self.pg, self.G):
            if m is not None:
                m.eval()

    @classmethod
    def from_checkpoints(cls, ckpt_parsing, ckpt_image=None):
        pg, G, cfg = load_generators(ckpt_parsing)
        if ckpt_image is not None:
            _, G, cfg_img = load_generators(ckpt_image)
            cfg = cfg_img
        if pg is None or G is None:
            raise ValueError("checkpoints must provide both a parsing and an image generator")
        fx = build_extractor(cfg.run.extractor, cfg.run.extractor_seed)
        return cls(pg, G, fx, cfg.model.sigma)

    def _pose(self, kps, H, W):
        return encode_pose_heatmap(kps, H, W, self.sigma)

    @torch.no_grad()
    def parse(self, I_s, S_s, kp_s, kp_t) -> torch.Tensor:
        H, W = I_s.shape[-2:]
        logits = self.pg(self._pose(kp_s, H, W)[None], self._pose(kp_t, H, W)[None],
                         one_hot(validate_parsing(S_s))[None])
        return parsing_to_labels(logits)[0]

    @torch.no_grad()
    def style(self, I, S) -> StyleCodeTable:
        _, codes, present = self.G.encode_style(I[None], one_hot(validate_parsing(S))[None])
        return StyleCodeTable(codes[0], present[0])

    @torch.no_grad()
    def render(self, I_s, S_s, S_g, kp_t, table: StyleCodeTable = None) -> torch.Tensor:
        H, W = I_s.shape[-2:]
        S_g = validate_parsing(S_g)
        tap = self.fx.extract(I_s[None], [CORRESPONDENCE_TAP])[CORRESPONDENCE_TAP]
        codes = None if table is None else table.codes[None]
        I_g, _ = self.G(I_s[None], one_hot(validate_parsing(S_s))[None], one_hot(S_g)[None],
                        self._pose(kp_t, H, W)[None], codes=codes, src_tap=tap)
        return I_g[0]

    def transfer_pose(self, I_s, S_s, kp_s, kp_t):
        S_g = self.parse(I_s, S_s, kp_s, kp_t)
        return self.render(I_s, S_s, S_g, kp_t), S_g

    def transfer_texture(self, I_s, S_s, kp_s, kp_t, I_ref, S_ref, regions):
        table = transfer_texture(self.style(I_s, S_s), self.style(I_ref, S_ref), regions)
        S_g = self.parse(I_s, S_s, kp_s, kp_t)
        return self.render(I_s, S_s, S_g, kp_t, table), S_g

    def interpolate(self, I_s, S_s, kp_s, kp_t, ref_a, ref_b, region, alphas):
        """``ref_a``/``ref_b`` are ``(image, parsing)`` pairs; one output image per alpha."""
        base = self.style(I_s, S_s)
        t_a, t_b = self.style(*ref_a), self.style(*ref_b)
        S_g = self.parse(I_s, S_s, kp_s, kp_t)
        outs = []
        for alpha in alphas:
            blended = interpolate_texture(t_a, t_b, region, alpha)
            outs.append(self.render(I_s, S_s, S_g, kp_t, transfer_texture(base, blended, [region])))
        return outs, S_g

    def edit(self, I_s, S_s, kp_s, kp_t, script: EditScript, S_g=None):
        """Repaint the generated (or given) parsing, apply style edits, render."""
        S_g = self.parse(I_s, S_s, kp_s, kp_t) if S_g is None else validate_parsing(S_g)
        S_g = edit_region(S_g, script)
        table = apply_style_edits(self.style(I_s, S_s), script) if script.style_edits() else None
        return self.render(I_s, S_s, S_g, kp_t, table), S_g
