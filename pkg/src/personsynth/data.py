"""Data types, file formats and the synthetic paired dataset.

Tensors follow the torch layout: images are ``3 x H x W`` floats in [-1, 1],
pose heatmaps ``18 x H x W``, one-hot parsing ``8 x H x W``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw

N_JOINTS = 18
N_REGIONS = 8
N_RAW_LABELS = 21

REGION_NAMES = (
    "background",
    "hair",
    "upper_clothes",
    "dress",
    "pants",
    "face",
    "upper_skin",
    "leg",
)

# COCO-18 ordering as emitted by OpenPose-style estimators.
KEYPOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)

MISSING_SENTINEL = (-1, -1)


class DataError(ValueError):
    pass


class KeypointFormatError(DataError):
    pass


class LabelRangeError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


def region_index(name: str) -> int:
    try:
        return REGION_NAMES.index(name)
    except ValueError:
        raise DataError(f"unknown region name {name!r}; expected one of {', '.join(REGION_NAMES)}") from None


@dataclass(frozen=True)
class Keypoints:
    """18 joints; a missing joint is ``None``."""

    joints: tuple

    def __post_init__(self):
        joints = tuple(self.joints)
        if len(joints) != N_JOINTS:
            raise KeypointFormatError(f"expected {N_JOINTS} joints, got {len(joints)}")
        clean = []
        for j in joints:
            if j is None:
                clean.append(None)
                continue
            if len(j) != 2:
                raise KeypointFormatError(f"joint must be (x, y), got {j!r}")
            x, y = float(j[0]), float(j[1])
            if not (math.isfinite(x) and math.isfinite(y)):
                raise KeypointFormatError(f"non-finite keypoint coordinate {j!r}")
            clean.append((x, y))
        object.__setattr__(self, "joints", tuple(clean))

    @classmethod
    def missing(cls) -> "Keypoints":
        return cls((None,) * N_JOINTS)

    def check_bounds(self, H: int, W: int) -> None:
        for k, j in enumerate(self.joints):
            if j is not None and not (0 <= j[0] < W and 0 <= j[1] < H):
                raise KeypointFormatError(
                    f"joint {k} ({KEYPOINT_NAMES[k]}) at {j} lies outside a {H}x{W} image")

    def to_list(self) -> list:
        return [list(MISSING_SENTINEL) if j is None else [j[0], j[1]] for j in self.joints]

    @classmethod
    def from_list(cls, entries) -> "Keypoints":
        if not isinstance(entries, list):
            raise KeypointFormatError("keypoints must be a top-level JSON array")
        joints = []
        for e in entries:
            if not isinstance(e, list) or len(e) != 2 or not all(isinstance(v, (int, float)) for v in e):
                raise KeypointFormatError(f"malformed keypoint entry {e!r}")
            joints.append(None if (e[0], e[1]) == MISSING_SENTINEL else (e[0], e[1]))
        return cls(tuple(joints))


@dataclass
class PairedSample:
    source_image: torch.Tensor
    target_image: torch.Tensor
    source_keypoints: Keypoints
    target_keypoints: Keypoints
    source_parsing: torch.Tensor
    target_parsing: torch.Tensor

    def __post_init__(self):
        shapes = {tuple(self.source_image.shape[-2:]), tuple(self.target_image.shape[-2:]),
                  tuple(self.source_parsing.shape), tuple(self.target_parsing.shape)}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"paired sample has inconsistent spatial shapes {sorted(shapes)}")

    @property
    def size(self):
        return tuple(self.source_parsing.shape)


def default_sigma(H: int, W: int) -> float:
    """6 px at 256x256, scaled linearly with resolution."""
    return 6.0 * max(H, W) / 256.0


def encode_pose_heatmap(kps: Keypoints, H: int, W: int, sigma: Optional[float] = None) -> torch.Tensor:
    if not isinstance(kps, Keypoints):
        kps = Keypoints(tuple(kps))
    if H < 8 or W < 8:
        raise ValueError("heatmap size must be at least 8x8")
    sigma = default_sigma(H, W) if sigma is None else float(sigma)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    ys = torch.arange(H, dtype=torch.float64).view(H, 1)
    xs = torch.arange(W, dtype=torch.float64).view(1, W)
    out = torch.zeros(N_JOINTS, H, W, dtype=torch.float64)
    for k, j in enumerate(kps.joints):
        if j is None:
            continue
        d2 = (xs - j[0]) ** 2 + (ys - j[1]) ** 2
        out[k] = torch.exp(-d2 / (2 * sigma ** 2))
    return out.float()


def load_relabel_table(path=None) -> np.ndarray:
    if path is None:
        text = resources.files("personsynth.assets").joinpath("relabel_21to8.json").read_text()
    else:
        text = Path(path).read_text()
    data = json.loads(text)
    table = data["table"] if isinstance(data, dict) else data
    return validate_relabel_table(table)


def validate_relabel_table(table) -> np.ndarray:
    if isinstance(table, dict):
        keys = {int(k) for k in table}
        if keys != set(range(N_RAW_LABELS)):
            raise DataError(f"relabel table must cover raw labels 0..{N_RAW_LABELS - 1} exactly")
        table = [table[k] if k in table else table[str(k)] for k in range(N_RAW_LABELS)]
    arr = np.asarray(table)
    if arr.shape != (N_RAW_LABELS,):
        raise DataError(f"relabel table must have {N_RAW_LABELS} entries, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() >= N_REGIONS:
        raise DataError(f"relabel table targets must be integers in 0..{N_REGIONS - 1}")
    return arr.astype(np.int64)


def relabel_parsing(raw, table=None) -> torch.Tensor:
    """Map a raw 21-category parsing field to the 8-category scheme."""
    table = load_relabel_table() if table is None else validate_relabel_table(table)
    raw = torch.as_tensor(np.asarray(raw))
    if raw.dtype.is_floating_point or raw.dtype == torch.bool:
        raise LabelRangeError("raw parsing must be an integer field")
    if raw.numel() and (raw.min() < 0 or raw.max() >= N_RAW_LABELS):
        raise LabelRangeError(f"raw parsing values must lie in 0..{N_RAW_LABELS - 1}")
    return torch.as_tensor(table)[raw.long()]


def validate_parsing(p: torch.Tensor) -> torch.Tensor:
    p = torch.as_tensor(p)
    if p.dim() != 2:
        raise ShapeMismatchError(f"parsing map must be H x W, got shape {tuple(p.shape)}")
    if p.dtype.is_floating_point:
        raise LabelRangeError("parsing map must hold integer labels")
    if p.numel() and (p.min() < 0 or p.max() >= N_REGIONS):
        raise LabelRangeError(f"parsing labels must lie in 0..{N_REGIONS - 1}, found max {int(p.max())}")
    return p.long()


def one_hot(p: torch.Tensor) -> torch.Tensor:
    """``H x W`` labels (or ``B x H x W``) to a float one-hot with the channel axis before H."""
    p = torch.as_tensor(p).long()
    oh = torch.nn.functional.one_hot(p, N_REGIONS).float()
    return oh.movedim(-1, -3).contiguous()


# ----------------------------------------------------------------------------
# synthetic cut-out figures


def _uint8_to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(img.astype(np.float32)).permute(2, 0, 1) / 127.5 - 1.0


def tensor_to_uint8(img: torch.Tensor) -> np.ndarray:
    arr = ((img.detach().float().clamp(-1, 1) + 1.0) * 127.5).round()
    return arr.permute(1, 2, 0).to(torch.uint8).numpy()


def _sample_appearance(rng: np.random.Generator) -> dict:
    skin = np.array([rng.integers(150, 236), rng.integers(110, 190), rng.integers(80, 160)])
    bottoms = "dress" if rng.random() < 0.35 else "pants"
    palette = np.zeros((N_REGIONS, 3), dtype=np.int64)
    palette[0] = rng.integers(190, 236, size=3)
    palette[1] = rng.integers(10, 90, size=3)
    palette[2] = rng.integers(20, 236, size=3)
    palette[3] = rng.integers(20, 236, size=3)
    palette[4] = rng.integers(20, 236, size=3)
    palette[5] = skin
    palette[6] = skin
    palette[7] = skin
    return {
        "palette": palette,
        "bottoms": bottoms,
        "stripe_period": int(rng.integers(3, 6)),
        "long_sleeves": bool(rng.random() < 0.5),
    }


def _sample_pose(rng: np.random.Generator) -> dict:
    return {
        "cx": rng.uniform(0.42, 0.58),
        "scale": rng.uniform(0.86, 1.0),
        "arm_r": np.deg2rad(rng.uniform(5, 75)),
        "arm_l": np.deg2rad(rng.uniform(5, 75)),
        "fore_r": np.deg2rad(rng.uniform(-40, 40)),
        "fore_l": np.deg2rad(rng.uniform(-40, 40)),
        "leg_r": np.deg2rad(rng.uniform(0, 18)),
        "leg_l": np.deg2rad(rng.uniform(0, 18)),
    }


def _skeleton(pose: dict, H: int, W: int) -> dict:
    """Joint positions in pixels (x, y), measured in units of the image height."""
    s = pose["scale"] * H
    cx = pose["cx"] * W
    top = 0.04 * H

    def at(du, dv):
        return np.array([cx + du * s, top + dv * s])

    head = at(0.0, 0.08)
    neck = at(0.0, 0.17)
    sh_r, sh_l = at(-0.11, 0.20), at(0.11, 0.20)
    hip_r, hip_l = at(-0.065, 0.50), at(0.065, 0.50)

    def limb(start, angle, length, side):
        # angle measured from straight-down, positive swings outward
        return start + length * s * np.array([side * math.sin(angle), math.cos(angle)])

    el_r = limb(sh_r, pose["arm_r"], 0.15, -1)
    el_l = limb(sh_l, pose["arm_l"], 0.15, +1)
    wr_r = limb(el_r, pose["arm_r"] + pose["fore_r"], 0.13, -1)
    wr_l = limb(el_l, pose["arm_l"] + pose["fore_l"], 0.13, +1)
    kn_r = limb(hip_r, pose["leg_r"], 0.20, -1)
    kn_l = limb(hip_l, pose["leg_l"], 0.20, +1)
    an_r = limb(kn_r, pose["leg_r"] * 0.5, 0.19, -1)
    an_l = limb(kn_l, pose["leg_l"] * 0.5, 0.19, +1)
    return {
        "s": s, "head": head, "neck": neck,
        "sh_r": sh_r, "sh_l": sh_l, "el_r": el_r, "el_l": el_l, "wr_r": wr_r, "wr_l": wr_l,
        "hip_r": hip_r, "hip_l": hip_l, "kn_r": kn_r, "kn_l": kn_l, "an_r": an_r, "an_l": an_l,
        "eye_r": head + np.array([-0.022, -0.012]) * s, "eye_l": head + np.array([0.022, -0.012]) * s,
        "ear_r": head + np.array([-0.045, 0.0]) * s, "ear_l": head + np.array([0.045, 0.0]) * s,
    }


def _draw_parsing(sk: dict, look: dict, H: int, W: int) -> np.ndarray:
    canvas = Image.new("L", (W, H), 0)
    draw = ImageDraw.Draw(canvas)
    s = sk["s"]

    def capsule(a, b, r, label):
        draw.line([tuple(a), tuple(b)], fill=label, width=max(1, int(round(2 * r))))
        for p in (a, b):
            draw.ellipse([p[0] - r, p[1] - r, p[0] + r, p[1] + r], fill=label)

    def disk(c, r, label):
        draw.ellipse([c[0] - r, c[1] - r, c[0] + r, c[1] + r], fill=label)

    leg_r = 0.04 * s
    for side in ("r", "l"):
        capsule(sk[f"hip_{side}"], sk[f"kn_{side}"], leg_r, 7)
        capsule(sk[f"kn_{side}"], sk[f"an_{side}"], leg_r * 0.9, 7)

    if look["bottoms"] == "pants":
        for side in ("r", "l"):
            capsule(sk[f"hip_{side}"], sk[f"kn_{side}"], leg_r * 1.25, 4)
            shin = sk[f"kn_{side}"] + 0.7 * (sk[f"an_{side}"] - sk[f"kn_{side}"])
            capsule(sk[f"kn_{side}"], shin, leg_r * 1.15, 4)
        waist = [sk["hip_r"] + np.array([-0.02, -0.04]) * s, sk["hip_l"] + np.array([0.02, -0.04]) * s,
                 sk["hip_l"] + np.array([0.02, 0.04]) * s, sk["hip_r"] + np.array([-0.02, 0.04]) * s]
        draw.polygon([tuple(p) for p in waist], fill=4)
    else:
        knee_v = 0.5 * (sk["kn_r"][1] + sk["kn_l"][1])
        hem = 0.5 * (sk["kn_r"] + sk["kn_l"])
        spread = 0.12 * s
        skirt = [sk["hip_r"] + np.array([-0.02, -0.04]) * s, sk["hip_l"] + np.array([0.02, -0.04]) * s,
                 np.array([hem[0] + spread, knee_v]), np.array([hem[0] - spread, knee_v])]
        draw.polygon([tuple(p) for p in skirt], fill=3)

    torso = [sk["sh_r"] + np.array([-0.01, -0.02]) * s, sk["sh_l"] + np.array([0.01, -0.02]) * s,
             sk["hip_l"] + np.array([0.02, -0.02]) * s, sk["hip_r"] + np.array([-0.02, -0.02]) * s]
    draw.polygon([tuple(p) for p in torso], fill=2)

    arm_r = 0.032 * s
    sleeve = 2
    fore = 2 if look["long_sleeves"] else 6
    for side in ("r", "l"):
        capsule(sk[f"sh_{side}"], sk[f"el_{side}"], arm_r, sleeve)
        capsule(sk[f"el_{side}"], sk[f"wr_{side}"], arm_r * 0.9, fore)
        disk(sk[f"wr_{side}"], arm_r * 1.1, 6)

    capsule(sk["neck"], sk["head"], 0.03 * s, 6)
    disk(sk["head"] + np.array([0.0, -0.012]) * s, 0.068 * s, 1)
    disk(sk["head"] + np.array([0.0, 0.006]) * s, 0.056 * s, 5)
    return np.asarray(canvas, dtype=np.uint8)


def _paint(labels: np.ndarray, look: dict) -> np.ndarray:
    img = look["palette"][labels].astype(np.float64)
    rows = (np.arange(labels.shape[0]) // look["stripe_period"]) % 2 == 1
    textured = np.isin(labels, (3, 4)) & rows[:, None]
    img[textured] *= 0.6
    return img.round().clip(0, 255).astype(np.uint8)


def _keypoints_from_skeleton(sk: dict, H: int, W: int) -> Keypoints:
    order = ["head", "neck", "sh_r", "el_r", "wr_r", "sh_l", "el_l", "wr_l",
             "hip_r", "kn_r", "an_r", "hip_l", "kn_l", "an_l", "eye_r", "eye_l", "ear_r", "ear_l"]
    joints = []
    for name in order:
        x, y = (int(v) for v in np.round(sk[name]))
        joints.append((x, y) if (0 <= x < W and 0 <= y < H) else None)
    return Keypoints(tuple(joints))


def render_figure(look: dict, pose: dict, H: int, W: int):
    sk = _skeleton(pose, H, W)
    labels = _draw_parsing(sk, look, H, W)
    return _paint(labels, look), labels, _keypoints_from_skeleton(sk, H, W)


def make_synthetic_pair(seed: int, H: int = 64, W: int = 64) -> PairedSample:
    """A deterministic cut-out figure rendered in two poses with shared colors."""
    if H < 32 or W < 32:
        raise ValueError("synthetic figures need at least 32x32 pixels")
    rng = np.random.default_rng(seed)
    look = _sample_appearance(rng)
    src_pose, tgt_pose = _sample_pose(rng), _sample_pose(rng)
    img_s, lab_s, kp_s = render_figure(look, src_pose, H, W)
    img_t, lab_t, kp_t = render_figure(look, tgt_pose, H, W)
    return PairedSample(
        source_image=_uint8_to_tensor(img_s),
        target_image=_uint8_to_tensor(img_t),
        source_keypoints=kp_s,
        target_keypoints=kp_t,
        source_parsing=torch.from_numpy(lab_s.astype(np.int64)),
        target_parsing=torch.from_numpy(lab_t.astype(np.int64)),
    )


def synthetic_appearance(seed: int) -> dict:
    """The appearance parameters ``make_synthetic_pair(seed, ...)`` paints with."""
    return _sample_appearance(np.random.default_rng(seed))


# ----------------------------------------------------------------------------
# file formats


def save_image(path, img: torch.Tensor) -> None:
    Image.fromarray(tensor_to_uint8(img), mode="RGB").save(path)


def load_image(path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return _uint8_to_tensor(arr)


def save_parsing(path, p: torch.Tensor) -> None:
    p = validate_parsing(p)
    Image.fromarray(p.numpy().astype(np.uint8), mode="L").save(path)


def load_parsing(path, raw: bool = False, table=None) -> torch.Tensor:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise DataError(f"{path}: parsing map must be a single-channel 8-bit PNG, got mode {im.mode}")
        arr = np.asarray(im).astype(np.int64)
    if raw:
        return relabel_parsing(arr, table)
    try:
        return validate_parsing(torch.from_numpy(arr))
    except LabelRangeError as e:
        raise LabelRangeError(f"{path}: {e}") from None


def save_keypoints(path, kps: Keypoints) -> None:
    Path(path).write_text(json.dumps(kps.to_list()))


def load_keypoints(path) -> Keypoints:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise KeypointFormatError(f"{path}: invalid JSON ({e})") from None
    try:
        return Keypoints.from_list(data)
    except KeypointFormatError as e:
        raise KeypointFormatError(f"{path}: {e}") from None


def load_sample(image_path, keypoints_path, parsing_path):
    """Load and cross-validate one (image, keypoints, parsing) triple."""
    img = load_image(image_path)
    kps = load_keypoints(keypoints_path)
    parsing = load_parsing(parsing_path)
    H, W = img.shape[-2:]
    if tuple(parsing.shape) != (H, W):
        raise ShapeMismatchError(
            f"{parsing_path}: parsing shape {tuple(parsing.shape)} does not match image shape {(H, W)}")
    kps.check_bounds(H, W)
    return img, kps, parsing


def read_pair_list(path) -> list:
    pairs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{n}: expected 'source<TAB>target'")
        pairs.append((parts[0], parts[1]))
    return pairs


def write_pair_list(path, pairs: Sequence) -> None:
    Path(path).write_text("".join(f"{a}\t{b}\n" for a, b in pairs))


def sample_paths(root, stem: str) -> tuple:
    root = Path(root)
    return (root / "images" / f"{stem}.png", root / "keypoints" / f"{stem}.json",
            root / "parsing" / f"{stem}.png")


def save_pair(root, index: int, sample: PairedSample) -> tuple:
    root = Path(root)
    for sub in ("images", "keypoints", "parsing"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    stems = (f"{index:04d}_src", f"{index:04d}_tgt")
    for stem, img, kps, par in zip(
            stems,
            (sample.source_image, sample.target_image),
            (sample.source_keypoints, sample.target_keypoints),
            (sample.source_parsing, sample.target_parsing)):
        ip, kp, pp = sample_paths(root, stem)
        save_image(ip, img)
        save_keypoints(kp, kps)
        save_parsing(pp, par)
    return stems


def load_pair(root, source_stem: str, target_stem: str) -> PairedSample:
    img_s, kp_s, par_s = load_sample(*sample_paths(root, source_stem))
    img_t, kp_t, par_t = load_sample(*sample_paths(root, target_stem))
    return PairedSample(img_s, img_t, kp_s, kp_t, par_s, par_t)


def load_pair_dir(root, pair_list: str = "pairs.txt") -> list:
    root = Path(root)
    return [load_pair(root, a, b) for a, b in read_pair_list(root / pair_list)]


def synthetic_dataset(n: int, seed: int = 0, H: int = 64, W: int = 64) -> list:
    return [make_synthetic_pair(seed * 100_003 + i, H, W) for i in range(n)]


def sample_to_inputs(sample: PairedSample, sigma: Optional[float] = None) -> dict:
    """Model-ready tensors for one pair (no batch axis)."""
    H, W = sample.size
    return {
        "I_s": sample.source_image,
        "I_t": sample.target_image,
        "P_s": encode_pose_heatmap(sample.source_keypoints, H, W, sigma),
        "P_t": encode_pose_heatmap(sample.target_keypoints, H, W, sigma),
        "S_s": one_hot(sample.source_parsing),
        "S_t": one_hot(sample.target_parsing),
    }


def collate(items: Sequence[dict]) -> dict:
    return {k: torch.stack([it[k] for it in items]) for k in items[0]}
