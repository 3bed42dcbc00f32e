"""Two-stage person image synthesis and editing with per-region style control."""

from .data import (
    KEYPOINT_NAMES,
    REGION_NAMES,
    Keypoints,
    PairedSample,
    encode_pose_heatmap,
    make_synthetic_pair,
    one_hot,
    relabel_parsing,
)
from .editing import edit_region, interpolate_texture, transfer_texture
from .features import gram, stub_extractor
from .generator import ImageGenConfig, ImageGenerator
from .metrics import fid, psnr
from .norm import compute_correlation, spatial_aware_normalize
from .parsing import ParsingGenerator, parsing_loss
from .pipeline import Synthesizer
from .style import StyleCodeTable, per_region_pool

__version__ = "0.1.0"

__all__ = [
    "KEYPOINT_NAMES", "REGION_NAMES", "Keypoints", "PairedSample", "encode_pose_heatmap", "make_synthetic_pair",
    "one_hot", "relabel_parsing", "edit_region", "interpolate_texture", "transfer_texture", "gram",
    "stub_extractor", "ImageGenConfig", "ImageGenerator", "fid", "psnr", "compute_correlation",
    "spatial_aware_normalize", "ParsingGenerator", "parsing_loss", "Synthesizer", "StyleCodeTable",
    "per_region_pool",
]
