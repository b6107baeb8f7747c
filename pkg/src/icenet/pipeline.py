"""End-to-end enhancement: annotations in, enhanced RGB image out."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgops, model


@dataclass(frozen=True)
class EnhanceResult:
    image: np.ndarray  # (H, W, 3) uint8
    gamma_min: float
    gamma_mean: float
    gamma_max: float
    mean_luma: float  # mean of the corrected luminance channel


def enhance_rgb(
    params: model.ModelParams,
    rgb: np.ndarray,
    eta: float,
    strokes: list[imgops.Stroke] | tuple[imgops.Stroke, ...] = (),
    dtype=np.float32,
) -> EnhanceResult:
    """Run the full pipeline on an (H, W, 3) image.

    The network forward pass runs in `dtype` (float32 by default, which is
    what checkpoints store); the surrounding pixel math stays in float64.
    """
    rgb = np.asarray(rgb)
    height, width = rgb.shape[:2]
    luma = imgops.rgb_to_luminance(rgb)
    scribble = imgops.rasterize_scribbles(strokes, width, height)
    tensors = model.as_tensors(params, dtype=dtype)
    gamma = model.predict_gamma(tensors, luma, scribble, eta).data.astype(np.float64)
    corrected = imgops.gamma_correct(luma, gamma)
    enhanced = imgops.restore_color(rgb, luma, corrected)
    return EnhanceResult(
        image=imgops.quantize_u8(enhanced),
        gamma_min=float(gamma.min()),
        gamma_mean=float(gamma.mean()),
        gamma_max=float(gamma.max()),
        mean_luma=float(corrected.mean()),
    )
