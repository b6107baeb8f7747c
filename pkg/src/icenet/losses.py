"""Training losses for the gamma estimator.

Three differentiable terms steer the enhanced luminance:

* brightness-control: mean squared distance between the corrected luminance
  and a target map built from the user annotations,
* inverse entropy of a soft (differentiable) histogram, pushing the output
  histogram toward uniform,
* smoothness of the gamma map via squared forward differences.

The target map is a pure function of the inputs and annotations, never of
the parameters, so it is built outside the gradient graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.special import expit

from . import autodiff as ad
from .imgops import Y_MAX

DEFAULT_SCRIBBLE_STRENGTH = 5.0  # luminance offset per scribble unit
DEFAULT_CURVE_GAMMA = 5.0  # exponent 1/gamma of the bilateral adjustment
DEFAULT_WINDOW = 15  # local-max window of the target builder
DEFAULT_HIST_SLOPE = 10.0  # sigmoid slope of the soft histogram
BIN_WIDTH = 1.0
N_BINS = 256
ENTROPY_EPS = 1e-6

DEFAULT_ENTROPY_WEIGHT = 10.0
DEFAULT_SMOOTH_WEIGHT = 20.0


@dataclass(frozen=True)
class TargetMap:
    """Per-pixel brightness target in [0, 255].

    degenerate_normalization is set when the annotated luminance was
    constant, in which case the normalized map falls back to 0.5.
    """

    data: np.ndarray
    degenerate_normalization: bool = False


@dataclass(frozen=True)
class SoftHistogram:
    """256 differentiable bin masses plus the contributing pixel count."""

    bins: ad.Tensor
    n_pixels: int


def bilateral_adjustment(bar: np.ndarray, eta: float, curve_gamma: float) -> np.ndarray:
    """Blend the dark-lifting and bright-compressing curves on [0, 1] data."""
    dark = bar ** (1.0 / curve_gamma)
    bright = 1.0 - (1.0 - bar) ** (1.0 / curve_gamma)
    return eta * dark + (1.0 - eta) * bright


def build_target(
    luma: np.ndarray,
    scribble: np.ndarray,
    eta: float,
    scribble_strength: float = DEFAULT_SCRIBBLE_STRENGTH,
    curve_gamma: float = DEFAULT_CURVE_GAMMA,
    window: int = DEFAULT_WINDOW,
    normalization: str = "minmax",
) -> TargetMap:
    """Construct the target brightness map from annotations.

    The scribble map, scaled by `scribble_strength`, offsets the luminance;
    the result is normalized to [0, 1], shaped by the bilateral adjustment
    blended with the exposure level, then dilated by a local max over a
    `window`-sized square (replicate padding) and rescaled to [0, 255].

    normalization "minmax" rescales by the per-image range; "scale" divides
    by 255 and clips, kept as the simpler alternative reading.
    """
    luma = np.asarray(luma, dtype=np.float64)
    scribble = np.asarray(scribble, dtype=np.float64)
    if luma.shape != scribble.shape:
        raise ValueError(f"luma {luma.shape} and scribble {scribble.shape} dims differ")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"exposure level must be in [0, 1], got {eta}")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd size")

    lifted = luma + scribble_strength * scribble
    degenerate = False
    if normalization == "minmax":
        lo, hi = lifted.min(), lifted.max()
        if hi - lo < 1e-12:
            bar = np.full_like(lifted, 0.5)
            degenerate = True
        else:
            bar = (lifted - lo) / (hi - lo)
    elif normalization == "scale":
        bar = np.clip(lifted / Y_MAX, 0.0, 1.0)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")

    shaped = bilateral_adjustment(bar, eta, curve_gamma)
    target = Y_MAX * maximum_filter(shaped, size=window, mode="nearest")
    return TargetMap(target, degenerate)


def brightness_control_loss(corrected: ad.Tensor, target: TargetMap | np.ndarray) -> ad.Tensor:
    """Mean squared error between corrected luminance and the target map."""
    data = target.data if isinstance(target, TargetMap) else np.asarray(target)
    if corrected.shape != data.shape:
        raise ValueError(f"corrected {corrected.shape} vs target {data.shape}")
    return ad.reduce_mean(ad.square(ad.affine(corrected, 1.0, -data)))


def soft_histogram(
    corrected: ad.Tensor,
    slope: float = DEFAULT_HIST_SLOPE,
    bin_width: float = BIN_WIDTH,
) -> SoftHistogram:
    """Differentiable 256-bin histogram of a [0, 255] luminance map.

    Each pixel spreads unit mass over nearby bins through a difference of
    shifted sigmoids; bin i collects
    (1/D) * [phi(s*(i - Z + D/2)) - phi(s*(i - Z - D/2))] summed over pixels.
    """
    z = corrected.data.reshape(-1)
    centers = np.arange(N_BINS, dtype=z.dtype)[:, None]
    upper = expit(slope * (centers - z[None, :] + bin_width / 2.0))
    lower = expit(slope * (centers - z[None, :] - bin_width / 2.0))
    bins_value = (upper - lower).sum(axis=1) / bin_width

    out = ad._make(bins_value, (corrected,), None)

    def backward():
        # d kappa / dZ = (slope / D) * (phi'(lower) - phi'(upper))
        d_upper = upper * (1.0 - upper)
        d_lower = lower * (1.0 - lower)
        per_pixel = (slope / bin_width) * (out.grad @ (d_lower - d_upper))
        corrected.accumulate(per_pixel.reshape(corrected.shape))

    out._backward = backward if out._parents else None
    return SoftHistogram(out, int(z.size))


def entropy_loss(hist: SoftHistogram) -> ad.Tensor:
    """Inverse Shannon entropy (natural log) of the normalized histogram."""
    p = ad.affine(hist.bins, 1.0 / hist.n_pixels)
    neg_entropy = ad.reduce_sum(ad.xlogx(p))
    return ad.reciprocal(ad.affine(neg_entropy, -1.0, ENTROPY_EPS))


def smoothness_loss(gamma: ad.Tensor) -> ad.Tensor:
    """Sum of squared horizontal and vertical forward differences."""
    if gamma.data.ndim != 2 or min(gamma.shape) < 2:
        raise ValueError(f"gamma map must be at least 2x2, got {gamma.shape}")
    g = gamma.data
    dh = g[:, 1:] - g[:, :-1]
    dv = g[1:, :] - g[:-1, :]
    value = np.asarray((dh * dh).sum() + (dv * dv).sum())
    out = ad._make(value, (gamma,), None)

    def backward():
        grad = np.zeros_like(g)
        gh = 2.0 * dh * out.grad
        gv = 2.0 * dv * out.grad
        grad[:, 1:] += gh
        grad[:, :-1] -= gh
        grad[1:, :] += gv
        grad[:-1, :] -= gv
        gamma.accumulate(grad)

    out._backward = backward if out._parents else None
    return out


@dataclass(frozen=True)
class LossBreakdown:
    brightness: float
    entropy: float
    smoothness: float
    entropy_weight: float
    smoothness_weight: float

    @property
    def total(self) -> float:
        return (
            self.brightness
            + self.entropy_weight * self.entropy
            + self.smoothness_weight * self.smoothness
        )


def total_loss(
    corrected: ad.Tensor,
    target: TargetMap | np.ndarray,
    gamma: ad.Tensor,
    entropy_weight: float = DEFAULT_ENTROPY_WEIGHT,
    smoothness_weight: float = DEFAULT_SMOOTH_WEIGHT,
    hist_slope: float = DEFAULT_HIST_SLOPE,
) -> tuple[ad.Tensor, LossBreakdown]:
    """Weighted sum of the three losses plus its per-component breakdown."""
    brightness = brightness_control_loss(corrected, target)
    entropy = entropy_loss(soft_histogram(corrected, slope=hist_slope))
    smooth = smoothness_loss(gamma)
    total = ad.add(
        brightness,
        ad.add(
            ad.affine(entropy, entropy_weight), ad.affine(smooth, smoothness_weight)
        ),
    )
    breakdown = LossBreakdown(
        brightness=brightness.item(),
        entropy=entropy.item(),
        smoothness=smooth.item(),
        entropy_weight=entropy_weight,
        smoothness_weight=smoothness_weight,
    )
    return total, breakdown
