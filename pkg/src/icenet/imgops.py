"""Core image operations: luminance extraction, scribble rasterization,
per-pixel gamma correction and ratio-preserving color restoration.

Images are plain numpy arrays. RGB images have shape (H, W, 3), luminance
and annotation maps have shape (H, W). All intensity math runs in float64
on the [0, 255] scale; quantization to 8 bits happens only at encode time.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

Y_MAX = 255.0

# Luminance floor used inside the power transform and the color-restoration
# division. One intensity level: visually negligible, but keeps 0^gamma and
# x/0 out of the math.
LUMA_FLOOR = 1.0

# BT.601 full-range luma coefficients.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

DARKEN = -1
BRIGHTEN = 1

_POLARITY_VALUES = {"darken": DARKEN, "brighten": BRIGHTEN}


class DimensionMismatch(ValueError):
    """Raised when two maps that must share a pixel grid do not."""


@dataclass(frozen=True)
class Stroke:
    """A single annotation stroke: disks of `radius` around each point.

    polarity: "darken" paints -1, "brighten" paints +1.
    points: (x, y) pixel coordinates; out-of-bounds points are clamped
    to the border at rasterization time.
    """

    polarity: str
    points: tuple[tuple[float, float], ...]
    radius: int = 10

    def __post_init__(self):
        if self.polarity not in _POLARITY_VALUES:
            raise ValueError(f"unknown stroke polarity {self.polarity!r}")
        if self.radius < 1:
            raise ValueError("stroke radius must be >= 1")
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))

    @property
    def value(self) -> int:
        return _POLARITY_VALUES[self.polarity]


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise DimensionMismatch(f"{what}: {a.shape[:2]} vs {b.shape[:2]}")


def rgb_to_luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (H, W, 3) image, in [0, 255]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {rgb.shape}")
    return rgb @ _LUMA_WEIGHTS


def rasterize_scribbles(strokes: list[Stroke] | tuple[Stroke, ...], width: int, height: int) -> np.ndarray:
    """Paint strokes into an (H, W) int8 map with values in {-1, 0, +1}.

    Each stroke paints the union of closed disks around its points; later
    strokes overwrite earlier ones where they overlap.
    """
    if width < 1 or height < 1:
        raise ValueError("scribble map dimensions must be >= 1")
    out = np.zeros((height, width), dtype=np.int8)
    for stroke in strokes:
        value = stroke.value
        r = stroke.radius
        for x, y in stroke.points:
            cx = min(max(x, 0.0), width - 1.0)
            cy = min(max(y, 0.0), height - 1.0)
            x0 = max(int(np.floor(cx - r)), 0)
            x1 = min(int(np.ceil(cx + r)), width - 1)
            y0 = max(int(np.floor(cy - r)), 0)
            y1 = min(int(np.ceil(cy + r)), height - 1)
            ys = np.arange(y0, y1 + 1)[:, None]
            xs = np.arange(x0, x1 + 1)[None, :]
            mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
            region = out[y0 : y1 + 1, x0 : x1 + 1]
            region[mask] = value
    return out


def gamma_correct(luma: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Per-pixel power transform: 255 * (max(Y, 1) / 255) ** gamma."""
    luma = np.asarray(luma, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    _check_same_shape(luma, gamma, "luminance/gamma shape mismatch")
    base = np.maximum(luma, LUMA_FLOOR) / Y_MAX
    return Y_MAX * base**gamma


def restore_color(rgb: np.ndarray, luma: np.ndarray, corrected: np.ndarray) -> np.ndarray:
    """Scale every channel by corrected/luma, preserving hue ratios.

    Result is clamped to [0, 255]; the luminance in the divisor is floored
    at LUMA_FLOOR to match gamma_correct.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    luma = np.asarray(luma, dtype=np.float64)
    corrected = np.asarray(corrected, dtype=np.float64)
    _check_same_shape(rgb, luma, "image/luminance shape mismatch")
    _check_same_shape(luma, corrected, "luminance shape mismatch")
    scale = corrected / np.maximum(luma, LUMA_FLOOR)
    return np.clip(rgb * scale[..., None], 0.0, Y_MAX)


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Round-half-up quantization of [0, 255] float data to uint8."""
    return np.floor(np.clip(img, 0.0, Y_MAX) + 0.5).astype(np.uint8)


def decode_image(data: bytes) -> np.ndarray:
    """Decode PNG/JPEG bytes to an (H, W, 3) uint8 array."""
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"))


def encode_png(img: np.ndarray) -> bytes:
    """Encode an image to PNG bytes. Float input is quantized round-half-up."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = quantize_u8(arr)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def save_png(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))
