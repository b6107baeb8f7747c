"""Full-reference quality metrics (PSNR, SSIM) and a paired-set evaluator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from . import imgops, model, personalization, pipeline
from .imgops import Y_MAX

log = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0

# Best-exposure sweep grid: 0.05, 0.10, ..., 0.95.
DEFAULT_ETA_GRID = tuple(np.round(np.arange(1, 20) * 0.05, 2))

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all channels, capped at 100."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(Y_MAX * Y_MAX / mse)), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
    k1: float = SSIM_K1,
    k2: float = SSIM_K2,
) -> float:
    """Mean local structural similarity of the two images' luminance.

    Gaussian-weighted local statistics with the conventional constants;
    inputs may be RGB (luminance is taken) or single-channel.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    x = imgops.rgb_to_luminance(a) if a.ndim == 3 else a
    y = imgops.rgb_to_luminance(b) if b.ndim == 3 else b
    if min(x.shape) < window:
        raise ValueError(f"image sides must be >= {window}, got {x.shape}")

    kernel = _gaussian_kernel(window, sigma)
    c1 = (k1 * Y_MAX) ** 2
    c2 = (k2 * Y_MAX) ** 2

    def local_mean(img):
        return correlate(img, kernel, mode="nearest")

    mu_x = local_mean(x)
    mu_y = local_mean(y)
    var_x = local_mean(x * x) - mu_x * mu_x
    var_y = local_mean(y * y) - mu_y * mu_y
    cov = local_mean(x * y) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    # Only the interior is averaged: within half a window of the border the
    # local statistics depend on the padding rather than the images.
    pad = (window - 1) // 2
    return float(score[pad:-pad, pad:-pad].mean())


@dataclass(frozen=True)
class PairResult:
    name: str
    eta_used: float
    psnr_db: float
    ssim: float


@dataclass(frozen=True)
class MetricReport:
    pairs: tuple[PairResult, ...]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([p.psnr_db for p in self.pairs])) if self.pairs else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([p.ssim for p in self.pairs])) if self.pairs else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["filename", "eta_used", "psnr_db", "ssim"])
            for p in self.pairs:
                writer.writerow([p.name, p.eta_used, p.psnr_db, p.ssim])


def list_pairs(pairs_dir) -> list[tuple[str, Path, Path]]:
    """Match files of pairs_dir/input against pairs_dir/reference by name."""
    root = Path(pairs_dir)
    input_dir = root / "input"
    reference_dir = root / "reference"
    if not input_dir.is_dir() or not reference_dir.is_dir():
        raise ValueError(f"{root} must contain input/ and reference/ directories")
    pairs = []
    for candidate in sorted(input_dir.iterdir()):
        reference = reference_dir / candidate.name
        if not reference.exists():
            log.warning("skipping unpaired input %s", candidate.name)
            continue
        pairs.append((candidate.name, candidate, reference))
    for candidate in sorted(reference_dir.iterdir()):
        if not (input_dir / candidate.name).exists():
            log.warning("skipping unpaired reference %s", candidate.name)
    return pairs


def eval_pairs(
    params: model.ModelParams,
    pairs_dir,
    policy: str = "best",
    store: personalization.ObservationStore | None = None,
    eta_grid: tuple[float, ...] = DEFAULT_ETA_GRID,
) -> MetricReport:
    """Score enhanced inputs against references.

    policy "best" sweeps the exposure grid and keeps the max-PSNR result per
    image; policy "init" uses the personalized initial exposure.
    """
    if policy not in ("best", "init"):
        raise ValueError(f"unknown policy {policy!r}")
    results = []
    for name, input_path, reference_path in list_pairs(pairs_dir):
        rgb = imgops.load_image(input_path)
        reference = imgops.load_image(reference_path)
        if policy == "best":
            best = None
            for eta in eta_grid:
                out = pipeline.enhance_rgb(params, rgb, float(eta)).image
                score = psnr(out, reference)
                if best is None or score > best[1]:
                    best = (float(eta), score, out)
            eta_used, psnr_db, enhanced = best
        else:
            eta_used, _ = personalization.initial_eta(imgops.rgb_to_luminance(rgb), store)
            enhanced = pipeline.enhance_rgb(params, rgb, eta_used).image
            psnr_db = psnr(enhanced, reference)
        results.append(PairResult(name, eta_used, psnr_db, ssim(enhanced, reference)))
    return MetricReport(tuple(results))
