"""Dataset ingestion, annotation emulation and the training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import autodiff as ad
from . import imgops, losses, model
from .imgops import Stroke

log = logging.getLogger(__name__)

EMULATED_RADIUS = 10
MAX_STROKES_PER_POLARITY = 5
ETA_RANGE = (0.2, 0.8)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, breakdown: losses.LossBreakdown):
        super().__init__(
            f"non-finite loss at step {step}: brightness={breakdown.brightness!r} "
            f"entropy={breakdown.entropy!r} smoothness={breakdown.smoothness!r}"
        )
        self.step = step
        self.breakdown = breakdown


@dataclass
class TrainConfig:
    data_dir: str
    out_dir: str
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-3
    side: int = 512
    seed: int = 0
    entropy_weight: float = losses.DEFAULT_ENTROPY_WEIGHT
    smoothness_weight: float = losses.DEFAULT_SMOOTH_WEIGHT
    scribble_strength: float = losses.DEFAULT_SCRIBBLE_STRENGTH
    curve_gamma: float = losses.DEFAULT_CURVE_GAMMA
    window: int = losses.DEFAULT_WINDOW
    hist_slope: float = losses.DEFAULT_HIST_SLOPE
    normalization: str = "minmax"
    checkpoint_interval: int = 10  # epochs between checkpoints
    # Resample the emulated annotation of each image every epoch (the
    # default); when off, one annotation per image is drawn up front and
    # reused, which is what the overfit smoke test wants.
    resample_annotations: bool = True

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_interval < 1:
            raise ValueError("epochs, batch size and checkpoint interval must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.side < 32:
            raise ValueError("image side must be >= 32")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd size")


@dataclass(frozen=True)
class EmulatedAnnotation:
    eta: float
    darken_count: int
    brighten_count: int
    strokes: tuple[Stroke, ...]
    scribble: np.ndarray = field(repr=False)


def load_dataset(data_dir, side: int) -> list[np.ndarray]:
    """Decode every readable image, resize to side x side, keep luminance.

    Files are processed in name order; unreadable ones are skipped with a
    warning. An empty result is an error.
    """
    root = Path(data_dir)
    if not root.is_dir():
        raise ValueError(f"dataset directory {root} does not exist")
    images = []
    for path in sorted(p for p in root.iterdir() if p.is_file()):
        try:
            rgb = imgops.load_image(path)
        except Exception as exc:  # undecodable file
            log.warning("skipping unreadable file %s (%s)", path.name, exc)
            continue
        resized = np.asarray(
            Image.fromarray(rgb).resize((side, side), Image.BILINEAR)
        )
        images.append(imgops.rgb_to_luminance(resized))
    if not images:
        raise ValueError(f"no decodable images in {root}")
    return images


def emulate_annotations(
    rng: np.random.Generator, height: int, width: int, radius: int = EMULATED_RADIUS
) -> EmulatedAnnotation:
    """Draw a random exposure level plus 0..5 strokes of each polarity."""
    if min(height, width) < radius:
        raise ValueError(f"image dims ({height}, {width}) smaller than radius {radius}")
    eta = float(rng.uniform(*ETA_RANGE))
    n_darken = int(rng.integers(0, MAX_STROKES_PER_POLARITY + 1))
    n_brighten = int(rng.integers(0, MAX_STROKES_PER_POLARITY + 1))
    strokes = []
    for polarity, count in (("darken", n_darken), ("brighten", n_brighten)):
        for _ in range(count):
            x = float(rng.uniform(0, width - 1))
            y = float(rng.uniform(0, height - 1))
            strokes.append(Stroke(polarity, ((x, y),), radius))
    scribble = imgops.rasterize_scribbles(strokes, width, height)
    return EmulatedAnnotation(eta, n_darken, n_brighten, tuple(strokes), scribble)


@dataclass
class TrainResult:
    params: model.ModelParams
    checkpoint_path: Path
    trace: list[tuple[int, int, float, float, float, float]]
    epoch_means: list[float]


def item_loss(
    tensors: dict[str, ad.Tensor], luma: np.ndarray, annotation: EmulatedAnnotation, cfg: TrainConfig
) -> tuple[ad.Tensor, losses.LossBreakdown]:
    """Forward pass and total loss of one annotated image."""
    scribble = annotation.scribble.astype(np.float64)
    gamma = model.predict_gamma(tensors, luma, scribble, annotation.eta)
    corrected = gamma_correct_tensor(luma, gamma)
    target = losses.build_target(
        luma,
        scribble,
        annotation.eta,
        scribble_strength=cfg.scribble_strength,
        curve_gamma=cfg.curve_gamma,
        window=cfg.window,
        normalization=cfg.normalization,
    )
    return losses.total_loss(
        corrected,
        target,
        gamma,
        entropy_weight=cfg.entropy_weight,
        smoothness_weight=cfg.smoothness_weight,
        hist_slope=cfg.hist_slope,
    )


def gamma_correct_tensor(luma: np.ndarray, gamma: ad.Tensor) -> ad.Tensor:
    """Differentiable twin of imgops.gamma_correct (gradient w.r.t. gamma)."""
    base = np.maximum(np.asarray(luma, dtype=gamma.dtype), imgops.LUMA_FLOOR) / imgops.Y_MAX
    return ad.affine(ad.pow_fixed_base(base, gamma), imgops.Y_MAX)


def train(config: TrainConfig) -> TrainResult:
    """Run the training loop; deterministic for a fixed seed and dataset."""
    config.validate()
    images = load_dataset(config.data_dir, config.side)
    rng = np.random.default_rng(config.seed)
    params = model.init_params(config.seed)
    tensors = model.as_tensors(params, requires_grad=True)
    state = ad.AdamState()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    fixed_annotations = None
    if not config.resample_annotations:
        fixed_annotations = [
            emulate_annotations(rng, *img.shape) for img in images
        ]

    trace: list[tuple[int, int, float, float, float, float]] = []
    epoch_means: list[float] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(images))
        epoch_totals = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            step += 1
            sums = np.zeros(3)
            for idx in batch:
                luma = images[idx]
                if fixed_annotations is not None:
                    annotation = fixed_annotations[idx]
                else:
                    annotation = emulate_annotations(rng, *luma.shape)
                total, breakdown = item_loss(tensors, luma, annotation, config)
                if not np.isfinite(breakdown.total):
                    raise TrainingDiverged(step, breakdown)
                total.backward()
                sums += (
                    breakdown.brightness,
                    breakdown.entropy_weight * breakdown.entropy,
                    breakdown.smoothness_weight * breakdown.smoothness,
                )
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.data)) / len(batch)
                for name, t in tensors.items()
            }
            for t in tensors.values():
                t.grad = None
            if config.learning_rate > 0:
                ad.adam_step(params.tensors, grads, state, config.learning_rate)
            means = sums / len(batch)
            trace.append((epoch, step, means[0], means[1], means[2], means.sum()))
            epoch_totals.append(means.sum())
        epoch_means.append(float(np.mean(epoch_totals)))
        log.info("epoch %d mean loss %.4f", epoch, epoch_means[-1])
        if epoch % config.checkpoint_interval == 0 and epoch < config.epochs:
            model.save_checkpoint(params, out_dir / f"model_e{epoch:04d}.ckpt")

    final_path = out_dir / "model_final.ckpt"
    model.save_checkpoint(params, final_path)
    write_loss_trace(out_dir / "loss_trace.csv", trace)
    return TrainResult(params, final_path, trace, epoch_means)


def write_loss_trace(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "l_ibc", "l_ent_weighted", "l_smo_weighted", "total"])
        writer.writerows(trace)


@dataclass(frozen=True)
class MonotonicityReport:
    etas: tuple[float, ...]
    mean_luma: tuple[tuple[float, ...], ...]  # per image, per eta
    non_decreasing_pairs: int
    tied_pairs: int
    total_pairs: int

    @property
    def fraction_non_decreasing(self) -> float:
        if self.total_pairs == 0:
            return float("nan")
        return self.non_decreasing_pairs / self.total_pairs


def evaluate_monotonicity(
    params: model.ModelParams, images: list[np.ndarray], etas: list[float]
) -> MonotonicityReport:
    """Measure whether mean output luminance grows with the exposure level."""
    if sorted(etas) != list(etas):
        raise ValueError("exposure levels must be sorted ascending")
    tensors = model.as_tensors(params)
    curves = []
    for luma in images:
        scribble = np.zeros_like(luma)
        means = []
        for eta in etas:
            gamma = model.predict_gamma(tensors, luma, scribble, eta).data
            means.append(float(imgops.gamma_correct(luma, gamma).mean()))
        curves.append(tuple(means))
    good = 0
    ties = 0
    total = 0
    for means in curves:
        for lo, hi in zip(means, means[1:]):
            total += 1
            if hi >= lo:
                good += 1
            if hi == lo:
                ties += 1
    return MonotonicityReport(tuple(etas), tuple(curves), good, ties, total)
