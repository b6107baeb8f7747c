"""Per-user exposure personalization.

The service records (mean input luminance, chosen exposure) pairs; once more
than three observations exist, a quadratic least-squares fit predicts the
initial exposure level for new images from their mean luminance.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgops import Y_MAX

MIN_OBSERVATIONS = 4  # personalization activates when M > 3
DEFAULT_ETA = 0.5


class PersonalizationUnavailable(RuntimeError):
    """Raised when a fit is requested with too few observations."""


@dataclass(frozen=True)
class QuadraticFit:
    """Least-squares coefficients of eta ~ a*y^2 + b*y + c."""

    a: float
    b: float
    c: float
    degraded: bool = False

    def __call__(self, y: float) -> float:
        return self.a * y * y + self.b * y + self.c


def mean_luminance(luma: np.ndarray) -> float:
    """Arithmetic mean over all pixels."""
    return float(np.asarray(luma, dtype=np.float64).mean())


class ObservationStore:
    """Append-only store of (mean luminance, exposure) pairs.

    Persisted one observation per line as "y<TAB>eta"; appends are single
    writes so concurrent readers never see a torn line.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def load(self) -> list[tuple[float, float]]:
        if not self.path.exists():
            return []
        pairs = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            y_text, eta_text = line.split("\t")
            pairs.append((float(y_text), float(eta_text)))
        return pairs

    def append(self, y: float, eta: float) -> int:
        """Record one observation; returns the new count."""
        if not 0.0 <= y <= Y_MAX:
            raise ValueError(f"mean luminance {y} outside [0, {Y_MAX}]")
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"exposure level {eta} outside [0, 1]")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{y!r}\t{eta!r}\n")
            fh.flush()
            os.fsync(fh.fileno())
        return self.count()

    def count(self) -> int:
        return len(self.load())

    @property
    def active(self) -> bool:
        return self.count() >= MIN_OBSERVATIONS


def fit_quadratic(observations: list[tuple[float, float]]) -> QuadraticFit:
    """Least-squares quadratic through the observations via normal equations.

    Requires more than three observations. If every luminance is identical
    the system is rank deficient; the fit degrades to the constant mean
    exposure and is flagged.
    """
    if len(observations) < MIN_OBSERVATIONS:
        raise PersonalizationUnavailable(
            f"need more than 3 observations, have {len(observations)}"
        )
    ys = np.array([y for y, _ in observations])
    etas = np.array([eta for _, eta in observations])
    if np.ptp(ys) < 1e-12:
        return QuadraticFit(0.0, 0.0, float(etas.mean()), degraded=True)
    design = np.stack([ys * ys, ys, np.ones_like(ys)], axis=1)
    normal = design.T @ design
    rhs = design.T @ etas
    try:
        coeffs = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError:
        coeffs, *_ = np.linalg.lstsq(design, etas, rcond=None)
        return QuadraticFit(*map(float, coeffs), degraded=True)
    return QuadraticFit(*map(float, coeffs))


def initial_eta(luma: np.ndarray, store: ObservationStore | None) -> tuple[float, bool]:
    """Personalized initial exposure for an image, with an active flag.

    Falls back to 0.5 (midpoint of the training range) until the store has
    more than three observations. The fit output is clamped to [0, 1].
    """
    observations = store.load() if store is not None else []
    if len(observations) < MIN_OBSERVATIONS:
        return DEFAULT_ETA, False
    fit = fit_quadratic(observations)
    eta = fit(mean_luminance(luma))
    return float(np.clip(eta, 0.0, 1.0)), True
