import numpy as np
import pytest

from icenet import imgops, model


def synthetic_photo(side: int, seed: int = 7) -> np.ndarray:
    """A deterministic low-light test image: dark gradient, bright blob,
    mid-tone stripes. Returns (side, side, 3) uint8."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    base = 20 + 60 * xx + 25 * yy
    blob = 160 * np.exp(-(((xx - 0.7) ** 2 + (yy - 0.3) ** 2) / 0.02))
    stripes = 18 * (np.sin(14 * np.pi * xx) > 0)
    noise = rng.normal(0, 3, size=(side, side))
    luma = np.clip(base + blob + stripes + noise, 0, 255)
    rgb = np.stack([luma * 1.05, luma * 0.95, luma * 0.85], axis=-1)
    return imgops.quantize_u8(rgb)


@pytest.fixture(scope="session")
def default_params():
    return model.init_params(0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
