"""The gamma-estimator network: a seven-layer convolutional feature
extractor with mirrored concatenated skip connections, and a two-layer
fully-connected block that turns the exposure level into a driving vector.
The per-pixel gamma value is ten times the sigmoid of the inner product
between the feature vector and the driving vector, so it always lies
strictly inside (0, 10).

Parameters live in a name -> float64 array mapping with a fixed order;
checkpoints store the same tensors in 32-bit (see CHECKPOINT_MAGIC format
notes on save/load).
"""

from __future__ import annotations

import struct

import numpy as np

from . import autodiff as ad
from .imgops import Y_MAX

# (in_channels, out_channels) of the seven conv layers. Layers 5..7 consume
# the concatenation of an earlier activation with the previous one, mirror
# fashion: c5(cat(a3, a4)), c6(cat(a2, a5)), c7(cat(a1, a6)).
CONV_CHANNELS = ((2, 32), (32, 32), (32, 32), (32, 32), (64, 32), (64, 32), (64, 32))
SKIP_SOURCES = {5: 3, 6: 2, 7: 1}
FC_CHANNELS = ((1, 32), (32, 32))

GAMMA_SCALE = 10.0
INIT_STD = 0.02

CHECKPOINT_MAGIC = b"ICENET01"


class CheckpointError(ValueError):
    """Raised on malformed, truncated or architecture-incompatible files."""


def expected_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for i, (cin, cout) in enumerate(CONV_CHANNELS, start=1):
        shapes[f"conv{i}.weight"] = (cout, cin, 3, 3)
        shapes[f"conv{i}.bias"] = (cout,)
    for i, (nin, nout) in enumerate(FC_CHANNELS, start=1):
        shapes[f"fc{i}.weight"] = (nout, nin)
        shapes[f"fc{i}.bias"] = (nout,)
    return shapes


EXPECTED_PARAM_COUNT = sum(int(np.prod(s)) for s in expected_shapes().values())


class ModelParams:
    """All trainable tensors, keyed by name in a fixed canonical order."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        expected = expected_shapes()
        if list(tensors) != list(expected):
            raise ValueError(
                f"parameter names {sorted(tensors)} do not match the architecture"
            )
        for name, arr in tensors.items():
            if arr.shape != expected[name]:
                raise ValueError(
                    f"tensor {name!r} has shape {arr.shape}, expected {expected[name]}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"tensor {name!r} contains non-finite values")
        self.tensors = tensors

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> dict[str, np.ndarray]:
        return {k: v.astype(dtype) for k, v in self.tensors.items()}

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def __eq__(self, other) -> bool:
        return isinstance(other, ModelParams) and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def init_params(seed: int) -> ModelParams:
    """Gaussian(0, 0.02^2) weights and zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, INIT_STD, size=shape)
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def as_tensors(
    params: ModelParams, requires_grad: bool = False, dtype=np.float64
) -> dict[str, ad.Tensor]:
    """Wrap parameters as graph leaves.

    At the canonical float64 the arrays are aliased, not copied, so in-place
    optimizer updates (and gradient-check perturbations) are visible to
    subsequent forward passes through the same leaves.
    """
    return {
        name: ad.Tensor(arr.astype(dtype, copy=False), requires_grad)
        for name, arr in params.tensors.items()
    }


def _clip_open_unit(x: ad.Tensor) -> ad.Tensor:
    """Clamp sigmoid output into the open interval (0, 1).

    expit saturates to exactly 0.0 or 1.0 for |x| beyond ~37 in float64;
    the clamp keeps the scaled gamma strictly inside its range without
    affecting gradients anywhere the sigmoid is numerically non-constant.
    """
    info = np.finfo(x.dtype)
    lo, hi = info.tiny, 1.0 - info.eps
    inside = (x.data > lo) & (x.data < hi)
    out = ad._make(np.clip(x.data, lo, hi), (x,), None)

    def backward():
        x.accumulate(out.grad * inside)

    out._backward = backward if out._parents else None
    return out


def extract_features(
    tensors: dict[str, ad.Tensor], luma_norm: np.ndarray, scribble: np.ndarray
) -> ad.Tensor:
    """Run the seven-layer extractor on [0,1] luminance + {-1,0,1} scribbles."""
    if luma_norm.shape != scribble.shape:
        raise ValueError(
            f"luminance {luma_norm.shape} and scribble {scribble.shape} dims differ"
        )
    dtype = tensors["conv1.weight"].dtype
    x = ad.Tensor(np.stack([luma_norm, scribble]).astype(dtype, copy=False))
    activations: list[ad.Tensor] = []
    for i in range(1, len(CONV_CHANNELS) + 1):
        if i in SKIP_SOURCES:
            x = ad.concat_channels([activations[SKIP_SOURCES[i] - 1], x])
        x = ad.relu(ad.conv2d(x, tensors[f"conv{i}.weight"], tensors[f"conv{i}.bias"]))
        activations.append(x)
    return x


def driving_vector(tensors: dict[str, ad.Tensor], eta: float) -> ad.Tensor:
    """Map the exposure level through the two fully-connected layers."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"exposure level must be in [0, 1], got {eta}")
    dtype = tensors["fc1.weight"].dtype
    x = ad.Tensor(np.array([eta], dtype=dtype))
    hidden = ad.relu(ad.linear(x, tensors["fc1.weight"], tensors["fc1.bias"]))
    return ad.linear(hidden, tensors["fc2.weight"], tensors["fc2.bias"])


def gamma_from_features(features: ad.Tensor, drive: ad.Tensor) -> ad.Tensor:
    """Per-pixel gamma: 10 * sigmoid(<feature, drive>), strictly in (0, 10)."""
    return ad.affine(
        _clip_open_unit(ad.sigmoid(ad.channel_dot(features, drive))), GAMMA_SCALE
    )


def predict_gamma(
    tensors: dict[str, ad.Tensor],
    luma: np.ndarray,
    scribble: np.ndarray,
    eta: float,
) -> ad.Tensor:
    """Full forward pass from a [0,255] luminance image to the gamma map."""
    features = extract_features(tensors, np.asarray(luma) / Y_MAX, scribble)
    return gamma_from_features(features, driving_vector(tensors, eta))


# ---------------------------------------------------------------------------
# checkpoint format
#
#   magic "ICENET01" (8 bytes)
#   record count          u32 LE
#   per tensor:
#     name length         u16 LE
#     name                UTF-8
#     rank                u8
#     dims                u32 LE each
#     data                float32 LE, row-major
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(params.tensors))]
    for name, arr in params.tensors.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint file {path}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    magic = bytes(take(len(CHECKPOINT_MAGIC)))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC.decode()!r}"
        )
    (count,) = struct.unpack("<I", take(4))
    expected = expected_shapes()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        data = np.frombuffer(take(4 * int(np.prod(dims))), dtype="<f4")
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
        if dims != expected[name]:
            raise CheckpointError(
                f"tensor {name!r} has shape {dims}, expected {expected[name]}"
            )
        tensors[name] = data.reshape(dims).astype(np.float64)
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {missing}")
    if pos != len(view):
        raise CheckpointError(
            f"checkpoint has {len(view) - pos} trailing bytes after the last record"
        )
    return ModelParams({name: tensors[name] for name in expected})
