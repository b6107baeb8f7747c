"""Finite-difference verification of every loss through the full network."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses, model, training

TOLERANCE = 1e-4


def _random_inputs(rng: np.random.Generator, size: int):
    luma = rng.uniform(0.0, 255.0, size=(size, size))
    scribble = rng.integers(-1, 2, size=(size, size)).astype(np.float64)
    eta = float(rng.uniform(0.0, 1.0))
    return luma, scribble, eta


def random_params(rng: np.random.Generator, weight_std: float, bias_std: float) -> model.ModelParams:
    """Parameters in a non-degenerate operating regime.

    Freshly initialized weights keep every pre-activation huddled around
    zero, which makes the check vacuous (near-zero gradients) and kink-heavy;
    larger weights plus random biases spread the activations out.
    """
    tensors = {}
    for name, shape in model.expected_shapes().items():
        std = bias_std if name.endswith(".bias") else weight_std
        tensors[name] = rng.normal(0.0, std, size=shape)
    return model.ModelParams(tensors)


def check_losses(
    seed: int = 0,
    size: int = 8,
    h: float = 1e-5,
    samples_per_param: int = 3,
    weight_std: float = 0.05,
    bias_std: float = 0.1,
) -> dict[str, float]:
    """Worst relative gradient error per loss, through all parameters."""
    rng = np.random.default_rng(seed)
    params = random_params(rng, weight_std, bias_std)
    luma, scribble, eta = _random_inputs(rng, size)
    target = losses.build_target(luma, scribble, eta)

    def forward(tensors):
        gamma = model.predict_gamma(tensors, luma, scribble, eta)
        corrected = training.gamma_correct_tensor(luma, gamma)
        return gamma, corrected

    def make_compute(which: str):
        def compute():
            signs: list[bytes] = []
            tensors = model.as_tensors(params, requires_grad=True)
            with ad.record_relu_signs(signs):
                gamma, corrected = forward(tensors)
                if which == "brightness":
                    loss = losses.brightness_control_loss(corrected, target)
                elif which == "entropy":
                    loss = losses.entropy_loss(losses.soft_histogram(corrected))
                elif which == "smoothness":
                    loss = losses.smoothness_loss(gamma)
                else:
                    loss, _ = losses.total_loss(corrected, target, gamma)
            loss.backward()
            grads = {
                name: t.grad if t.grad is not None else np.zeros_like(t.data)
                for name, t in tensors.items()
            }
            return loss.item(), grads, b"".join(signs)

        return compute

    report = {}
    for which in ("brightness", "entropy", "smoothness", "total"):
        report[which] = ad.finite_diff_check(
            make_compute(which),
            params.tensors,
            h=h,
            samples_per_param=samples_per_param,
            rng=np.random.default_rng(seed + 1),
        )
    return report
