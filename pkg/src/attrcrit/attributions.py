"""Attribution methods producing per-pixel score maps.

Every method returns an :class:`AttributionMap` whose scores have the input's
spatial shape: channels are summed away for ``C x H x W`` inputs, vector
inputs keep one score per feature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import NoConvLayerError, RangeError, ShapeError
from .network import BackwardRuleSet, Model, backward_input, forward, spatial_shape

_BATCH = 256


@dataclass(frozen=True)
class MethodConfig:
    ig_steps: int = 50
    sg_samples: int = 50
    sg_noise_fraction: float = 0.20
    baseline_value: float = 0.0
    rng_seed: int = 0
    gradcam_layer: int | None = None

    def __post_init__(self):
        if self.ig_steps < 1 or self.sg_samples < 1:
            raise RangeError("ig_steps and sg_samples must be >= 1")
        if not 0.0 <= self.sg_noise_fraction <= 1.0:
            raise RangeError("sg_noise_fraction must lie in [0, 1]")


@dataclass
class AttributionMap:
    scores: np.ndarray
    method: str
    class_index: int
    baseline_value: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = T.as_tensor(self.scores)


def collapse_channels(arr: np.ndarray, input_shape) -> np.ndarray:
    """Sum a per-element attribution over channels (image inputs only)."""
    arr = np.asarray(arr, dtype=np.float64)
    if len(input_shape) == 3:
        return arr.sum(axis=-3)
    return arr


def baseline_image(model: Model, value: float) -> np.ndarray:
    return np.full(model.input_shape, float(value))


def _check_input(model: Model, x) -> np.ndarray:
    x = T.as_tensor(x)
    if x.shape != model.input_shape:
        raise ShapeError(f"input {x.shape} does not match model {model.input_shape}")
    return x


def input_gradient(model: Model, xs: np.ndarray, c: int, rules=None) -> np.ndarray:
    """Backward signal for a single input or a batch (batched in chunks)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape == model.input_shape:
        return backward_input(model, forward(model, xs), c, rules)
    parts = [
        backward_input(model, forward(model, xs[i : i + _BATCH]), c, rules)
        for i in range(0, len(xs), _BATCH)
    ]
    return np.concatenate(parts)


def saliency(model: Model, x, c: int) -> AttributionMap:
    x = _check_input(model, x)
    grad = input_gradient(model, x, c)
    return AttributionMap(collapse_channels(grad * x, model.input_shape), "saliency", c)


def path_average_gradient(grad_fn: Callable[[np.ndarray], np.ndarray], x, x_base, steps: int) -> np.ndarray:
    """Mean of ``grad_fn`` at the left endpoints ``x_base + (i/steps)(x - x_base)``, i < steps.

    ``grad_fn`` receives the whole batch of path points.
    """
    x = np.asarray(x, dtype=np.float64)
    alphas = np.arange(steps) / steps
    shape = (steps,) + (1,) * x.ndim
    path = x_base + alphas.reshape(shape) * (x - x_base)
    return np.mean(grad_fn(path), axis=0)


def integrated_gradient(model: Model, x, c: int, cfg: MethodConfig = MethodConfig()) -> AttributionMap:
    x = _check_input(model, x)
    xb = baseline_image(model, cfg.baseline_value)
    avg = path_average_gradient(lambda p: input_gradient(model, p, c), x, xb, cfg.ig_steps)
    return AttributionMap(
        collapse_channels(avg * (x - xb), model.input_shape),
        "ig",
        c,
        cfg.baseline_value,
        {"steps": cfg.ig_steps, "scheme": "left-riemann"},
    )


def smoothgrad(model: Model, x, c: int, cfg: MethodConfig = MethodConfig()) -> AttributionMap:
    """Gradients averaged over Gaussian-perturbed copies of ``x``, then times ``x``.

    The noise scale is ``sg_noise_fraction * (max(x) - min(x))``.
    """
    x = _check_input(model, x)
    rng = np.random.default_rng(cfg.rng_seed)
    sigma = cfg.sg_noise_fraction * float(x.max() - x.min())
    total = np.zeros_like(x)
    done = 0
    while done < cfg.sg_samples:
        n = min(_BATCH, cfg.sg_samples - done)
        noisy = x + rng.normal(0.0, 1.0, size=(n,) + x.shape) * sigma
        total += input_gradient(model, noisy, c).sum(axis=0)
        done += n
    avg = total / cfg.sg_samples
    return AttributionMap(
        collapse_channels(avg * x, model.input_shape),
        "smoothgrad",
        c,
        cfg.baseline_value,
        {"samples": cfg.sg_samples, "noise_fraction": cfg.sg_noise_fraction, "sigma": sigma, "seed": cfg.rng_seed},
    )


def guided_backprop(model: Model, x, c: int) -> AttributionMap:
    x = _check_input(model, x)
    grad = input_gradient(model, x, c, BackwardRuleSet.guided())
    return AttributionMap(collapse_channels(grad * x, model.input_shape), "gb", c)


def lrp_alpha2beta1(model: Model, x, c: int, epsilon: float = 1e-9) -> AttributionMap:
    x = _check_input(model, x)
    rel = input_gradient(model, x, c, BackwardRuleSet.lrp(2.0, 1.0, epsilon))
    return AttributionMap(
        collapse_channels(rel, model.input_shape), "lrp", c, metadata={"alpha": 2.0, "beta": 1.0, "epsilon": epsilon}
    )


def deeplift_rescale(model: Model, x, c: int, cfg: MethodConfig = MethodConfig()) -> AttributionMap:
    x = _check_input(model, x)
    xb = baseline_image(model, cfg.baseline_value)
    ref = forward(model, xb)
    mult = backward_input(model, forward(model, x), c, BackwardRuleSet.deeplift(ref))
    return AttributionMap(
        collapse_channels(mult * (x - xb), model.input_shape),
        "deeplift",
        c,
        cfg.baseline_value,
        {"rule": "rescale"},
    )


def gradcam(model: Model, x, c: int, cfg: MethodConfig = MethodConfig()) -> AttributionMap:
    """ReLU of the gradient-weighted feature maps of a conv layer, upsampled to the input.

    The feature maps are the conv layer's activations after its ReLU when
    one follows directly.
    """
    x = _check_input(model, x)
    convs = model.conv_indices
    if not convs:
        raise NoConvLayerError("gradcam needs at least one conv2d layer")
    k = convs[-1] if cfg.gradcam_layer is None else cfg.gradcam_layer
    if k not in convs:
        raise NoConvLayerError(f"layer {k} is not a conv2d layer")
    if k + 1 < len(model.layers) and model.layers[k + 1].kind == "relu":
        k += 1
    trace = forward(model, x)
    signals = backward_input(model, trace, c, return_all=True)
    acts = trace.outputs[k][0]
    grads = signals[k + 1][0]
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, acts, axes=1), 0.0)
    h, w = spatial_shape(model.input_shape)
    scores = T.bilinear_resize(cam, (h, w))
    return AttributionMap(scores, "gradcam", c, metadata={"layer": k, "upsampling": "bilinear"})


def random_attribution(x, seed: int, input_shape=None) -> AttributionMap:
    """I.i.d. uniform scores in (0, 1), one per pixel."""
    x = np.asarray(x)
    shape = spatial_shape(input_shape if input_shape is not None else x.shape)
    rng = np.random.default_rng(seed)
    scores = rng.uniform(np.finfo(float).tiny, 1.0, size=shape)
    return AttributionMap(scores, "random", -1, metadata={"seed": seed})


METHODS = ("saliency", "ig", "smoothgrad", "gb", "lrp", "deeplift", "gradcam", "random")


def attribute(method: str, model: Model, x, c: int, cfg: MethodConfig = MethodConfig()) -> AttributionMap:
    """Dispatch by method name (one of :data:`METHODS`)."""
    if method == "saliency":
        return saliency(model, x, c)
    if method == "ig":
        return integrated_gradient(model, x, c, cfg)
    if method == "smoothgrad":
        return smoothgrad(model, x, c, cfg)
    if method == "gb":
        return guided_backprop(model, x, c)
    if method == "lrp":
        return lrp_alpha2beta1(model, x, c)
    if method == "deeplift":
        return deeplift_rescale(model, x, c, cfg)
    if method == "gradcam":
        return gradcam(model, x, c, cfg)
    if method == "random":
        amap = random_attribution(x, cfg.rng_seed, model.input_shape)
        amap.class_index = c
        return amap
    raise ValueError(f"unknown attribution method {method!r}")
