"""Small models and image corpora for tests, demos and acceptance runs.

Includes the three-feature max model used for hand enumeration, random
linear / MLP / CNN generators, a synthetic bars-and-blocks image corpus, and a
minimal Adam trainer so a desk-scale CNN can be fitted without any framework.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .network import Conv2D, Dense, Flatten, MaxPool2D, Model, ReLU, Softmax, forward

CORPUS_CLASSES = ("horizontal", "vertical", "block")


def max_model() -> Model:
    """``f(x1, x2, x3) = max(x1, x2)`` on a 1 x 1 x 3 input."""
    return Model(
        [MaxPool2D((1, 2), (1, 2)), Flatten(), Dense([[1.0]], [0.0])],
        input_shape=(1, 1, 3),
    )


def linear_model(weights, bias=None) -> Model:
    """Single dense layer over a feature vector; ``weights`` is classes x features."""
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    b = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=float)
    return Model([Dense(w, b)], input_shape=(w.shape[1],))


def random_linear_model(rng, n_features=12, n_classes=3, *, positive_row=None, bias=True) -> Model:
    """Random single-dense-layer model.

    With ``positive_row`` set, that class's weights are drawn nonnegative.
    """
    w = rng.normal(size=(n_classes, n_features))
    if positive_row is not None:
        w[positive_row] = np.abs(w[positive_row])
    b = rng.normal(scale=0.1, size=n_classes) if bias else np.zeros(n_classes)
    return linear_model(w, b)


def random_mlp(rng, n_in=6, hidden=(8,), n_out=3, *, softmax=False) -> Model:
    layers, width = [], n_in
    for h in hidden:
        layers += [Dense(rng.normal(size=(h, width)) / np.sqrt(width), rng.normal(scale=0.1, size=h)), ReLU()]
        width = h
    layers.append(Dense(rng.normal(size=(n_out, width)) / np.sqrt(width), rng.normal(scale=0.1, size=n_out)))
    if softmax:
        layers.append(Softmax())
    return Model(layers, (n_in,))


def random_cnn(rng, input_shape=(1, 8, 8), channels=4, n_out=3, *, softmax=True, pool=True) -> Model:
    c, h, w = input_shape
    conv = Conv2D(rng.normal(size=(channels, c, 3, 3)) / 3.0, rng.normal(scale=0.1, size=channels), padding=1)
    layers = [conv, ReLU()]
    if pool:
        layers.append(MaxPool2D(2))
        h, w = h // 2, w // 2
    layers.append(Flatten())
    n_flat = channels * h * w
    layers.append(Dense(rng.normal(size=(n_out, n_flat)) / np.sqrt(n_flat), rng.normal(scale=0.1, size=n_out)))
    if softmax:
        layers.append(Softmax())
    return Model(layers, input_shape)


def desk_cnn_untrained(rng, size=16, n_classes=3) -> Model:
    """conv(8) - relu - pool - conv(16) - relu - pool - dense - softmax on 1 x size x size."""

    def he(shape, fan_in):
        return rng.normal(size=shape) * np.sqrt(2.0 / fan_in)

    q = size // 4
    return Model(
        [
            Conv2D(he((8, 1, 3, 3), 9), np.zeros(8), padding=1),
            ReLU(),
            MaxPool2D(2),
            Conv2D(he((16, 8, 3, 3), 72), np.zeros(16), padding=1),
            ReLU(),
            MaxPool2D(2),
            Flatten(),
            Dense(he((n_classes, 16 * q * q), 16 * q * q), np.zeros(n_classes)),
            Softmax(),
        ],
        input_shape=(1, size, size),
    )


def make_corpus(n: int, seed: int = 0, size: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Images (n x 1 x size x size, values in [0, 1]) and labels in {0, 1, 2}.

    Class 0 draws a horizontal bar, class 1 a vertical bar, class 2 a square
    block, each at a random position and brightness over faint noise.
    """
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 0.15, size=(n, 1, size, size))
    labels = rng.integers(0, len(CORPUS_CLASSES), size=n)
    for img, label in zip(images, labels):
        level = rng.uniform(0.6, 1.0)
        length = rng.integers(size // 2, size - 2)
        if label == 0:
            r = rng.integers(1, size - 3)
            c = rng.integers(0, size - length)
            img[0, r : r + 2, c : c + length] = level
        elif label == 1:
            c = rng.integers(1, size - 3)
            r = rng.integers(0, size - length)
            img[0, r : r + length, c : c + 2] = level
        else:
            side = rng.integers(4, 7)
            r, c = rng.integers(0, size - side, size=2)
            img[0, r : r + side, c : c + side] = level
    return images, labels


def _param_grads(model: Model, trace, g_out: np.ndarray) -> list[dict[str, np.ndarray]]:
    grads: list[dict[str, np.ndarray]] = [{} for _ in model.layers]
    g = g_out
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a_in = trace.inputs[i]
        if layer.kind == "dense":
            grads[i] = {"weight": g.T @ a_in, "bias": g.sum(axis=0)}
        elif layer.kind == "conv2d":
            grads[i] = {
                "weight": T.conv2d_weight_grad(g, a_in, layer.weight.shape, layer.stride, layer.padding),
                "bias": g.sum(axis=(0, 2, 3)),
            }
        if i > 0:
            g = layer.backward(g, a_in, trace.outputs[i])
    return grads


def train_classifier(model: Model, images, labels, *, epochs=8, batch=32, lr=0.01, seed=0) -> Model:
    """Fit a softmax classifier with Adam on cross-entropy; returns a new Model."""
    if model.layers[-1].kind != "softmax":
        raise ValueError("train_classifier expects a model ending in softmax")
    rng = np.random.default_rng(seed)
    params = [{k: v.copy() for k, v in layer.params().items()} for layer in model.layers]
    m1 = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    m2 = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    b1, b2, step = 0.9, 0.999, 0
    current = model
    n = len(images)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            trace = forward(current, images[idx])
            p = trace.outputs[-1]
            g_logits = p.copy()
            g_logits[np.arange(len(idx)), labels[idx]] -= 1.0
            g_logits /= len(idx)
            grads = _param_grads(current, trace, g_logits)
            step += 1
            for pi, gi, a, b in zip(params, grads[:-1] + [{}], m1, m2):
                for k in gi:
                    a[k] = b1 * a[k] + (1 - b1) * gi[k]
                    b[k] = b2 * b[k] + (1 - b2) * gi[k] ** 2
                    mhat = a[k] / (1 - b1**step)
                    vhat = b[k] / (1 - b2**step)
                    pi[k] -= lr * mhat / (np.sqrt(vhat) + 1e-8)
            current = _rebuild(model, params)
    return current


def _rebuild(template: Model, params) -> Model:
    layers = []
    for layer, p in zip(template.layers, params):
        if layer.kind == "dense":
            layers.append(Dense(p["weight"], p["bias"]))
        elif layer.kind == "conv2d":
            layers.append(Conv2D(p["weight"], p["bias"], stride=layer.stride, padding=layer.padding))
        else:
            layers.append(layer)
    return Model(layers, template.input_shape)


def accuracy(model: Model, images, labels) -> float:
    return float(np.mean(forward(model, images).predicted == labels))


def desk_cnn(seed: int = 0, n_train: int = 600, epochs: int = 8) -> Model:
    """Train the desk-scale CNN on a synthetic corpus (deterministic for a seed)."""
    rng = np.random.default_rng(seed)
    images, labels = make_corpus(n_train, seed=seed + 1000)
    return train_classifier(desk_cnn_untrained(rng), images, labels, epochs=epochs, seed=seed)
