"""Layered classifiers with activation recording and pluggable backward rules.

All layer computations run on a leading batch axis.  :func:`forward` accepts
either one input of ``model.input_shape`` or a stack of them, and the
returned :class:`ForwardTrace` remembers which, so :func:`backward_input`
can hand back an array of the same layout.

The backward pass propagates a signal from the explained class down to the
input.  What the signal *means* depends on the rule set:

* exact gradients (the default) give ``d y_c / d x``;
* ``guided-relu`` masks negative upstream gradients at ReLUs;
* ``lrp-alpha-beta`` redistributes relevance, starting from ``y_c``;
* ``deeplift-rescale`` propagates multipliers relative to a reference trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ModelFormatError, RuleError, ShapeError, VersionError

MANIFEST_FORMAT = "attrcrit-model"
MANIFEST_VERSION = 1

EXACT = "exact-gradient"
GUIDED = "guided-relu"
LRP = "lrp-alpha-beta"
DEEPLIFT = "deeplift-rescale"


def _f32(arr) -> np.ndarray:
    # parameters live in float64 but are kept float32-representable so that
    # saving and reloading is lossless
    return np.asarray(arr, dtype=np.float64).astype(np.float32).astype(np.float64)


class Layer:
    kind: ClassVar[str]

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def hyper(self) -> dict:
        return {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray, a_in: np.ndarray, a_out: np.ndarray) -> np.ndarray:
        """Exact vector-Jacobian product for a batch."""
        raise NotImplementedError

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params().items()}
        return f"{type(self).__name__}({shapes or ''}{self.hyper() or ''})"


@dataclass(repr=False, eq=False)
class Dense(Layer):
    weight: np.ndarray
    bias: np.ndarray
    kind: ClassVar[str] = "dense"

    def __post_init__(self):
        self.weight = _f32(self.weight)
        self.bias = _f32(self.bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"dense weight {self.weight.shape} / bias {self.bias.shape}")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, in_shape):
        if in_shape != (self.weight.shape[1],):
            raise ShapeError(f"dense expects ({self.weight.shape[1]},), got {in_shape}")
        return (self.weight.shape[0],)

    def forward(self, a):
        return a @ self.weight.T + self.bias

    def backward(self, g, a_in, a_out):
        return g @ self.weight


@dataclass(repr=False, eq=False)
class Conv2D(Layer):
    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    kind: ClassVar[str] = "conv2d"

    def __post_init__(self):
        self.weight = _f32(self.weight)
        self.bias = _f32(self.bias)
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"conv weight {self.weight.shape} / bias {self.bias.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("conv stride must be >= 1 and padding >= 0")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def hyper(self):
        return {"stride": self.stride, "padding": self.padding}

    def output_shape(self, in_shape):
        c_out, c_in, kh, kw = self.weight.shape
        if len(in_shape) != 3 or in_shape[0] != c_in:
            raise ShapeError(f"conv expects {c_in} x H x W, got {in_shape}")
        _, h, w = in_shape
        if kh > h + 2 * self.padding or kw > w + 2 * self.padding:
            raise ShapeError("conv kernel larger than padded input")
        return (
            c_out,
            T.conv_output_size(h, kh, self.stride, self.padding),
            T.conv_output_size(w, kw, self.stride, self.padding),
        )

    def forward(self, a):
        return T.conv2d(a, self.weight, self.stride, self.padding, self.bias)

    def backward(self, g, a_in, a_out):
        return T.conv2d_input_grad(g, self.weight, a_in.shape[1:], self.stride, self.padding)

    def linear(self, a, weight):
        return T.conv2d(a, weight, self.stride, self.padding)

    def linear_adjoint(self, g, weight, in_shape):
        return T.conv2d_input_grad(g, weight, in_shape, self.stride, self.padding)


@dataclass(repr=False, eq=False)
class ReLU(Layer):
    kind: ClassVar[str] = "relu"

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, a):
        return np.maximum(a, 0.0)

    def backward(self, g, a_in, a_out):
        return g * (a_in > 0)


@dataclass(repr=False, eq=False)
class MaxPool2D(Layer):
    window: tuple[int, int]
    stride: tuple[int, int] | None = None
    kind: ClassVar[str] = "maxpool2d"

    def __post_init__(self):
        self.window = T._pair(self.window)
        self.stride = T._pair(self.stride if self.stride is not None else self.window)

    def hyper(self):
        return {"window": list(self.window), "stride": list(self.stride)}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects C x H x W, got {in_shape}")
        c, h, w = in_shape
        (kh, kw), (sh, sw) = self.window, self.stride
        if kh > h or kw > w:
            raise ShapeError("pool window exceeds input")
        return (c, (h - kh) // sh + 1, (w - kw) // sw + 1)

    def forward(self, a):
        return T.maxpool2d(a, self.window, self.stride)[0]

    def indices(self, a):
        return T.maxpool2d(a, self.window, self.stride)[1]

    def backward(self, g, a_in, a_out):
        return T.maxpool2d_scatter(g, self.indices(a_in), a_in.shape[1:])


@dataclass(repr=False, eq=False)
class Flatten(Layer):
    kind: ClassVar[str] = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, a):
        return a.reshape(a.shape[0], -1)

    def backward(self, g, a_in, a_out):
        return g.reshape(a_in.shape)


@dataclass(repr=False, eq=False)
class Softmax(Layer):
    kind: ClassVar[str] = "softmax"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"softmax expects a vector, got {in_shape}")
        return in_shape

    def forward(self, a):
        e = np.exp(a - a.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def backward(self, g, a_in, a_out):
        return a_out * (g - np.sum(g * a_out, axis=1, keepdims=True))


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2D, ReLU, MaxPool2D, Flatten, Softmax)}


@dataclass(eq=False)
class Model:
    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if not self.layers:
            raise ModelFormatError("model has no layers")
        shapes = [self.input_shape]
        try:
            for layer in self.layers:
                shapes.append(layer.output_shape(shapes[-1]))
        except ShapeError as exc:
            raise ModelFormatError(f"incompatible layer shapes: {exc}") from exc
        last = self.layers[-1]
        if last.kind not in ("dense", "softmax") or len(shapes[-1]) != 1:
            raise ModelFormatError("last layer must be dense or softmax producing a score vector")
        if any(layer.kind == "softmax" for layer in self.layers[:-1]):
            raise ModelFormatError("softmax is only supported as the final layer")
        self.shapes = tuple(shapes)

    @property
    def class_count(self) -> int:
        return self.shapes[-1][0]

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "conv2d"]

    def without_softmax(self) -> "Model":
        """The same network with a trailing softmax removed (logit scores)."""
        if self.layers[-1].kind == "softmax":
            return Model(self.layers[:-1], self.input_shape)
        return self

    def n_params(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params().values())


@dataclass(eq=False)
class ForwardTrace:
    """Per-layer inputs and outputs of one forward evaluation.

    Arrays always carry a leading batch axis; ``batched`` records whether the
    caller passed a stack of inputs or a single one.
    """

    model: Model
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    batched: bool

    @property
    def y(self) -> np.ndarray:
        return self.outputs[-1] if self.batched else self.outputs[-1][0]

    @property
    def predicted(self):
        am = np.argmax(self.outputs[-1], axis=1)
        return am if self.batched else int(am[0])


def forward(model: Model, x) -> ForwardTrace:
    """Evaluate ``model`` on one input or a batch, recording every activation."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        a, batched = x[None], False
    elif x.ndim == len(model.input_shape) + 1 and x.shape[1:] == model.input_shape:
        a, batched = x, True
    else:
        raise ShapeError(f"input shape {x.shape} does not match model {model.input_shape}")
    T.as_tensor(a)
    inputs, outputs = [], []
    for layer in model.layers:
        inputs.append(a)
        a = layer.forward(a)
        outputs.append(a)
    return ForwardTrace(model, inputs, outputs, batched)


def predict(model: Model, xs: np.ndarray) -> np.ndarray:
    """Score vectors for a batch without keeping the trace."""
    a = np.asarray(xs, dtype=np.float64)
    for layer in model.layers:
        a = layer.forward(a)
    return a


@dataclass(frozen=True)
class BackwardRuleSet:
    """Per-layer-kind override of the backward rule; unlisted kinds use exact gradients."""

    rules: Mapping[str, str] = field(default_factory=dict)
    alpha: float = 2.0
    beta: float = 1.0
    epsilon: float = 1e-9
    reference: ForwardTrace | None = None

    @classmethod
    def exact(cls):
        return cls()

    @classmethod
    def guided(cls):
        return cls({"relu": GUIDED})

    @classmethod
    def lrp(cls, alpha=2.0, beta=1.0, epsilon=1e-9):
        return cls({kind: LRP for kind in LAYER_KINDS}, alpha=alpha, beta=beta, epsilon=epsilon)

    @classmethod
    def deeplift(cls, reference: ForwardTrace):
        return cls({"relu": DEEPLIFT, "maxpool2d": DEEPLIFT, "softmax": DEEPLIFT}, reference=reference)

    def rule_for(self, kind: str) -> str:
        return self.rules.get(kind, EXACT)


_APPLICABLE = {
    EXACT: set(LAYER_KINDS),
    GUIDED: {"relu"},
    LRP: set(LAYER_KINDS),
    DEEPLIFT: {"relu", "maxpool2d", "softmax", "dense", "conv2d", "flatten"},
}


def _check_rules(model: Model, rules: BackwardRuleSet) -> str:
    used = set()
    for layer in model.layers:
        rule = rules.rule_for(layer.kind)
        if rule not in _APPLICABLE:
            raise RuleError(f"unknown rule {rule!r}")
        if layer.kind not in _APPLICABLE[rule]:
            raise RuleError(f"rule {rule!r} does not apply to {layer.kind} layers")
        used.add(rule)
    if LRP in used:
        if used != {LRP}:
            raise RuleError("lrp-alpha-beta cannot be mixed with gradient rules")
        return "relevance"
    if DEEPLIFT in used:
        if rules.reference is None:
            raise RuleError("deeplift-rescale needs a reference trace")
        if rules.reference.model is not model:
            raise RuleError("reference trace was produced by a different model")
        return "multiplier"
    return "gradient"


def backward_input(
    model: Model,
    trace: ForwardTrace,
    class_index: int,
    rules: BackwardRuleSet | None = None,
    *,
    return_all: bool = False,
):
    """Propagate from class ``class_index`` back to the input.

    With ``return_all`` the signal at the input of every layer is returned as
    a list (index ``len(layers)`` holds the seed at the output), batched.
    """
    if trace.model is not model:
        raise RuleError("trace was produced by a different model")
    if not 0 <= class_index < model.class_count:
        raise IndexError(f"class {class_index} out of range for {model.class_count} classes")
    rules = rules or BackwardRuleSet()
    mode = _check_rules(model, rules)

    n = trace.outputs[-1].shape[0]
    layers = list(model.layers)
    signals: list[np.ndarray | None] = [None] * (len(layers) + 1)
    seed = np.zeros((n, model.class_count))
    if mode == "relevance":
        if layers[-1].kind == "softmax":
            # relevance enters at the logits
            seed[:, class_index] = trace.outputs[-1][:, class_index]
            signals[-1] = seed
            signals[-2] = seed.copy()
            layers = layers[:-1]
        else:
            seed[:, class_index] = trace.outputs[-1][:, class_index]
            signals[-1] = seed
    else:
        seed[:, class_index] = 1.0
        signals[-1] = seed

    g = signals[len(layers)]
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        a_in, a_out = trace.inputs[i], trace.outputs[i]
        rule = rules.rule_for(layer.kind)
        if rule == GUIDED:
            g = g * (g > 0) * (a_in > 0)
        elif rule == LRP:
            g = _lrp_step(layer, g, a_in, a_out, rules)
        elif rule == DEEPLIFT:
            ref = rules.reference
            g = _deeplift_step(layer, g, a_in, a_out, ref.inputs[i], ref.outputs[i], class_index)
        else:
            g = layer.backward(g, a_in, a_out)
        signals[i] = g

    if return_all:
        return signals
    return g if trace.batched else g[0]


def _lrp_step(layer: Layer, r: np.ndarray, a_in, a_out, rules: BackwardRuleSet) -> np.ndarray:
    if layer.kind in ("relu",):
        return r
    if layer.kind == "flatten":
        return r.reshape(a_in.shape)
    if layer.kind == "maxpool2d":
        return T.maxpool2d_scatter(r, layer.indices(a_in), a_in.shape[1:])
    if layer.kind == "softmax":
        raise RuleError("softmax is only handled as the output layer under LRP")

    eps = rules.epsilon
    w_pos, w_neg = np.maximum(layer.weight, 0), np.minimum(layer.weight, 0)
    a_pos, a_neg = np.maximum(a_in, 0), np.minimum(a_in, 0)
    if layer.kind == "dense":
        lin = lambda a, w: a @ w.T  # noqa: E731
        adj = lambda s, w: s @ w  # noqa: E731
    else:
        lin = layer.linear
        adj = lambda s, w: layer.linear_adjoint(s, w, a_in.shape[1:])  # noqa: E731

    z_pos = lin(a_pos, w_pos) + lin(a_neg, w_neg)
    z_neg = lin(a_pos, w_neg) + lin(a_neg, w_pos)
    has_pos = z_pos > eps
    has_neg = z_neg < -eps
    both = has_pos & has_neg
    # when one branch is empty the other carries all relevance, so each
    # output unit's relevance is conserved
    ca = np.where(both, rules.alpha, np.where(has_pos, 1.0, 0.0))
    cb = np.where(both, rules.beta, np.where(has_neg, -1.0, 0.0))
    s_pos = r * ca / (z_pos + eps)
    s_neg = r * cb / (z_neg - eps)
    r_pos = a_pos * adj(s_pos, w_pos) + a_neg * adj(s_pos, w_neg)
    r_neg = a_pos * adj(s_neg, w_neg) + a_neg * adj(s_neg, w_pos)
    return r_pos - r_neg


_DL_EPS = 1e-12


def _deeplift_step(layer, m, a_in, a_out, ref_in, ref_out, class_index) -> np.ndarray:
    if layer.kind == "relu":
        d_in = a_in - ref_in
        d_out = a_out - ref_out
        safe = np.abs(d_in) > _DL_EPS
        slope = np.where(safe, d_out / np.where(safe, d_in, 1.0), (a_in > 0).astype(float))
        return m * slope
    if layer.kind == "maxpool2d":
        return _deeplift_maxpool(layer, m, a_in, a_out, ref_in, ref_out)
    if layer.kind == "softmax":
        return _deeplift_softmax(m, a_in, ref_in, class_index)
    return layer.backward(m, a_in, a_out)


def _gather(plane: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n, c, h, w = plane.shape
    flat = plane.reshape(n, c, h * w)
    return np.take_along_axis(flat, idx.reshape(n, c, -1), axis=2).reshape(idx.shape)


def _deeplift_maxpool(layer, m, a_in, a_out, ref_in, ref_out):
    # each window's contribution m * d_out is routed to one input position:
    # the forward argmax, or the largest |d_in| when the argmax barely moved
    d_in = a_in - ref_in
    d_out = a_out - ref_out
    idx_max = layer.indices(a_in)
    idx_abs = layer.indices(np.abs(d_in))
    d_sel = _gather(d_in, idx_max)
    idx = np.where(np.abs(d_sel) > _DL_EPS, idx_max, idx_abs)
    d_sel = _gather(d_in, idx)
    safe = np.abs(d_sel) > _DL_EPS
    vals = np.where(safe, m * d_out / np.where(safe, d_sel, 1.0), m)
    return T.maxpool2d_scatter(vals, idx, a_in.shape[1:])


def _deeplift_softmax(m, z, z_ref, c):
    # p_c = 1 / (1 + sum_j exp(z_j - z_c)); every factor is a scalar map, so
    # rescale multipliers chain exactly and preserve summation-to-delta
    if not np.all(np.count_nonzero(m, axis=1) <= 1) or not np.allclose(m[:, c], 1.0):
        raise RuleError("deeplift softmax rule needs a one-hot seed at the explained class")
    d = z - z[:, [c]]
    d0 = z_ref - z_ref[:, [c]]
    e, e0 = np.exp(d), np.exp(d0)
    e[:, c] = 0.0
    e0[:, c] = 0.0
    u, u0 = e.sum(axis=1, keepdims=True), e0.sum(axis=1, keepdims=True)
    p, p0 = 1.0 / (1.0 + u), 1.0 / (1.0 + u0)
    du = u - u0
    safe_u = np.abs(du) > _DL_EPS
    m_pu = np.where(safe_u, (p - p0) / np.where(safe_u, du, 1.0), -(p**2))
    dd = d - d0
    safe_d = np.abs(dd) > _DL_EPS
    m_e = np.where(safe_d, (e - e0) / np.where(safe_d, dd, 1.0), e)
    m_e[:, c] = 0.0
    out = m_pu * m_e
    out[:, c] = -m_pu[:, 0] * m_e.sum(axis=1)
    return out


# -- manifest I/O ----------------------------------------------------------


def save_model(model: Model, manifest_path) -> None:
    """Write a JSON manifest plus a little-endian float32 weight blob beside it."""
    manifest_path = Path(manifest_path)
    blob_name = manifest_path.with_suffix(".bin").name
    chunks, layers, offset = [], [], 0
    for layer in model.layers:
        entry = {"kind": layer.kind, **layer.hyper()}
        for name, arr in layer.params().items():
            raw = arr.astype("<f4").tobytes(order="C")
            entry[name] = {"offset": offset, "shape": list(arr.shape)}
            chunks.append(raw)
            offset += len(raw)
        layers.append(entry)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "weights": blob_name,
        "layers": layers,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    (manifest_path.parent / blob_name).write_bytes(b"".join(chunks))


def load_model(manifest_path) -> Model:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{manifest_path}: not valid JSON ({exc})") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ModelFormatError(f"{manifest_path}: not an {MANIFEST_FORMAT} manifest")
    if "version" not in manifest:
        raise ModelFormatError(f"{manifest_path}: missing version field")
    if manifest["version"] != MANIFEST_VERSION:
        raise VersionError(f"unsupported manifest version {manifest['version']!r}")

    blob = (manifest_path.parent / manifest["weights"]).read_bytes()
    if len(blob) % 4:
        raise ModelFormatError("weight blob length is not a multiple of 4 bytes")
    values = np.frombuffer(blob, dtype="<f4")
    used = 0

    def param(spec):
        nonlocal used
        shape = tuple(int(s) for s in spec["shape"])
        count = int(np.prod(shape))
        start = int(spec["offset"])
        if start % 4 or start < 0 or start // 4 + count > values.size:
            raise ModelFormatError(f"parameter {shape} at offset {start} exceeds weight blob")
        arr = values[start // 4 : start // 4 + count].astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise ModelFormatError("non-finite weight in blob")
        used += count
        return arr

    layers = []
    try:
        for entry in manifest["layers"]:
            kind = entry["kind"]
            if kind == "dense":
                layers.append(Dense(param(entry["weight"]), param(entry["bias"])))
            elif kind == "conv2d":
                layers.append(
                    Conv2D(
                        param(entry["weight"]),
                        param(entry["bias"]),
                        stride=int(entry.get("stride", 1)),
                        padding=int(entry.get("padding", 0)),
                    )
                )
            elif kind == "maxpool2d":
                layers.append(MaxPool2D(tuple(entry["window"]), tuple(entry.get("stride") or entry["window"])))
            elif kind in LAYER_KINDS:
                layers.append(LAYER_KINDS[kind]())
            else:
                raise ModelFormatError(f"unknown layer kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed layer entry: {exc}") from exc
    except ShapeError as exc:
        raise ModelFormatError(str(exc)) from exc
    if used != values.size:
        raise ModelFormatError(f"manifest describes {used} floats but blob holds {values.size}")
    model = Model(layers, manifest["input_shape"])
    declared = manifest.get("class_count")
    if declared is not None and declared != model.class_count:
        raise ModelFormatError(f"class_count {declared} but network outputs {model.class_count}")
    return model


def spatial_shape(input_shape: Sequence[int]) -> tuple[int, ...]:
    """Per-pixel extent of an input: H x W for images, the feature count for vectors."""
    input_shape = tuple(input_shape)
    return input_shape[1:] if len(input_shape) == 3 else input_shape
