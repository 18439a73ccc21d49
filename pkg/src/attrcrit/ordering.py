"""Pixel orderings, perturbation curves and the ordering criteria.

``ablation_curve`` removes pixels (sets every channel to the baseline value)
in attribution order starting from the real input; ``construction_curve``
starts from the all-baseline image and restores pixels in the same order.
N-Ord averages the ablation curve clipped below the baseline score, S-Ord
averages the construction curve clipped above its final value and the
original score, measured against the original score.  The module also holds the boolean-statement
versions of necessity and sufficiency orderings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .attributions import AttributionMap
from .errors import EmptyPositiveSetError, RangeError, ShapeError, UndefinedError
from .network import Model, predict, spatial_shape

ABLATION = "ablation"
CONSTRUCTION = "construction"
FORWARD = "forward"
REVERSED = "reversed"

_BATCH = 256


@dataclass(frozen=True)
class OrderedPixels:
    """Pixels sorted by descending score, ties by ascending flat index."""

    order: np.ndarray
    scores: np.ndarray
    cumulative_share: np.ndarray
    total_positive: float

    @property
    def M(self) -> int:
        return len(self.cumulative_share) - 1

    @property
    def positive_prefix(self) -> np.ndarray:
        return self.order[: self.M]

    def sequence(self, orientation: str = FORWARD) -> np.ndarray:
        if orientation == FORWARD:
            return self.positive_prefix
        if orientation == REVERSED:
            return self.positive_prefix[::-1]
        raise ValueError(f"unknown orientation {orientation!r}")

    def shares(self, orientation: str = FORWARD) -> np.ndarray:
        """Cumulative positive-score share after each prefix of the chosen orientation."""
        if orientation == FORWARD:
            return self.cumulative_share
        pos = self.scores[: self.M][::-1]
        out = np.minimum(np.concatenate([[0.0], np.cumsum(pos) / self.total_positive]), 1.0)
        out[-1] = 1.0
        return out


def order_pixels(attribution) -> OrderedPixels:
    """Build the descending ordering and its strictly positive prefix.

    Accepts an :class:`AttributionMap` or a bare score array.
    """
    scores = attribution.scores if isinstance(attribution, AttributionMap) else np.asarray(attribution, float)
    flat = np.ravel(scores)
    if not np.all(np.isfinite(flat)):
        raise ValueError("attribution scores must be finite")
    order = np.argsort(-flat, kind="stable")
    sorted_scores = flat[order]
    m = int(np.count_nonzero(sorted_scores > 0))
    if m == 0:
        raise EmptyPositiveSetError("no pixel has a strictly positive attribution score")
    pos = sorted_scores[:m]
    total = float(pos.sum())
    share = np.minimum(np.concatenate([[0.0], np.cumsum(pos) / total]), 1.0)
    share[-1] = 1.0
    return OrderedPixels(order, sorted_scores, share, total)


@dataclass
class PerturbationCurve:
    m: np.ndarray
    k: np.ndarray
    R: np.ndarray
    direction: str
    baseline_value: float
    y0: float
    yb: float
    orientation: str = FORWARD
    length: int = 0

    @property
    def points(self) -> list[tuple[int, float, float]]:
        return [(int(a), float(b), float(c)) for a, b, c in zip(self.m, self.k, self.R)]

    def dense(self) -> np.ndarray:
        """Curve values at every integer prefix length 0..length (linear between samples)."""
        grid = np.arange(self.length + 1)
        if len(self.m) == len(grid):
            return self.R
        return np.interp(grid, self.m, self.R)


def _prefix_lengths(total: int, chunk: int) -> np.ndarray:
    if chunk < 1:
        raise RangeError("chunk must be >= 1")
    lengths = list(range(0, total + 1, chunk))
    if lengths[-1] != total:
        lengths.append(total)
    return np.asarray(lengths)


def default_chunk(total: int, max_points: int = 257) -> int:
    """Smallest stride that keeps a curve over ``total`` pixels within ``max_points``."""
    return max(1, math.ceil(total / (max_points - 1)))


def class_scores(model: Model, batch: np.ndarray, class_index: int) -> np.ndarray:
    out = [predict(model, batch[i : i + _BATCH])[:, class_index] for i in range(0, len(batch), _BATCH)]
    return np.concatenate(out)


def _pixel_view(x: np.ndarray, input_shape) -> np.ndarray:
    if len(input_shape) == 3:
        return x.reshape(input_shape[0], -1)
    return x.reshape(1, -1)


def perturbed_inputs(model: Model, x, sequence, lengths, b: float, direction: str) -> np.ndarray:
    """Stack of inputs where the first ``m`` pixels of ``sequence`` are ablated / restored."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeError(f"input {x.shape} does not match model {model.input_shape}")
    xv = _pixel_view(x, model.input_shape)
    n_pix = xv.shape[1]
    rank = np.full(n_pix, n_pix + 1)
    rank[np.asarray(sequence, dtype=int)] = np.arange(len(sequence))
    mask = rank[None, :] < np.asarray(lengths)[:, None]
    if direction == ABLATION:
        batch = np.where(mask[:, None, :], b, xv[None])
    elif direction == CONSTRUCTION:
        batch = np.where(mask[:, None, :], xv[None], b)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return batch.reshape((len(lengths),) + model.input_shape)


def _curve(model, x, ordered, b, chunk, class_index, direction, orientation, full=False, steps=None):
    x = np.asarray(x, dtype=np.float64)
    if full:
        seq = ordered.order
        total = len(seq) if steps is None else steps
        if total > len(seq):
            raise RangeError(f"{total} steps exceed the {len(seq)} pixels of the input")
        pos = np.maximum(ordered.scores, 0.0)
        share = np.minimum(np.concatenate([[0.0], np.cumsum(pos) / ordered.total_positive]), 1.0)
    else:
        seq = ordered.sequence(orientation)
        total = len(seq)
        share = ordered.shares(orientation)
    lengths = _prefix_lengths(total, chunk)
    batch = perturbed_inputs(model, x, seq, lengths, b, direction)
    R = class_scores(model, batch, class_index)
    y0 = float(class_scores(model, x[None], class_index)[0])
    yb = float(class_scores(model, np.full((1,) + model.input_shape, float(b)), class_index)[0])
    return PerturbationCurve(lengths, share[lengths], R, direction, float(b), y0, yb, orientation, total)


def ablation_curve(
    model: Model,
    x,
    ordered: OrderedPixels,
    b: float = 0.0,
    chunk: int = 1,
    *,
    class_index: int,
    orientation: str = FORWARD,
) -> PerturbationCurve:
    """Model score for ``class_index`` while the positive prefix is ablated to ``b``."""
    return _curve(model, x, ordered, b, chunk, class_index, ABLATION, orientation)


def construction_curve(
    model: Model,
    x,
    ordered: OrderedPixels,
    b: float = 0.0,
    chunk: int = 1,
    *,
    class_index: int,
    orientation: str = FORWARD,
) -> PerturbationCurve:
    """Model score while positive-scored pixels are restored onto the baseline image."""
    return _curve(model, x, ordered, b, chunk, class_index, CONSTRUCTION, orientation)


def full_ablation_curve(
    model: Model, x, ordered: OrderedPixels, b: float = 0.0, chunk: int = 1, *, class_index: int, steps=None
) -> PerturbationCurve:
    """Ablation over the whole ordering (not only positive pixels), for AOPC."""
    return _curve(model, x, ordered, b, chunk, class_index, ABLATION, FORWARD, full=True, steps=steps)


def n_ord(curve: PerturbationCurve) -> float:
    """Mean of ``max(R_m - y_b, 0)`` over m = 0..M.  Lower is better."""
    if curve.direction != ABLATION:
        raise ValueError("n_ord needs an ablation curve")
    if curve.length == 0:
        raise EmptyPositiveSetError("curve has no positive pixels")
    return float(np.mean(np.maximum(curve.dense() - curve.yb, 0.0)))


def s_ord(curve: PerturbationCurve) -> float:
    """Mean of ``min(R'_m, R'_M, y_0) - y_0`` over m = 0..M.  Higher is better.

    Restoring only the positive pixels can overshoot the original score, so
    the cap at ``y_0`` keeps every term at or below zero.
    """
    if curve.direction != CONSTRUCTION:
        raise ValueError("s_ord needs a construction curve")
    if curve.length == 0:
        raise EmptyPositiveSetError("curve has no positive pixels")
    r = curve.dense()
    return float(np.mean(np.minimum(np.minimum(r, r[-1]), curve.y0) - curve.y0))


def aopc(curve: PerturbationCurve, steps: int) -> float:
    """Mean output drop ``y_0 - R_m`` over the first ``steps`` perturbations (m = 0..steps)."""
    if curve.direction != ABLATION:
        raise ValueError("aopc needs an ablation curve")
    if steps < 0 or steps > curve.length:
        raise RangeError(f"steps={steps} outside 0..{curve.length}")
    r = curve.dense()[: steps + 1]
    return float(np.mean(curve.y0 - r))


# -- logical orderings -------------------------------------------------------


@dataclass(frozen=True)
class BoolStatement:
    """A predicate over named atomic conditions; called with the set of true atoms."""

    atoms: tuple[str, ...]
    predicate: Callable[[frozenset], bool]
    text: str = ""

    def __call__(self, true_atoms: Iterable[str]) -> bool:
        return bool(self.predicate(frozenset(true_atoms)))

    def _merge(self, other: "BoolStatement") -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.atoms + other.atoms))

    def __and__(self, other: "BoolStatement") -> "BoolStatement":
        f, g = self.predicate, other.predicate
        return BoolStatement(self._merge(other), lambda s: f(s) and g(s), f"({self.text} & {other.text})")

    def __or__(self, other: "BoolStatement") -> "BoolStatement":
        f, g = self.predicate, other.predicate
        return BoolStatement(self._merge(other), lambda s: f(s) or g(s), f"({self.text} | {other.text})")

    def __repr__(self):
        return f"BoolStatement({self.text or self.atoms})"


def atom(name: str) -> BoolStatement:
    return BoolStatement((name,), lambda s: name in s, name)


def _check_ordering(statement: BoolStatement, ordering: Sequence[str]):
    if sorted(ordering) != sorted(statement.atoms) or len(set(ordering)) != len(ordering):
        raise ValueError(f"ordering {list(ordering)} is not a permutation of {statement.atoms}")


def logical_necessity_index(statement: BoolStatement, ordering: Sequence[str]) -> int:
    """Fewest leading conditions whose removal falsifies the statement."""
    _check_ordering(statement, ordering)
    if not statement(ordering):
        raise UndefinedError("statement is false even with every condition true")
    for m in range(len(ordering) + 1):
        if not statement(ordering[m:]):
            return m
    raise UndefinedError("statement cannot be falsified by removing conditions")


def logical_sufficiency_index(statement: BoolStatement, ordering: Sequence[str]) -> int:
    """Fewest leading conditions that satisfy the statement on their own."""
    _check_ordering(statement, ordering)
    for m in range(len(ordering) + 1):
        if statement(ordering[:m]):
            return m
    raise UndefinedError("no prefix of the ordering satisfies the statement")


def better_necessity_ordering(statement: BoolStatement, a: Sequence[str], b: Sequence[str]) -> bool:
    """True when ordering ``a`` falsifies the statement with no longer a prefix than ``b``."""
    return logical_necessity_index(statement, a) <= logical_necessity_index(statement, b)


def better_sufficiency_ordering(statement: BoolStatement, a: Sequence[str], b: Sequence[str]) -> bool:
    return logical_sufficiency_index(statement, a) <= logical_sufficiency_index(statement, b)


def all_orderings(statement: BoolStatement):
    return itertools.permutations(statement.atoms)
