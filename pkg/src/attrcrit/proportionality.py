"""Proportionality-k gaps and their share-integrated totals (TPN / TPS).

A share curve reports the model score against the cumulative share ``k`` of
positive attribution that has been ablated (or restored).  Two such curves,
one taking pixels from the highest score down and one from the lowest up,
are compared at equal ``k``; the total criteria integrate that gap over
``k`` in [0, 1].  Between attainable shares the curves are linear, so the
integral is computed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScoreError, EmptyPositiveSetError, RangeError
from .network import Model
from .ordering import (
    ABLATION,
    CONSTRUCTION,
    FORWARD,
    REVERSED,
    OrderedPixels,
    PerturbationCurve,
    ablation_curve,
    construction_curve,
)

DEFAULT_EPSILON = 1e-6


@dataclass
class ShareCurve:
    k: np.ndarray
    R: np.ndarray
    direction: str
    orientation: str

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if len(self.k) < 2 or self.k[0] != 0.0 or self.k[-1] != 1.0 or np.any(np.diff(self.k) <= 0):
            raise ValueError("share knots must increase strictly from 0 to 1")

    def __call__(self, k):
        return np.interp(k, self.k, self.R)

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.k.tolist(), self.R.tolist()))


def share_curve_from(curve: PerturbationCurve, ordered: OrderedPixels) -> ShareCurve:
    """Keep the knots of a perturbation curve that close a run of equal scores."""
    scores = ordered.scores[: ordered.M]
    if curve.orientation == REVERSED:
        scores = scores[::-1]
    r = curve.dense()
    k = ordered.shares(curve.orientation)
    m = np.arange(len(scores) + 1)
    keep = np.ones(len(m), dtype=bool)
    # an interior prefix is a knot only when the next pixel has a different score
    keep[1:-1] = scores[:-1] != scores[1:]
    # scores far below the total can leave k unchanged in floating point;
    # such prefixes collapse onto the last one sharing their k
    keep[1:-1] &= k[1:-1] < k[2:]
    return ShareCurve(k[keep], r[keep], curve.direction, curve.orientation)


def share_curve(
    model: Model,
    x,
    ordered: OrderedPixels,
    direction: str = ABLATION,
    orientation: str = FORWARD,
    *,
    class_index: int,
    b: float = 0.0,
    chunk: int = 1,
) -> ShareCurve:
    if ordered.M < 1:
        raise EmptyPositiveSetError("share curve needs at least one positive pixel")
    build = ablation_curve if direction == ABLATION else construction_curve
    curve = build(model, x, ordered, b, chunk, class_index=class_index, orientation=orientation)
    return share_curve_from(curve, ordered)


def _check_k(k):
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 0.0) or np.any(k > 1.0):
        raise RangeError("k must lie in [0, 1]")
    return k


def prop_k_necessity(fwd: ShareCurve, rev: ShareCurve, k):
    """|R_fwd(k) - R_rev(k)| for ablation share curves.  Smaller is better."""
    k = _check_k(k)
    return np.abs(fwd(k) - rev(k))


def prop_k_sufficiency(fwd: ShareCurve, rev: ShareCurve, k):
    """|R'_fwd(k) - R'_rev(k)| for construction share curves.  Smaller is better."""
    k = _check_k(k)
    return np.abs(fwd(k) - rev(k))


def area_between(f: ShareCurve, g: ShareCurve) -> float:
    """Exact integral of |f - g| over [0, 1] for piecewise-linear curves."""
    u = np.union1d(f.k, g.k)
    d = f(u) - g(u)
    du = np.diff(u)
    a, b = d[:-1], d[1:]
    same = a * b >= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        crossing = (a * a + b * b) / (2.0 * (np.abs(a) + np.abs(b)))
    seg = np.where(same, 0.5 * (np.abs(a) + np.abs(b)), crossing) * du
    return float(seg.sum())


def riemann_area(f: ShareCurve, g: ShareCurve, k_samples: int) -> float:
    """Midpoint-rule estimate of the same integral (cross-check mode)."""
    k = (np.arange(k_samples) + 0.5) / k_samples
    return float(np.mean(np.abs(f(k) - g(k))))


def necessity_penalty(yb: float, r_m: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """r = min((y_b + eps) / (R_M + eps), 1) with scores clipped below at 0."""
    return min((max(yb, 0.0) + epsilon) / (max(r_m, 0.0) + epsilon), 1.0)


def sufficiency_penalty(r_m: float, y0: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """r' = min((R'_M + eps) / (y_0 + eps), 1) with scores clipped below at 0."""
    return min((max(r_m, 0.0) + epsilon) / (max(y0, 0.0) + epsilon), 1.0)


def _check_y0(y0, epsilon):
    if y0 <= epsilon:
        raise DegenerateScoreError(f"class score y0={y0:g} does not exceed epsilon={epsilon:g}")


def tpn(fwd: ShareCurve, rev: ShareCurve, y0: float, yb: float, epsilon: float = DEFAULT_EPSILON, *, k_samples=None):
    """Total proportionality for necessity: gap area over ``r * y0``.  0 is optimal."""
    _check_y0(y0, epsilon)
    area = area_between(fwd, rev) if k_samples is None else riemann_area(fwd, rev, k_samples)
    r = necessity_penalty(yb, float(fwd.R[-1]), epsilon)
    return area / (r * y0)


def tps(fwd: ShareCurve, rev: ShareCurve, y0: float, epsilon: float = DEFAULT_EPSILON, *, k_samples=None):
    """Total proportionality for sufficiency: gap area over ``r' * y0``.  0 is optimal."""
    _check_y0(y0, epsilon)
    area = area_between(fwd, rev) if k_samples is None else riemann_area(fwd, rev, k_samples)
    r = sufficiency_penalty(float(fwd.R[-1]), y0, epsilon)
    return area / (r * y0)


@dataclass
class ProportionalityReport:
    tpn: float
    tps: float
    r: float
    r_prime: float
    k_samples: int | None
    epsilon: float


@dataclass
class ShareCurves:
    necessity_fwd: ShareCurve
    necessity_rev: ShareCurve
    sufficiency_fwd: ShareCurve
    sufficiency_rev: ShareCurve
    y0: float
    yb: float


def proportionality(
    model: Model,
    x,
    ordered: OrderedPixels,
    *,
    class_index: int,
    b: float = 0.0,
    chunk: int = 1,
    epsilon: float = DEFAULT_EPSILON,
    curves: dict[str, PerturbationCurve] | None = None,
) -> tuple[ProportionalityReport, ShareCurves]:
    """TPN, TPS and their penalty ratios for one attribution ordering.

    Forward curves already computed for N-Ord / S-Ord may be passed in
    ``curves`` under the keys ``"ablation"`` and ``"construction"``.
    """
    curves = curves or {}

    def get(direction, orientation):
        if orientation == FORWARD and direction in curves:
            return curves[direction]
        build = ablation_curve if direction == ABLATION else construction_curve
        return build(model, x, ordered, b, chunk, class_index=class_index, orientation=orientation)

    abl_f, abl_r = get(ABLATION, FORWARD), get(ABLATION, REVERSED)
    con_f, con_r = get(CONSTRUCTION, FORWARD), get(CONSTRUCTION, REVERSED)
    sc = ShareCurves(
        share_curve_from(abl_f, ordered),
        share_curve_from(abl_r, ordered),
        share_curve_from(con_f, ordered),
        share_curve_from(con_r, ordered),
        abl_f.y0,
        abl_f.yb,
    )
    report = ProportionalityReport(
        tpn=tpn(sc.necessity_fwd, sc.necessity_rev, sc.y0, sc.yb, epsilon),
        tps=tps(sc.sufficiency_fwd, sc.sufficiency_rev, sc.y0, epsilon),
        r=necessity_penalty(sc.yb, float(sc.necessity_fwd.R[-1]), epsilon),
        r_prime=sufficiency_penalty(float(sc.sufficiency_fwd.R[-1]), sc.y0, epsilon),
        k_samples=None,
        epsilon=epsilon,
    )
    return report, sc
