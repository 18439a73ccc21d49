"""Batch evaluation: every (image, method) pair scored on every criterion.

``run_eval`` writes three files into the output directory:

* ``metrics.csv``   one row per image and method (deterministic bytes),
* ``summary.csv``   quartiles per method and metric over ok rows,
* ``timings.csv``   wall-clock runtime per row (not deterministic).
"""

from __future__ import annotations

import logging
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import fileio
from .attributions import METHODS, AttributionMap, MethodConfig, attribute
from .errors import ConfigError, DegenerateScoreError, EmptyInputError, EmptyPositiveSetError
from .network import Model, forward, load_model
from .ordering import (
    ABLATION,
    CONSTRUCTION,
    PerturbationCurve,
    ablation_curve,
    aopc,
    construction_curve,
    default_chunk,
    full_ablation_curve,
    n_ord,
    order_pixels,
    s_ord,
)
from .proportionality import DEFAULT_EPSILON, ShareCurves, proportionality

log = logging.getLogger(__name__)

OK = "ok"
EMPTY = "empty-positive-set"
DEGENERATE = "degenerate-score"

METRIC_COLUMNS = (
    "image_id",
    "method",
    "class_index",
    "y0",
    "yb",
    "M",
    "n_ord",
    "s_ord",
    "aopc",
    "tpn",
    "tps",
    "r",
    "r_prime",
    "status",
)
SUMMARY_METRICS = ("n_ord", "s_ord", "one_minus_s_ord", "aopc", "tpn", "tps")
CRITERIA = (("n_ord", min), ("s_ord", max), ("tpn", min), ("tps", min))

MethodFn = Callable[[Model, np.ndarray, int, MethodConfig], AttributionMap]


@dataclass
class RunConfig:
    model_path: str | None = None
    image_source: str | None = None
    methods: tuple[str, ...] = METHODS
    class_mode: str = "predicted"
    class_index: int | None = None
    label_file: str | None = None
    score_mode: str = "softmax"
    baseline_value: float = 0.0
    chunk: int | None = None
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    output_dir: str | None = None
    ig_steps: int = 50
    sg_samples: int = 50
    sg_noise_fraction: float = 0.20
    aopc_steps: int | None = None
    workers: int = 1
    export_curves: bool = False

    def validate(self, extra_methods: Iterable[str] = ()) -> None:
        known = set(METHODS) | set(extra_methods)
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in known]
        if unknown:
            raise ConfigError(f"unknown methods: {', '.join(unknown)}")
        if self.class_mode not in ("predicted", "fixed", "label-file"):
            raise ConfigError(f"unknown class mode {self.class_mode!r}")
        if self.class_mode == "fixed" and self.class_index is None:
            raise ConfigError("class_mode 'fixed' needs class_index")
        if self.class_mode == "label-file" and not (self.label_file and Path(self.label_file).is_file()):
            raise ConfigError("class_mode 'label-file' needs an existing label_file")
        if self.score_mode not in ("softmax", "logit"):
            raise ConfigError(f"unknown score mode {self.score_mode!r}")
        if self.chunk is not None and self.chunk < 1:
            raise ConfigError("chunk must be >= 1")
        if self.model_path is not None and not Path(self.model_path).is_file():
            raise ConfigError(f"model manifest {self.model_path} does not exist")
        if self.image_source is not None and not Path(self.image_source).is_dir():
            raise ConfigError(f"image directory {self.image_source} does not exist")
        try:
            self.method_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def method_config(self, seed: int | None = None) -> MethodConfig:
        return MethodConfig(
            ig_steps=self.ig_steps,
            sg_samples=self.sg_samples,
            sg_noise_fraction=self.sg_noise_fraction,
            baseline_value=self.baseline_value,
            rng_seed=self.seed if seed is None else seed,
        )


@dataclass
class MetricReport:
    image_id: str
    method: str
    class_index: int
    y0: float
    yb: float
    M: int
    n_ord: float = math.nan
    s_ord: float = math.nan
    aopc: float = math.nan
    tpn: float = math.nan
    tps: float = math.nan
    r: float = math.nan
    r_prime: float = math.nan
    status: str = OK
    runtime_ms: float = field(default=0.0, compare=False)
    curves: ShareCurves | None = field(default=None, repr=False, compare=False)

    def row(self):
        return [getattr(self, c) for c in METRIC_COLUMNS]


@dataclass
class SummaryRow:
    method: str
    metric: str
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    count: int
    excluded_count: int


@dataclass
class AggregateSummary:
    rows: list[SummaryRow]
    images: int
    excluded: int

    def get(self, method: str, metric: str) -> SummaryRow:
        for row in self.rows:
            if row.method == method and row.metric == metric:
                return row
        raise KeyError((method, metric))


def method_seed(seed: int, image_id: str, method: str) -> int:
    """Per (image, method) seed, independent of processing order."""
    ss = np.random.SeedSequence([seed, zlib.crc32(image_id.encode()), zlib.crc32(method.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def evaluate_map(
    model: Model,
    x: np.ndarray,
    amap: AttributionMap,
    class_index: int,
    *,
    image_id: str = "",
    baseline_value: float = 0.0,
    chunk: int | None = None,
    epsilon: float = DEFAULT_EPSILON,
    aopc_steps: int | None = None,
) -> MetricReport:
    """Score one attribution map on N-Ord, S-Ord, AOPC, TPN and TPS."""
    b = baseline_value
    y0 = float(forward(model, x).y[class_index])
    yb = float(forward(model, np.full(model.input_shape, b)).y[class_index])
    base = dict(image_id=image_id, method=amap.method, class_index=class_index, y0=y0, yb=yb)
    try:
        ordered = order_pixels(amap)
    except EmptyPositiveSetError:
        return MetricReport(M=0, status=EMPTY, **base)
    n_pix = len(ordered.order)
    steps = n_pix if aopc_steps is None else aopc_steps
    step = chunk or default_chunk(max(ordered.M, steps))

    full = full_ablation_curve(model, x, ordered, b, step, class_index=class_index, steps=max(steps, ordered.M))
    if step == 1:
        # the positive-prefix ablation curve is the head of the full one
        abl = PerturbationCurve(
            full.m[: ordered.M + 1],
            ordered.cumulative_share,
            full.R[: ordered.M + 1],
            ABLATION,
            b,
            full.y0,
            full.yb,
            length=ordered.M,
        )
    else:
        abl = ablation_curve(model, x, ordered, b, step, class_index=class_index)
    con = construction_curve(model, x, ordered, b, step, class_index=class_index)
    report = MetricReport(M=ordered.M, **base)
    report.n_ord = n_ord(abl)
    report.s_ord = s_ord(con)
    report.aopc = aopc(full, steps)
    try:
        prop, curves = proportionality(
            model,
            x,
            ordered,
            class_index=class_index,
            b=b,
            chunk=step,
            epsilon=epsilon,
            curves={ABLATION: abl, CONSTRUCTION: con},
        )
    except DegenerateScoreError:
        report.status = DEGENERATE
        return report
    report.tpn, report.tps, report.r, report.r_prime = prop.tpn, prop.tps, prop.r, prop.r_prime
    report.curves = curves
    return report


def read_labels(path) -> dict[str, int]:
    labels = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        image_id, _, label = line.partition(",")
        if image_id == "image_id":
            continue
        labels[image_id.strip()] = int(label)
    return labels


def _load_images(config: RunConfig, model: Model) -> tuple[list[tuple[str, np.ndarray]], int]:
    images, skipped = [], 0
    for path in fileio.list_images(config.image_source):
        try:
            images.append((path.stem, fileio.load_image(path, model.input_shape)))
        except (ValueError, OSError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            skipped += 1
    return images, skipped


def run_eval(
    config: RunConfig,
    *,
    model: Model | None = None,
    images: Sequence[tuple[str, np.ndarray]] | None = None,
    extra_methods: dict[str, MethodFn] | None = None,
) -> tuple[list[MetricReport], AggregateSummary]:
    """Evaluate every configured method on every image.

    ``model`` and ``images`` override the paths in ``config``;
    ``extra_methods`` maps additional method names to attribution callables
    (used to inject fixed maps in tests).
    """
    extra_methods = dict(extra_methods or {})
    config.validate(extra_methods)
    if model is None:
        if config.model_path is None:
            raise ConfigError("no model given")
        model = load_model(config.model_path)
    if config.score_mode == "logit":
        model = model.without_softmax()
    if "gradcam" in config.methods and not model.conv_indices:
        raise ConfigError("gradcam requested but the model has no conv2d layer")
    if images is None:
        if config.image_source is None:
            raise ConfigError("no image source given")
        images, _ = _load_images(config, model)
    images = sorted(images, key=lambda item: item[0])
    labels = read_labels(config.label_file) if config.class_mode == "label-file" else {}

    def target(image_id, x):
        if config.class_mode == "fixed":
            return int(config.class_index)
        if config.class_mode == "label-file":
            if image_id not in labels:
                raise ConfigError(f"no label for image {image_id}")
            return labels[image_id]
        return forward(model, x).predicted

    def one(job):
        image_id, x, method = job
        t0 = time.perf_counter()
        c = target(image_id, x)
        cfg = config.method_config(method_seed(config.seed, image_id, method))
        if method in extra_methods:
            amap = extra_methods[method](model, x, c, cfg)
            amap.method = method
        else:
            amap = attribute(method, model, x, c, cfg)
        rep = evaluate_map(
            model,
            x,
            amap,
            c,
            image_id=image_id,
            baseline_value=config.baseline_value,
            chunk=config.chunk,
            epsilon=config.epsilon,
            aopc_steps=config.aopc_steps,
        )
        rep.runtime_ms = (time.perf_counter() - t0) * 1e3
        return rep

    jobs = [(image_id, x, method) for image_id, x in images for method in config.methods]
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            reports = list(pool.map(one, jobs))
    else:
        reports = [one(job) for job in jobs]
    order = {m: i for i, m in enumerate(config.methods)}
    reports.sort(key=lambda r: (r.image_id, order[r.method]))
    summary = aggregate(reports, config.methods)

    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(out / "metrics.csv", reports)
        write_summary(out / "summary.csv", summary)
        fileio.write_csv(
            out / "timings.csv",
            "# attrcrit-timings v1",
            ["image_id", "method", "runtime_ms"],
            [(r.image_id, r.method, round(r.runtime_ms, 3)) for r in reports],
        )
        if config.export_curves:
            for r in reports:
                fileio.export_curves(r.image_id, r.method, r.curves, out / "curves")
    return reports, summary


def aggregate(reports: Sequence[MetricReport], methods: Sequence[str] | None = None) -> AggregateSummary:
    """Type-7 (linear interpolation) quartiles per method and metric over ok rows."""
    methods = list(methods) if methods is not None else sorted({r.method for r in reports})
    images = len({r.image_id for r in reports})
    rows = []
    for method in methods:
        mine = [r for r in reports if r.method == method]
        ok = [r for r in mine if r.status == OK]
        excluded = len(mine) - len(ok)
        for metric in SUMMARY_METRICS:
            if metric == "one_minus_s_ord":
                vals = np.array([1.0 - r.s_ord for r in ok])
            else:
                vals = np.array([getattr(r, metric) for r in ok])
            if len(vals):
                q = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
                mean = float(vals.mean())
            else:
                q, mean = [math.nan] * 5, math.nan
            rows.append(SummaryRow(method, metric, *(float(v) for v in q), mean, len(ok), excluded))
    return AggregateSummary(rows, images, sum(r.status != OK for r in reports))


def write_metrics(path, reports: Sequence[MetricReport]) -> None:
    fileio.write_csv(path, fileio.METRICS_SCHEMA, METRIC_COLUMNS, (r.row() for r in reports))


def read_metrics(path) -> list[MetricReport]:
    out = []
    for row in fileio.read_csv(path, fileio.METRICS_SCHEMA):
        kw = {}
        for f in fields(MetricReport):
            if f.name not in row:
                continue
            v = row[f.name]
            if f.name in ("image_id", "method", "status"):
                kw[f.name] = v
            elif f.name in ("class_index", "M"):
                kw[f.name] = int(v)
            else:
                kw[f.name] = float(v)
        out.append(MetricReport(**kw))
    return out


def write_summary(path, summary: AggregateSummary) -> None:
    schema = f"{fileio.SUMMARY_SCHEMA}; quantiles=type-7; images={summary.images}; excluded={summary.excluded}"
    cols = [f.name for f in fields(SummaryRow)]
    fileio.write_csv(path, schema, cols, ([getattr(r, c) for c in cols] for r in summary.rows))


@dataclass(frozen=True)
class Winner:
    scope: str
    criterion: str
    methods: tuple[str, ...]
    value: float

    @property
    def tie(self) -> bool:
        return len(self.methods) > 1


def _best(values: dict[str, float], pick, tol: float) -> tuple[tuple[str, ...], float]:
    best = pick(values.values())
    return tuple(m for m, v in values.items() if abs(v - best) <= tol), best


def select_winners(reports: Sequence[MetricReport], per_image: bool = True, *, tol: float = 1e-12) -> list[Winner]:
    """Best method per criterion: lowest N-Ord, highest S-Ord, lowest TPN and TPS.

    ``per_image=False`` compares per-method medians over all ok rows.
    Methods within ``tol`` of the best value are reported together as a tie.
    """
    ok = [r for r in reports if r.status == OK]
    if not ok:
        raise EmptyInputError("no usable reports to rank")
    winners = []
    if per_image:
        for image_id in sorted({r.image_id for r in ok}):
            mine = [r for r in ok if r.image_id == image_id]
            for criterion, pick in CRITERIA:
                methods, value = _best({r.method: getattr(r, criterion) for r in mine}, pick, tol)
                winners.append(Winner(image_id, criterion, methods, value))
    else:
        methods = list(dict.fromkeys(r.method for r in ok))
        for criterion, pick in CRITERIA:
            medians = {m: float(np.median([getattr(r, criterion) for r in ok if r.method == m])) for m in methods}
            names, value = _best(medians, pick, tol)
            winners.append(Winner("all", criterion, names, value))
    return winners


def write_winners(path, winners: Sequence[Winner]) -> None:
    fileio.write_csv(
        path,
        fileio.WINNERS_SCHEMA,
        ["scope", "criterion", "winners", "value", "tie"],
        ((w.scope, w.criterion, "|".join(w.methods), w.value, int(w.tie)) for w in winners),
    )
