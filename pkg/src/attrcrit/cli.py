"""Command-line front end: ``eval``, ``winners`` and ``curves``.

Exit codes: 0 success, 1 configuration error, 2 no usable rows.
``ATTRCRIT_OUTPUT_DIR`` overrides ``--output-dir`` when set.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import fileio
from .attributions import METHODS, attribute
from .errors import ConfigError, EmptyInputError, EmptyPositiveSetError
from .harness import OK, RunConfig, evaluate_map, read_labels, method_seed, read_metrics, run_eval, select_winners, write_winners
from .network import forward, load_model

EXIT_OK, EXIT_CONFIG, EXIT_EMPTY = 0, 1, 2
OUTPUT_ENV = "ATTRCRIT_OUTPUT_DIR"

log = logging.getLogger("attrcrit")


def _methods(text: str) -> tuple[str, ...]:
    return tuple(m.strip() for m in text.split(",") if m.strip())


def _output_dir(arg):
    return os.environ.get(OUTPUT_ENV) or arg


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", dest="model_path", required=True, help="model manifest (.json)")
    p.add_argument("--images", dest="image_source", required=True, help="directory of .pgm/.ppm/.rawt files")
    p.add_argument("--methods", type=_methods, default=METHODS, help="comma-separated method names")
    p.add_argument("--baseline", dest="baseline_value", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default="attrcrit-out")
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--score-mode", choices=("softmax", "logit"), default="softmax")
    p.add_argument("--class-mode", choices=("predicted", "fixed", "label-file"), default="predicted")
    p.add_argument("--class-index", type=int, default=None)
    p.add_argument("--label-file", default=None)
    p.add_argument("--ig-steps", type=int, default=50)
    p.add_argument("--sg-samples", type=int, default=50)
    p.add_argument("--sg-noise-fraction", type=float, default=0.20)


def _config(args, **extra) -> RunConfig:
    return RunConfig(
        model_path=args.model_path,
        image_source=args.image_source,
        methods=args.methods,
        class_mode=args.class_mode,
        class_index=args.class_index,
        label_file=args.label_file,
        score_mode=args.score_mode,
        baseline_value=args.baseline_value,
        chunk=args.chunk,
        seed=args.seed,
        output_dir=_output_dir(args.output_dir),
        ig_steps=args.ig_steps,
        sg_samples=args.sg_samples,
        sg_noise_fraction=args.sg_noise_fraction,
        **extra,
    )


def cmd_eval(args) -> int:
    config = _config(
        args, epsilon=args.epsilon, aopc_steps=args.aopc_steps, workers=args.workers, export_curves=args.export_curves
    )
    reports, summary = run_eval(config)
    ok = sum(r.status == OK for r in reports)
    print(f"{len(reports)} rows ({ok} ok) written to {config.output_dir}")
    return EXIT_OK if ok else EXIT_EMPTY


def cmd_winners(args) -> int:
    reports = read_metrics(args.metrics)
    try:
        winners = select_winners(reports, per_image=not args.global_medians)
    except EmptyInputError as exc:
        log.error("%s", exc)
        return EXIT_EMPTY
    out = Path(_output_dir(args.output_dir) or Path(args.metrics).parent)
    out.mkdir(parents=True, exist_ok=True)
    write_winners(out / "winners.csv", winners)
    for w in winners:
        print(f"{w.scope:>12}  {w.criterion:<6} {'|'.join(w.methods)}  {w.value:.6g}")
    return EXIT_OK


def cmd_curves(args) -> int:
    config = _config(args)
    config.validate()
    model = load_model(config.model_path)
    if config.score_mode == "logit":
        model = model.without_softmax()
    out = Path(config.output_dir)
    labels = read_labels(config.label_file) if config.class_mode == "label-file" else {}
    written = 0
    for path in fileio.list_images(config.image_source):
        x = fileio.load_image(path, model.input_shape)
        if config.class_mode == "fixed":
            c = config.class_index
        elif config.class_mode == "label-file":
            if path.stem not in labels:
                raise ConfigError(f"no label for image {path.stem}")
            c = labels[path.stem]
        else:
            c = forward(model, x).predicted
        for method in config.methods:
            cfg = config.method_config(method_seed(config.seed, path.stem, method))
            amap = attribute(method, model, x, c, cfg)
            try:
                rep = evaluate_map(model, x, amap, c, image_id=path.stem, baseline_value=config.baseline_value, chunk=config.chunk)
            except EmptyPositiveSetError:
                continue
            written += len(fileio.export_curves(path.stem, method, rep.curves, out, svg=args.svg))
    print(f"{written} curve files written to {out}")
    return EXIT_OK if written else EXIT_EMPTY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrcrit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score every method on every image")
    _add_run_flags(p)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--aopc-steps", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--export-curves", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("winners", help="best method per criterion from a metrics.csv")
    p.add_argument("metrics")
    p.add_argument("--global", dest="global_medians", action="store_true", help="compare medians over all images")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_winners)

    p = sub.add_parser("curves", help="export share curves (and optional SVG charts)")
    _add_run_flags(p)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
