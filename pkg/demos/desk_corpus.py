"""Train a small CNN, write a synthetic corpus to disk and score all methods.

The corpus holds 16x16 grayscale images of three pattern classes. This
script goes through the same files and subcommands a user would:
``attrcrit eval`` followed by ``attrcrit winners --global``. Output lands in
``demo-out/`` unless ``ATTRCRIT_OUTPUT_DIR`` is set.

Run with ``python3 demos/desk_corpus.py [n_images]`` (default 30, about 30 s).
"""

import sys
from pathlib import Path

from attrcrit import fileio
from attrcrit.cli import main as cli
from attrcrit.harness import SUMMARY_METRICS
from attrcrit.network import save_model
from attrcrit.synthetic import accuracy, desk_cnn, make_corpus


def main(n_images=30):
    root = Path("demo-out")
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    model = desk_cnn()
    test_images, test_labels = make_corpus(200, seed=7)
    print(f"desk CNN: {model.n_params()} parameters, held-out accuracy {accuracy(model, test_images, test_labels):.2f}")
    save_model(model, root / "model.json")

    for i, x in enumerate(test_images[:n_images]):
        fileio.write_pnm(images_dir / f"img{i:03d}.pgm", x)

    out = root / "run"
    cli(["eval", "--model", str(root / "model.json"), "--images", str(images_dir), "--output-dir", str(out)])
    cli(["winners", "--global", str(out / "metrics.csv")])

    print("\nmedians per method:")
    rows = fileio.read_csv(out / "summary.csv", fileio.SUMMARY_SCHEMA)
    medians = {}
    for row in rows:
        medians.setdefault(row["method"], {})[row["metric"]] = float(row["median"])
    print("method      " + "  ".join(f"{m:>15}" for m in SUMMARY_METRICS))
    for method, vals in medians.items():
        print(f"{method:<11} " + "  ".join(f"{vals[m]:15.4f}" for m in SUMMARY_METRICS))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 30)
