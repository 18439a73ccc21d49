"""On a linear model the gradient methods collapse onto grad x input.

For y = w.x + b with zero baseline, saliency, integrated gradients and
DeepLIFT all return w * x, LRP returns the same map up to a global scale,
and SmoothGrad matches because the gradient does not depend on the noise.
Removing features then lowers the output by exactly their scores, so both
proportionality totals vanish.

Run with ``python3 demos/linear_equivalence.py``.
"""

import numpy as np

from attrcrit import MethodConfig, attribute, order_pixels, proportionality
from attrcrit.synthetic import random_linear_model


def main():
    rng = np.random.default_rng(0)
    model = random_linear_model(rng, n_features=6, positive_row=0)
    x = rng.uniform(0.1, 0.9, size=6)
    cfg = MethodConfig(sg_samples=2_000)

    maps = {m: attribute(m, model, x, 0, cfg).scores for m in ("saliency", "ig", "deeplift", "smoothgrad", "lrp")}
    np.set_printoptions(precision=4, suppress=True)
    for name, scores in maps.items():
        print(f"{name:<10} {scores}   normalized {scores / scores.sum()}")

    report, _ = proportionality(model, x, order_pixels(maps["saliency"]), class_index=0)
    print(f"\ngrad x input: TPN = {report.tpn:.2e}, TPS = {report.tps:.2e}")


if __name__ == "__main__":
    main()
