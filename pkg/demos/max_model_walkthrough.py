"""Three hand-made attribution maps on a two-input max model.

The model is y = max(x1, x2) over three features (x3 is ignored), the input
is all ones and the baseline is zero. The maps disagree on which feature
matters, and the criteria disagree on which map is best: the ordering scores
prefer A3, while TPN prefers A2.

Run with ``python3 demos/max_model_walkthrough.py``.
"""

import numpy as np

from attrcrit import AttributionMap, RunConfig, run_eval, select_winners
from attrcrit.synthetic import max_model

MAPS = {
    "A1": (1 / 6, 1 / 3, 1 / 2),
    "A2": (2 / 3, 0.0, 1 / 3),
    "A3": (2 / 3, 1 / 3, 0.0),
}


def injected(scores, name):
    def method(model, x, c, cfg):
        return AttributionMap(np.array([scores]), name, c)

    return method


def main():
    model = max_model()
    methods = {name: injected(s, name) for name, s in MAPS.items()}
    config = RunConfig(methods=tuple(methods), class_mode="fixed", class_index=0)
    reports, _ = run_eval(config, model=model, images=[("ones", np.ones((1, 1, 3)))], extra_methods=methods)

    print("map   N-Ord   S-Ord   AOPC    TPN     TPS")
    for r in reports:
        print(f"{r.method:<5} {r.n_ord:6.3f}  {r.s_ord:6.3f}  {r.aopc:6.3f}  {r.tpn:6.3f}  {r.tps:6.3f}")

    print("\nwinners (lower N-Ord, TPN, TPS and higher S-Ord are better):")
    for w in select_winners(reports):
        tie = " (tie)" if w.tie else ""
        print(f"  {w.criterion:<6} {', '.join(w.methods)}{tie}")

    # A2 puts x1 first and x2 last: removing x1 alone leaves max(0, 1) = 1,
    # so necessity ordering calls it the worst map even though its scores
    # track the output drop most proportionally.


if __name__ == "__main__":
    main()
