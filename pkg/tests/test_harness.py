import logging

import numpy as np
import pytest
from conftest import MAX_MAPS, fixed_map
from oracles import sorted_quantile

from attrcrit import fileio
from attrcrit.errors import ConfigError, EmptyInputError
from attrcrit.harness import (
    DEGENERATE,
    EMPTY,
    OK,
    MetricReport,
    RunConfig,
    aggregate,
    method_seed,
    read_metrics,
    run_eval,
    select_winners,
    write_metrics,
)
from attrcrit.network import forward, save_model
from attrcrit.synthetic import linear_model, random_cnn


@pytest.fixture
def cnn(rng):
    return random_cnn(rng)


@pytest.fixture
def images(rng):
    return [(f"im{i}", rng.uniform(size=(1, 8, 8))) for i in range(3)]


def max_map_run(mmodel, **kw):
    methods = {name: fixed_map(s, name) for name, s in MAX_MAPS.items()}
    config = RunConfig(methods=tuple(methods), class_mode="fixed", class_index=0, **kw)
    return run_eval(config, model=mmodel, images=[("x", np.ones((1, 1, 3)))], extra_methods=methods)


class TestRunEval:
    def test_one_row_per_pair(self, cnn, images):
        reports, summary = run_eval(RunConfig(methods=("saliency", "random")), model=cnn, images=images)
        assert len(reports) == 6
        assert [(r.image_id, r.method) for r in reports[:2]] == [("im0", "saliency"), ("im0", "random")]
        assert summary.images == 3

    def test_max_model_injection(self, mmodel):
        reports, _ = max_map_run(mmodel)
        by = {r.method: r for r in reports}
        assert by["A1"].n_ord == pytest.approx(3 / 4)
        assert by["A2"].n_ord == pytest.approx(1.0)
        assert by["A3"].n_ord == pytest.approx(2 / 3)
        assert by["A1"].tpn == pytest.approx(7 / 12)
        assert by["A3"].tps == pytest.approx(1 / 6)
        assert all(r.status == OK for r in reports)

    def test_empty_positive_set_status(self, cnn, images):
        methods = {"neg": fixed_map(-np.ones((8, 8)))}
        reports, summary = run_eval(RunConfig(methods=("neg",)), model=cnn, images=images, extra_methods=methods)
        assert {r.status for r in reports} == {EMPTY}
        assert np.isnan(reports[0].n_ord)
        row = summary.get("neg", "tpn")
        assert row.count == 0 and row.excluded_count == 3 and np.isnan(row.median)

    def test_degenerate_status(self):
        # the explained score is zero at the input
        model = linear_model([[1.0, -1.0]])
        methods = {"m": fixed_map([1.0, 0.5])}
        reports, _ = run_eval(
            RunConfig(methods=("m",), class_mode="fixed", class_index=0),
            model=model,
            images=[("a", np.array([1.0, 1.0]))],
            extra_methods=methods,
        )
        assert reports[0].status == DEGENERATE

    def test_counts_add_up(self, cnn, images):
        methods = {"neg": fixed_map(-np.ones((8, 8)))}
        reports, summary = run_eval(
            RunConfig(methods=("saliency", "neg")), model=cnn, images=images, extra_methods=methods
        )
        for method in ("saliency", "neg"):
            row = summary.get(method, "n_ord")
            assert row.count + row.excluded_count == summary.images

    def test_workers_deterministic(self, cnn, images):
        cfg = dict(methods=("smoothgrad", "random", "ig"), sg_samples=5, ig_steps=5)
        a, _ = run_eval(RunConfig(**cfg), model=cnn, images=images)
        b, _ = run_eval(RunConfig(workers=3, **cfg), model=cnn, images=list(reversed(images)))
        assert [r.row() for r in a] == [r.row() for r in b]

    def test_seed_changes_random(self, cnn, images):
        a, _ = run_eval(RunConfig(methods=("random",), seed=0), model=cnn, images=images)
        b, _ = run_eval(RunConfig(methods=("random",), seed=1), model=cnn, images=images)
        assert [r.n_ord for r in a] != [r.n_ord for r in b]

    def test_method_seed_independent_of_order(self):
        assert method_seed(0, "a", "random") == method_seed(0, "a", "random")
        assert method_seed(0, "a", "random") != method_seed(0, "b", "random")

    def test_logit_mode(self, cnn, images):
        reports, _ = run_eval(RunConfig(methods=("saliency",), score_mode="logit"), model=cnn, images=images)
        logits = cnn.without_softmax()
        y = forward(logits, images[0][1]).y
        assert reports[0].y0 == pytest.approx(float(y.max()))

    def test_fixed_class(self, cnn, images):
        reports, _ = run_eval(RunConfig(methods=("saliency",), class_mode="fixed", class_index=2), model=cnn, images=images)
        assert {r.class_index for r in reports} == {2}

    def test_label_file(self, cnn, images, tmp_path):
        labels = tmp_path / "labels.csv"
        labels.write_text("image_id,label\nim0,1\nim1,0\nim2,2\n")
        reports, _ = run_eval(
            RunConfig(methods=("saliency",), class_mode="label-file", label_file=str(labels)), model=cnn, images=images
        )
        assert [r.class_index for r in reports] == [1, 0, 2]

    def test_gradcam_without_conv(self):
        with pytest.raises(ConfigError):
            run_eval(RunConfig(methods=("gradcam",)), model=linear_model([[1.0, 1.0]]), images=[("a", np.ones(2))])

    @pytest.mark.parametrize(
        "kw",
        [{"methods": ("occlusion",)}, {"methods": ()}, {"class_mode": "fixed"}, {"chunk": 0}, {"ig_steps": 0},
         {"score_mode": "prob"}, {"class_mode": "label-file", "label_file": "/nonexistent"}],
    )
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**kw).validate()


class TestFiles:
    def test_outputs_and_skip(self, cnn, tmp_path, rng, caplog):
        src = tmp_path / "imgs"
        src.mkdir()
        for i in range(2):
            fileio.write_raw_tensor(src / f"ok{i}.rawt", rng.uniform(size=(1, 8, 8)))
        (src / "broken.pgm").write_bytes(b"P5\n8 8\n255\n" + bytes(10))
        save_model(cnn, tmp_path / "m.json")
        out = tmp_path / "out"
        config = RunConfig(
            model_path=str(tmp_path / "m.json"), image_source=str(src), methods=("saliency",), output_dir=str(out)
        )
        with caplog.at_level(logging.WARNING):
            reports, _ = run_eval(config)
        assert [r.image_id for r in reports] == ["ok0", "ok1"]
        assert "broken.pgm" in caplog.text
        assert {p.name for p in out.iterdir()} == {"metrics.csv", "summary.csv", "timings.csv"}
        header = (out / "summary.csv").read_text().splitlines()[0]
        assert "quantiles=type-7" in header and "images=2" in header

    def test_metrics_roundtrip(self, cnn, images, tmp_path):
        reports, _ = run_eval(RunConfig(methods=("saliency", "gb")), model=cnn, images=images)
        write_metrics(tmp_path / "m.csv", reports)
        assert read_metrics(tmp_path / "m.csv") == reports

    def test_export_curves(self, cnn, images, tmp_path):
        run_eval(RunConfig(methods=("saliency",), output_dir=str(tmp_path), export_curves=True), model=cnn, images=images)
        assert len(list((tmp_path / "curves").glob("*.csv"))) == 15


class TestAggregate:
    def test_quantiles_match_oracle(self, rng):
        vals = rng.normal(size=11)
        reports = [MetricReport(f"i{i}", "m", 0, 1.0, 0.0, 4, n_ord=v, s_ord=-v, aopc=v, tpn=v, tps=v)
                   for i, v in enumerate(vals)]
        summary = aggregate(reports)
        row = summary.get("m", "n_ord")
        for q, got in zip((0, 0.25, 0.5, 0.75, 1), (row.min, row.q1, row.median, row.q3, row.max)):
            assert got == pytest.approx(sorted_quantile(vals, q), abs=1e-15)
        assert summary.get("m", "one_minus_s_ord").median == pytest.approx(1 + np.median(vals))
        assert row.mean == pytest.approx(vals.mean())


class TestWinners:
    def test_max_model(self, mmodel):
        reports, _ = max_map_run(mmodel)
        winners = {w.criterion: w for w in select_winners(reports)}
        assert winners["n_ord"].methods == ("A3",)
        assert winners["s_ord"].methods == ("A2", "A3") and winners["s_ord"].tie
        assert winners["tpn"].methods == ("A2",)
        assert winners["tps"].methods == ("A3",)

    def test_single_method(self, cnn, images):
        reports, _ = run_eval(RunConfig(methods=("saliency",)), model=cnn, images=images)
        winners = select_winners(reports)
        assert len(winners) == 12
        assert all(w.methods == ("saliency",) and not w.tie for w in winners)

    def test_global_medians(self, mmodel):
        reports, _ = max_map_run(mmodel)
        winners = select_winners(reports, per_image=False)
        assert [w.scope for w in winners] == ["all"] * 4
        assert winners[0].methods == ("A3",)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            select_winners([])
        with pytest.raises(EmptyInputError):
            select_winners([MetricReport("a", "m", 0, 1.0, 0.0, 0, status=EMPTY)])
