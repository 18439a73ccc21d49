import json

import numpy as np
import pytest
from oracles import central_difference, min_pool_gap, min_relu_margin

from attrcrit.errors import ModelFormatError, NonFiniteError, RuleError, ShapeError, VersionError
from attrcrit.network import (
    BackwardRuleSet,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    Model,
    ReLU,
    Softmax,
    backward_input,
    forward,
    load_model,
    predict,
    save_model,
)
from attrcrit.synthetic import desk_cnn_untrained, linear_model, random_cnn, random_mlp


def kink_free_input(model, rng, shape, margin=1e-3):
    while True:
        x = rng.normal(size=shape)
        if min_relu_margin(model, x) > margin and min_pool_gap(model, x) > margin:
            return x


class TestModel:
    def test_shapes_validated(self):
        with pytest.raises(ModelFormatError):
            Model([Dense(np.ones((2, 3)), np.zeros(2)), Dense(np.ones((1, 4)), np.zeros(1))], (3,))

    def test_last_layer_must_score(self):
        with pytest.raises(ModelFormatError):
            Model([Dense(np.ones((2, 3)), np.zeros(2)), ReLU()], (3,))

    def test_softmax_only_last(self):
        with pytest.raises(ModelFormatError):
            Model([Dense(np.ones((2, 3)), np.zeros(2)), Softmax(), Dense(np.ones((1, 2)), np.zeros(1))], (3,))

    def test_dense_bias_length(self):
        with pytest.raises(ShapeError):
            Dense(np.ones((2, 3)), np.zeros(3))

    def test_desk_cnn_size(self, rng):
        model = desk_cnn_untrained(rng)
        assert model.n_params() <= 100_000
        assert model.class_count == 3
        assert model.conv_indices == [0, 3]


class TestForward:
    def test_linear(self):
        assert forward(linear_model([[2, 1, 0]]), [1.0, 1.0, 1.0]).y.tolist() == [3.0]

    def test_nan_rejected(self):
        with pytest.raises(NonFiniteError):
            forward(linear_model([[2, 1, 0]]), [np.nan, 1.0, 1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            forward(linear_model([[2, 1, 0]]), [1.0, 1.0])

    def test_softmax_symmetry(self):
        model = Model([Dense(np.zeros((2, 1)), np.zeros(2)), Softmax()], (1,))
        np.testing.assert_allclose(forward(model, [3.0]).y, [0.5, 0.5])

    def test_softmax_sums_to_one(self, rng):
        model = random_cnn(rng)
        ys = forward(model, rng.normal(size=(5, 1, 8, 8))).y
        np.testing.assert_allclose(ys.sum(axis=1), 1.0, atol=1e-9)

    def test_trace_replays_bit_exactly(self, rng):
        model = random_cnn(rng)
        trace = forward(model, rng.normal(size=(1, 8, 8)))
        assert len(trace.inputs) == len(model.layers)
        for layer, a_in, a_out in zip(model.layers, trace.inputs, trace.outputs):
            assert np.array_equal(layer.forward(a_in), a_out)

    def test_batch_matches_single(self, rng):
        model = random_cnn(rng)
        xs = rng.normal(size=(3, 1, 8, 8))
        batch = predict(model, xs)
        for i in range(3):
            np.testing.assert_allclose(forward(model, xs[i]).y, batch[i], rtol=1e-13)

    def test_predicted_is_argmax(self, rng):
        model = random_mlp(rng)
        x = rng.normal(size=6)
        trace = forward(model, x)
        assert trace.predicted == int(np.argmax(trace.y))


class TestBackward:
    def test_linear_gradient(self):
        model = linear_model([[2, 1, 0]])
        for x in ([1.0, 1.0, 1.0], [-3.0, 0.5, 7.0]):
            np.testing.assert_array_equal(backward_input(model, forward(model, x), 0), [2, 1, 0])

    def test_inactive_relu(self):
        model = Model([Dense([[1.0]], [0.0]), ReLU(), Dense([[1.0]], [0.0])], (1,))
        trace = forward(model, [-1.0])
        assert backward_input(model, trace, 0)[0] == 0.0
        assert backward_input(model, trace, 0, BackwardRuleSet.guided())[0] == 0.0

    def test_mlp_matches_finite_differences(self, rng):
        for _ in range(10):
            model = random_mlp(rng, hidden=(8, 5))
            x = kink_free_input(model, rng, (6,))
            g = backward_input(model, forward(model, x), 1)
            fd = central_difference(model, x, 1)
            assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-4

    def test_cnn_matches_finite_differences(self, rng):
        model = random_cnn(rng, input_shape=(2, 6, 6))
        x = kink_free_input(model, rng, (2, 6, 6))
        g = backward_input(model, forward(model, x), 2)
        fd = central_difference(model, x, 2)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4

    def test_guided_equals_exact_when_all_positive(self):
        w1 = np.array([[1.0, 2.0], [0.5, 1.0]])
        model = Model([Dense(w1, [0.1, 0.1]), ReLU(), Dense([[1.0, 3.0]], [0.0])], (2,))
        trace = forward(model, [1.0, 2.0])
        np.testing.assert_array_equal(
            backward_input(model, trace, 0), backward_input(model, trace, 0, BackwardRuleSet.guided())
        )

    def test_guided_blocks_negative_upstream(self):
        model = Model([Dense([[1.0]], [0.0]), ReLU(), Dense([[-2.0]], [0.0])], (1,))
        trace = forward(model, [1.0])
        assert backward_input(model, trace, 0)[0] == -2.0
        assert backward_input(model, trace, 0, BackwardRuleSet.guided())[0] == 0.0

    def test_bad_class(self):
        model = linear_model([[1, 1]])
        with pytest.raises(IndexError):
            backward_input(model, forward(model, [1.0, 1.0]), 3)

    def test_guided_rule_on_dense_rejected(self):
        model = linear_model([[1, 1]])
        with pytest.raises(RuleError):
            backward_input(model, forward(model, [1.0, 1.0]), 0, BackwardRuleSet({"dense": "guided-relu"}))

    def test_deeplift_needs_reference(self):
        rules = BackwardRuleSet({"relu": "deeplift-rescale"})
        model = Model([Dense(np.eye(2), np.zeros(2)), ReLU(), Dense([[1.0, 1.0]], [0.0])], (2,))
        with pytest.raises(RuleError):
            backward_input(model, forward(model, [1.0, 1.0]), 0, rules)

    def test_return_all_seed(self, rng):
        model = random_mlp(rng)
        signals = backward_input(model, forward(model, rng.normal(size=6)), 2, return_all=True)
        assert len(signals) == len(model.layers) + 1
        np.testing.assert_array_equal(signals[-1], [[0.0, 0.0, 1.0]])


class TestLrpConservation:
    @pytest.mark.parametrize("seed", range(5))
    def test_dense_layers_conserve(self, seed):
        rng = np.random.default_rng(seed)
        model = random_mlp(rng, hidden=(7, 5))
        x = rng.normal(size=6)
        trace = forward(model, x)
        c = int(np.argmax(trace.y))
        signals = backward_input(model, trace, c, BackwardRuleSet.lrp(), return_all=True)
        for i, layer in enumerate(model.layers):
            if layer.kind == "dense":
                r_out, r_in = signals[i + 1].sum(), signals[i].sum()
                assert abs(r_in - r_out) <= 1e-6 * max(abs(r_out), 1e-12)

    def test_cnn_total_conserved(self, rng):
        model = random_cnn(rng)
        x = np.abs(rng.normal(size=(1, 8, 8)))
        trace = forward(model, x)
        c = trace.predicted
        rel = backward_input(model, trace, c, BackwardRuleSet.lrp())
        assert rel.sum() == pytest.approx(trace.y[c], rel=1e-6)

    def test_mixed_sign_single_layer(self):
        # z = (3, 1, -1): positive mass 4, negative mass -1
        model = linear_model([[3.0, 1.0, -1.0]])
        rel = backward_input(model, forward(model, [1.0, 1.0, 1.0]), 0, BackwardRuleSet.lrp())
        np.testing.assert_allclose(rel, [4.5, 1.5, -3.0], rtol=1e-8)


class TestDeepLift:
    def test_summation_to_delta(self, rng):
        for _ in range(5):
            model = random_cnn(rng)
            x = rng.normal(size=(1, 8, 8))
            ref = forward(model, np.zeros((1, 8, 8)))
            trace = forward(model, x)
            c = trace.predicted
            mult = backward_input(model, trace, c, BackwardRuleSet.deeplift(ref))
            assert np.sum(mult * x) == pytest.approx(trace.y[c] - ref.y[c], abs=1e-9)

    def test_linear_equals_gradient(self, rng):
        model = random_mlp(rng, hidden=())
        ref = forward(model, np.zeros(6))
        trace = forward(model, rng.normal(size=6))
        np.testing.assert_allclose(
            backward_input(model, trace, 0, BackwardRuleSet.deeplift(ref)), backward_input(model, trace, 0)
        )


class TestSaveLoad:
    def test_linear_manifest(self, tmp_path):
        model = linear_model([[2.0, 1.0, 0.0]])
        save_model(model, tmp_path / "lin.json")
        loaded = load_model(tmp_path / "lin.json")
        assert len(loaded.layers) == 1 and loaded.layers[0].kind == "dense"
        assert forward(loaded, [1.0, 1.0, 1.0]).y.tolist() == [3.0]

    def test_roundtrip_outputs(self, tmp_path, rng):
        model = random_mlp(rng)
        save_model(model, tmp_path / "m.json")
        loaded = load_model(tmp_path / "m.json")
        xs = rng.normal(size=(10, 6))
        assert np.array_equal(predict(model, xs), predict(loaded, xs))

    def test_cnn_blob_bit_identical(self, tmp_path, rng):
        model = desk_cnn_untrained(rng)
        save_model(model, tmp_path / "a.json")
        save_model(load_model(tmp_path / "a.json"), tmp_path / "b.json")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_zero_bias_cnn_uniform_on_zeros(self, tmp_path, rng):
        model = Model(
            [Conv2D(rng.normal(size=(8, 1, 3, 3)), np.zeros(8)), ReLU(), MaxPool2D(2), Flatten(),
             Dense(rng.normal(size=(4, 8 * 3 * 3)), np.zeros(4)), Softmax()],
            (1, 8, 8),
        )
        save_model(model, tmp_path / "cnn.json")
        y = forward(load_model(tmp_path / "cnn.json"), np.zeros((1, 8, 8))).y
        np.testing.assert_allclose(y, 0.25)

    def test_size_mismatch(self, tmp_path):
        save_model(Model([Dense(np.ones((2, 4)), np.zeros(2))], (4,)), tmp_path / "m.json")
        (tmp_path / "m.bin").write_bytes(np.ones(7, dtype="<f4").tobytes())
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "m.json")

    def test_unknown_version(self, tmp_path):
        save_model(linear_model([[1.0]]), tmp_path / "m.json")
        manifest = json.loads((tmp_path / "m.json").read_text())
        manifest["version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(manifest))
        with pytest.raises(VersionError):
            load_model(tmp_path / "m.json")

    def test_nonfinite_weight(self, tmp_path):
        save_model(linear_model([[1.0, 2.0]]), tmp_path / "m.json")
        (tmp_path / "m.bin").write_bytes(np.array([1.0, np.inf, 0.0], dtype="<f4").tobytes())
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "m.json")

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_model(tmp_path / "absent.json")
