import math

import numpy as np
import pytest

from fusepool.corpus import SplitSpec, split
from fusepool.fusion import (
    FusionParameters,
    TrainConfig,
    build_training_data,
    forward,
    fusion_dims,
    init_params,
    load_params,
    loss_and_grad,
    predict,
    save_params,
    train,
)
from fusepool.synthetic import separable_confidences

from test_corpus import mcq_record, oeq_record
from test_answers import ok_pass


def finite_difference_grads(params, X, y, active, h=1e-5):
    """Central-difference oracle over every parameter entry."""
    out = []
    for w, b in params.layers:
        gw = np.zeros_like(w)
        gb = np.zeros_like(b)
        for arr, g in ((w, gw), (b, gb)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp, _ = loss_and_grad(params, X, y, active)
                arr[idx] = orig - h
                lm, _ = loss_and_grad(params, X, y, active)
                arr[idx] = orig
                g[idx] = (lp - lm) / (2 * h)
        out.append((gw, gb))
    return out


def max_rel_err(analytic, numeric):
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestInit:
    def test_paper_shapes(self):
        params = init_params((32, 100, 100, 4), seed=0)
        assert [w.shape for w, _ in params.layers] == [(100, 32), (100, 100), (4, 100)]
        assert all(np.array_equal(b, np.zeros_like(b)) for _, b in params.layers)

    def test_deterministic(self):
        a = init_params((8, 5, 3), seed=42)
        b = init_params((8, 5, 3), seed=42)
        for (wa, _), (wb, _) in zip(a.layers, b.layers):
            assert np.array_equal(wa, wb)

    def test_xavier_variance(self):
        # var(U(-a, a)) = a^2/3 = 2 / (fan_in + fan_out)
        params = init_params((100, 100), seed=1)
        w = params.layers[0][0]
        assert w.size == 10_000
        expected = 2.0 / 200
        assert abs(w.var() - expected) / expected < 0.2

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            init_params((4,), seed=0)


class TestForward:
    def test_zero_params_give_uniform(self):
        params = FusionParameters(
            layers=[(np.zeros((5, 3)), np.zeros(5)), (np.zeros((4, 5)), np.zeros(4))],
            dims=(3, 5, 4),
        )
        out = forward(params, np.array([0.3, 0.5, 0.2]))
        assert out == pytest.approx([0.25] * 4)

    def test_hand_computed_single_layer(self):
        # logits z = W x + b with x=(0.2, 0.8)
        w = np.array([[1.0, -1.0], [0.5, 0.5]])
        b = np.array([0.1, -0.1])
        params = FusionParameters(layers=[(w, b)], dims=(2, 2))
        x = np.array([0.2, 0.8])
        z = w @ x + b
        want = np.exp(z - z.max())
        want /= want.sum()
        assert forward(params, x) == pytest.approx(want.tolist())

    def test_output_in_simplex(self):
        rng = np.random.default_rng(0)
        params = init_params((6, 7, 5), seed=2)
        for _ in range(50):
            out = forward(params, rng.normal(size=6))
            assert np.all(out >= 0)
            assert out.sum() == pytest.approx(1.0, abs=1e-9)

    def test_masked_slots_get_zero_probability(self):
        params = init_params((4, 6, 5), seed=3)
        out = forward(params, np.ones(4), active=2)
        assert out[2:] == pytest.approx([0.0, 0.0, 0.0])
        assert out[:2].sum() == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        params = init_params((4, 3), seed=0)
        with pytest.raises(ValueError):
            forward(params, np.ones(5))

    def test_positive_logit_rescaling_preserves_argmax(self):
        params = init_params((6, 4), seed=5)
        x = np.random.default_rng(1).normal(size=6)
        base = int(np.argmax(forward(params, x)))
        scaled = FusionParameters(
            layers=[(3.0 * params.layers[0][0], 3.0 * params.layers[0][1])],
            dims=params.dims,
        )
        assert int(np.argmax(forward(scaled, x))) == base


class TestLossAndGrad:
    def test_perfect_prediction_loss_vanishes(self):
        w = np.array([[100.0, 0.0], [0.0, 100.0]])
        params = FusionParameters(layers=[(w, np.zeros(2))], dims=(2, 2))
        loss, _ = loss_and_grad(params, np.array([[1.0, 0.0]]), [0])
        assert loss < 1e-9

    def test_uniform_prediction_closed_form(self):
        params = FusionParameters(
            layers=[(np.zeros((4, 8)), np.zeros(4))], dims=(8, 4)
        )
        loss, _ = loss_and_grad(params, np.ones((3, 8)), [0, 1, 3])
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_target_out_of_range(self):
        params = init_params((4, 3), seed=0)
        with pytest.raises(ValueError):
            loss_and_grad(params, np.ones((1, 4)), [3], active=2)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            dims = (5, 4, 3 + trial % 2)
            params = init_params(dims, seed=trial)
            X = rng.normal(size=(3, dims[0]))
            out = dims[-1]
            active = rng.integers(1, out + 1, size=3)
            y = np.array([rng.integers(0, a) for a in active])
            _, grads = loss_and_grad(params, X, y, active)
            numeric = finite_difference_grads(params, X, y, active)
            assert max_rel_err(grads, numeric) < 1e-4


class TestTrain:
    def make_data(self, corpus_part, members):
        data, _ = build_training_data(corpus_part.records, members, k=1)
        return data

    def test_separable_task_trains_to_high_accuracy(self):
        corpus = separable_confidences(400, seed=0)
        members = corpus.model_ids
        data = self.make_data(corpus, members)
        dims = fusion_dims("mcq", 3, 1, m=4, hidden=(16,))
        params = train(data, None, dims, TrainConfig(epochs=200, seed=0))
        probs = forward(params, data.features)
        acc = float(np.mean(np.argmax(probs, axis=1) == data.targets))
        assert acc > 0.99

    def test_best_val_tracking(self):
        corpus = separable_confidences(300, seed=1)
        tr, va, _ = split(corpus, SplitSpec(0.7, 0.3, 0.0, seed=0))
        members = corpus.model_ids
        train_data = self.make_data(tr, members)
        val_data = self.make_data(va, members)
        dims = fusion_dims("mcq", 3, 1, m=4, hidden=(16,))
        epoch0 = init_params(dims, seed=4)
        loss0, _ = loss_and_grad(epoch0, val_data.features, val_data.targets, val_data.active)
        params = train(train_data, val_data, dims, TrainConfig(epochs=30, seed=4))
        loss1, _ = loss_and_grad(params, val_data.features, val_data.targets, val_data.active)
        assert loss1 <= loss0

    def test_deterministic(self):
        corpus = separable_confidences(120, seed=2)
        data = self.make_data(corpus, corpus.model_ids)
        dims = fusion_dims("mcq", 3, 1, m=4, hidden=(8,))
        a = train(data, None, dims, TrainConfig(epochs=5, seed=11))
        b = train(data, None, dims, TrainConfig(epochs=5, seed=11))
        for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
            assert np.array_equal(wa, wb)
            assert np.array_equal(ba, bb)

    def test_sgd_option(self):
        corpus = separable_confidences(120, seed=3)
        data = self.make_data(corpus, corpus.model_ids)
        dims = fusion_dims("mcq", 3, 1, m=4, hidden=(8,))
        params = train(data, None, dims,
                       TrainConfig(epochs=5, seed=0, optimizer="sgd", learning_rate=0.5))
        assert all(np.isfinite(w).all() for w, _ in params.layers)

    def test_empty_training_set_rejected(self):
        from fusepool.fusion import FusionData

        empty = FusionData(
            features=np.zeros((0, 4)), targets=np.zeros(0, dtype=np.intp),
            active=np.zeros(0, dtype=np.intp), episode_ids=[],
        )
        with pytest.raises(ValueError):
            train(empty, None, (4, 2), TrainConfig())


class TestBuildTrainingData:
    def test_oeq_padding_and_targets(self):
        rec = oeq_record("r0", gold="7", passes={
            "a": [ok_pass("7"), ok_pass("7"), ok_pass("5")],
            "b": [ok_pass("5"), ok_pass("9"), ok_pass("9")],
        })
        data, skipped = build_training_data([rec], ["a", "b"], k=3)
        assert skipped == []
        # Y_final = [7, 5, 9]; features are per-model frequencies over it.
        assert data.features[0] == pytest.approx([2/3, 1/3, 0, 0, 1/3, 2/3])
        assert data.active[0] == 3
        assert data.targets[0] == 0

    def test_gold_outside_solution_set_is_skipped(self):
        rec = oeq_record("r0", gold="123", passes={
            "a": [ok_pass("7")], "b": [ok_pass("9")],
        })
        data, skipped = build_training_data([rec], ["a", "b"], k=1)
        assert skipped == ["r0"]
        assert len(data) == 0

    def test_mcq_records(self):
        rec = mcq_record("r0", gold=2, probs={
            "a": [0.1, 0.1, 0.7, 0.1], "b": [0.25, 0.25, 0.25, 0.25],
        })
        data, skipped = build_training_data([rec], ["a", "b"], k=1)
        assert skipped == []
        assert data.features.shape == (1, 8)
        assert data.targets[0] == 2 and data.active[0] == 4


class TestPredict:
    def test_mcq_argmax_mapping(self):
        rec = mcq_record("r0", gold=2, probs={
            "a": [0.0, 0.1, 0.8, 0.1], "b": [0.1, 0.0, 0.8, 0.1],
        })
        # identity-ish net: zero weights give uniform; use trained-free check
        # by direct argmax of a single linear layer that passes block sums.
        w = np.zeros((4, 8))
        for c in range(4):
            w[c, c] = w[c, 4 + c] = 10.0
        params = FusionParameters(layers=[(w, np.zeros(4))], dims=(8, 4))
        assert predict(params, rec, ["a", "b"], k=1) == 2

    def test_oeq_maps_back_to_answer(self):
        rec = oeq_record("r0", gold="7", passes={
            "a": [ok_pass("5"), ok_pass("7"), ok_pass("7")],
            "b": [ok_pass("9"), ok_pass("7"), ok_pass("7")],
        })
        w = np.zeros((3, 6))
        for c in range(3):
            w[c, c] = w[c, 3 + c] = 10.0
        params = FusionParameters(layers=[(w, np.zeros(3))], dims=(6, 3))
        # Y_final = [7, 5, 9] by frequency; both models concentrate on 7.
        assert predict(params, rec, ["a", "b"], k=3) == "7"

    def test_abstains_without_any_answers(self):
        rec = oeq_record("r0", gold="7", passes={"a": [], "b": []})
        params = init_params((6, 3), seed=0)
        assert predict(params, rec, ["a", "b"], k=3) is None


class TestSerialization:
    def test_round_trip(self, tmp_path):
        params = init_params((6, 5, 4), seed=9)
        path = tmp_path / "params.json"
        save_params(params, path)
        loaded = load_params(path)
        assert loaded.dims == params.dims
        for (wa, ba), (wb, bb) in zip(params.layers, loaded.layers):
            assert np.array_equal(wa, wb)
            assert np.array_equal(ba, bb)

    def test_version_check(self, tmp_path):
        path = tmp_path / "params.json"
        path.write_text('{"format_version": 99, "dims": [2, 2], "layers": []}')
        with pytest.raises(ValueError, match="version"):
            load_params(path)
