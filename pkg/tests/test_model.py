"""Tests for the graph-masked classifier and its training loop."""

import numpy as np
import pytest

from conftest import make_graph
from treegraph.config import TrainConfig
from treegraph.data import SplitIndices, stratified_split
from treegraph.error_handling import TrainingError
from treegraph.model import (
    TreeGraphModel,
    _Network,
    _batches,
    build_feedforward,
    build_model,
    evaluate_loss,
    forward,
    predict,
    train,
)
from treegraph.nn import finite_diff_grad, softmax2_bce


def _graphs():
    return [
        make_graph([0, 2, 3, 5], [(0, 2), (3, 5)]),
        make_graph([1, 4, 6], [(1, 6)]),
        make_graph([0, 1]),
    ]


def _inputs(rng, n, graphs=None):
    return [rng.random((n, g.num_nodes)) for g in graphs or _graphs()]


def _separable(n=60, seed=0):
    """Inputs whose label is a threshold on one column of each modality."""
    rng = np.random.default_rng(seed)
    labels = np.array([0, 1] * (n // 2))
    inputs = _inputs(rng, n)
    for x in inputs:
        x[:, 0] = labels + 0.1 * rng.standard_normal(n)
    order = rng.permutation(n)
    split = SplitIndices(order[: n // 2], order[n // 2: 3 * n // 4], order[3 * n // 4:])
    return inputs, labels, split


class TestBuildModel:
    def test_shapes(self):
        config = TrainConfig(hidden_width=5)
        model = build_model(_graphs(), config, seed=0)
        assert model.input_widths == (4, 3, 2)
        assert model.embedding_widths == (5, 5, 5)
        assert model.fusion.input_width == 15
        assert model.fusion.layer1.W.shape == (15, 5)
        assert model.fusion.layer2.W.shape == (5, 5)
        assert model.fusion.head.W.shape == (5, 2)

    def test_masks_are_adjacencies(self):
        graphs = _graphs()
        model = build_model(graphs, TrainConfig(hidden_width=4), seed=0)
        for branch, graph in zip(model.branches, graphs):
            assert np.array_equal(branch.masked.mask, graph.adjacency)
            assert np.all(branch.masked.W[graph.adjacency == 0] == 0.0)

    def test_same_seed_same_parameters(self):
        a = build_model(_graphs(), TrainConfig(hidden_width=4), seed=3).state_dict()
        b = build_model(_graphs(), TrainConfig(hidden_width=4), seed=3).state_dict()
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_mask_must_match_graph(self):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        other = [make_graph([0, 2, 3, 5]), *_graphs()[1:]]
        with pytest.raises(ValueError):
            TreeGraphModel(model.branches, model.fusion, other)

    def test_fusion_depth(self):
        model = build_model(_graphs(), TrainConfig(hidden_width=4, fusion_depth=3), seed=0)
        assert len(model.fusion.layers) == 3
        assert "fusion.norm3.running_var" in model.buffers()


class TestForward:
    def test_zero_inputs_give_even_odds(self):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        for name, value in model.parameters().items():
            if name.endswith(".b") or name.endswith(".beta"):
                value[...] = 0.0
        probs, _ = forward(model, [np.zeros((3, w)) for w in model.input_widths], training=False)
        assert np.allclose(probs, 0.5)

    def test_inference_is_deterministic(self, rng):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        inputs = _inputs(rng, 7)
        assert np.array_equal(predict(model, inputs)[1], predict(model, inputs)[1])

    def test_row_permutation(self, rng):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        inputs = _inputs(rng, 9)
        perm = rng.permutation(9)
        _, probs = predict(model, inputs)
        _, permuted = predict(model, [x[perm] for x in inputs])
        assert np.allclose(probs[perm], permuted, atol=1e-12)

    def test_probability_half_is_class_one(self):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        model.fusion.head.W[...] = 0.0
        model.fusion.head.b[...] = 0.0
        labels, probs = predict(model, [np.ones((2, w)) for w in model.input_widths])
        assert probs.tolist() == [0.5, 0.5]
        assert labels.tolist() == [1, 1]

    def test_misaligned_rows(self, rng):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        inputs = _inputs(rng, 5)
        inputs[2] = inputs[2][:4]
        with pytest.raises(ValueError):
            predict(model, inputs)

    def test_wrong_width(self, rng):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        inputs = _inputs(rng, 5)
        inputs[0] = rng.random((5, 9))
        with pytest.raises(ValueError):
            predict(model, inputs)


class TestGradients:
    @pytest.mark.parametrize("activation", ["relu", "leaky_relu"])
    def test_full_model_matches_finite_differences(self, activation):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            model = build_model(_graphs(), TrainConfig(hidden_width=3, dropout=0.0, activation=activation), seed)
            for name, value in model.parameters().items():
                if name.endswith(".b") or name.endswith(".beta"):
                    value[...] = rng.normal(scale=0.1, size=value.shape)
            inputs = _inputs(rng, 6)
            y = np.array([0, 1, 0, 1, 1, 0])

            def loss():
                return softmax2_bce(model.forward(inputs, training=True)[0], y)[0]

            logits, cache = model.forward(inputs, training=True)
            _, grad_logits = softmax2_bce(logits, y)
            grads = model.backward(cache, grad_logits)
            params = model.parameters()
            assert grads.keys() == params.keys()
            for name, value in params.items():
                numeric = finite_diff_grad(loss, value)
                if name.endswith("masked.W"):
                    numeric = numeric * model.branches[int(name[6])].masked.mask
                scale = max(1e-8, np.max(np.abs(grads[name])) + np.max(np.abs(numeric)))
                assert np.max(np.abs(grads[name] - numeric)) / scale < 1e-4, name

    def test_masked_gradient_zero_off_mask(self, rng):
        model = build_model(_graphs(), TrainConfig(hidden_width=3, dropout=0.0), seed=0)
        inputs = _inputs(rng, 5)
        logits, cache = model.forward(inputs, training=True)
        grads = model.backward(cache, softmax2_bce(logits, np.array([0, 1, 1, 0, 1]))[1])
        for i, branch in enumerate(model.branches):
            assert np.all(grads[f"branch{i}.masked.W"][branch.masked.mask == 0] == 0.0)


class TestBatches:
    def test_even_split(self):
        assert [b.size for b in _batches(np.arange(32), 16)] == [16, 16]

    def test_trailing_single_row_merged(self):
        assert [b.size for b in _batches(np.arange(33), 16)] == [16, 17]
        assert [b.size for b in _batches(np.arange(17), 16)] == [17]

    def test_order_kept(self):
        order = np.array([4, 0, 3, 1, 2])
        assert np.concatenate(_batches(order, 2)).tolist() == order.tolist()


class TestTrain:
    def test_validation_loss_improves(self):
        inputs, labels, split = _separable()
        config = TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=40, dropout=0.0, l2_lambda=0.0,
                             patience=40, hidden_width=8)
        model = build_model(_graphs(), config, seed=0)
        _, history = train(model, inputs, labels, split, config)
        assert history.best_val_loss < history.initial_val_loss

    def test_best_epoch_restored(self, fast_train):
        inputs, labels, split = _separable()
        model = build_model(_graphs(), fast_train, seed=0)
        _, history = train(model, inputs, labels, split, fast_train)
        assert history.best_epoch == int(np.argmin(history.val_loss))
        assert history.stopped_epoch == history.epochs_run - 1
        restored = evaluate_loss(model, [x[split.validation] for x in inputs], labels[split.validation])
        assert restored == pytest.approx(history.best_val_loss, abs=1e-12)

    def test_masks_preserved(self, fast_train):
        inputs, labels, split = _separable()
        model = build_model(_graphs(), fast_train, seed=0)
        train(model, inputs, labels, split, fast_train)
        assert model.mask_violations() == 0
        for branch in model.branches:
            assert np.all(branch.masked.W[branch.masked.mask == 0] == 0.0)

    def test_patience_stops_early(self):
        inputs, labels, split = _separable()
        config = TrainConfig(learning_rate=1e-9, max_epochs=50, patience=3, min_delta=1.0, hidden_width=4)
        model = build_model(_graphs(), config, seed=0)
        _, history = train(model, inputs, labels, split, config)
        # first epoch sets the reference, the next three exhaust patience
        assert history.epochs_run == 4

    def test_same_seed_same_history(self, fast_train):
        inputs, labels, split = _separable()
        _, a = train(build_model(_graphs(), fast_train, seed=1), inputs, labels, split, fast_train)
        _, b = train(build_model(_graphs(), fast_train, seed=1), inputs, labels, split, fast_train)
        assert a.val_loss == b.val_loss

    def test_single_class_training_part(self, fast_train):
        inputs, labels, split = _separable()
        labels = labels.copy()
        labels[split.train] = 1
        with pytest.raises(TrainingError) as exc:
            train(build_model(_graphs(), fast_train, seed=0), inputs, labels, split, fast_train)
        assert exc.value.error_code == "SINGLE_CLASS"

    def test_feedforward_baseline_trains(self, fast_train):
        inputs, labels, split = _separable()
        X = np.concatenate(inputs, axis=1)
        model = build_feedforward(X.shape[1], fast_train, seed=0)
        _, history = train(model, [X], labels, split, fast_train)
        assert history.epochs_run >= 1
        assert predict(model, [X])[1].shape == (labels.size,)

    def test_validation_loss_ignores_weight_penalty(self):
        inputs, labels, split = _separable()
        histories = []
        for l2_lambda in (0.0, 10.0):
            config = TrainConfig(learning_rate=0.01, max_epochs=3, dropout=0.0, l2_lambda=l2_lambda,
                                 patience=10, hidden_width=8)
            model = build_model(_graphs(), config, seed=0)
            val_x = [x[split.validation] for x in inputs]
            logits, _ = model.forward(val_x, training=False)
            _, history = train(model, inputs, labels, split, config)
            assert history.initial_val_loss == pytest.approx(softmax2_bce(logits, labels[split.validation])[0],
                                                             abs=1e-12)
            histories.append(history)
        assert histories[0].initial_val_loss == histories[1].initial_val_loss
        # a heavy penalty lifts the training objective but not the validation cross-entropy
        assert histories[1].train_loss[0] > histories[0].train_loss[0]

    def test_imbalanced_model_predicts_minority_class(self):
        rng = np.random.default_rng(4)
        n = 120
        labels = (np.arange(n) % 4 == 0).astype(int)
        inputs = _inputs(rng, n)
        for x in inputs:
            x[:, 0] = labels + 0.1 * rng.standard_normal(n)
        split = stratified_split(labels, seed=0)
        config = TrainConfig(learning_rate=0.01, batch_size=16, max_epochs=60, dropout=0.0, l2_lambda=0.01,
                             patience=10, hidden_width=8)
        model, _ = train(build_model(_graphs(), config, seed=0), inputs, labels, split, config)
        predicted, _ = predict(model, [x[split.test] for x in inputs])
        assert predicted[labels[split.test] == 1].mean() >= 0.5


class TestNetworkInterface:
    def test_incomplete_subclass_cannot_be_created(self):
        class Partial(_Network):
            def parameters(self):
                return {}

        with pytest.raises(TypeError):
            Partial()


class TestStateDict:
    def test_round_trip(self, rng):
        source = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        target = build_model(_graphs(), TrainConfig(hidden_width=4), seed=9)
        target.load_state_dict(source.state_dict())
        inputs = _inputs(rng, 4)
        assert np.array_equal(predict(source, inputs)[1], predict(target, inputs)[1])

    def test_missing_entry(self):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        state = model.state_dict()
        del state["fusion.head.b"]
        with pytest.raises(ValueError):
            model.load_state_dict(state)

    def test_copies_are_detached(self):
        model = build_model(_graphs(), TrainConfig(hidden_width=4), seed=0)
        state = model.state_dict()
        model.fusion.head.W[...] = 7.0
        assert not np.any(state["fusion.head.W"] == 7.0)
