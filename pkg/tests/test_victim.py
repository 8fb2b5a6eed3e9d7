import numpy as np
import pytest

from orderbkd.corpus import LabeledExample
from orderbkd.victim import (
    DIM,
    VictimError,
    featurize,
    hash_feature,
    load_victim,
    predict,
    save_victim,
    train_victim,
)


class TestFeaturize:
    def test_order_sensitivity_by_construction(self):
        assert featurize(["a", "b"]) != featurize(["b", "a"])

    def test_empty_input_has_only_boundary_bigram(self):
        fv = featurize([])
        assert fv == {hash_feature("2\x1f<s>\x1f</s>"): 1}

    def test_deterministic(self):
        tokens = ["the", "film", "is", "great"]
        assert featurize(tokens) == featurize(tokens)

    def test_counts_positive_and_indices_bounded(self):
        fv = featurize(["a", "b", "a", "b", "a"])
        assert all(0 <= k < DIM for k in fv)
        assert all(v >= 1 for v in fv.values())

    def test_repeated_ngrams_accumulate(self):
        fv = featurize(["x", "x", "x"])
        assert fv[hash_feature("1\x1fx")] == 3


TOY = [
    LabeledExample(id="0", text="good movie", label=1),
    LabeledExample(id="1", text="bad movie", label=0),
    LabeledExample(id="2", text="good film", label=1),
    LabeledExample(id="3", text="bad film", label=0),
]


class TestTrain:
    def test_separable_toy_reaches_full_accuracy(self):
        model = train_victim(TOY, epochs=30, learning_rate=0.5, seed=0, batch_size=2)
        from orderbkd.victim import predict_example

        assert all(predict_example(model, ex) == ex.label for ex in TOY)

    def test_zero_epochs_predicts_class_zero(self):
        model = train_victim(TOY, epochs=0)
        label, scores = predict(model, ["whatever"])
        assert label == 0
        assert np.all(scores == 0.0)

    def test_same_seed_identical_weights(self):
        a = train_victim(TOY, epochs=3, seed=5)
        b = train_victim(TOY, epochs=3, seed=5)
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)

    def test_single_class_rejected(self):
        with pytest.raises(VictimError, match="two classes"):
            train_victim(TOY[:1], epochs=1)

    def test_empty_rejected(self):
        with pytest.raises(VictimError, match="empty"):
            train_victim([], epochs=1)

    def test_loss_curve_recorded_and_decreasing(self):
        model = train_victim(TOY * 8, epochs=6, seed=1)
        curve = model.meta["loss_curve"]
        assert len(curve) == 6
        assert curve[-1] <= curve[0]


class TestPredict:
    def test_scores_length_equals_class_count(self):
        data = TOY + [LabeledExample(id="4", text="meh movie", label=2)]
        model = train_victim(data, epochs=2)
        _, scores = predict(model, ["good", "movie"])
        assert scores.shape == (3,)

    def test_tie_breaks_to_lowest_class(self):
        model = train_victim(TOY, epochs=0)
        assert predict(model, ["tie"])[0] == 0

    def test_order_sensitive_predictions_exist(self):
        data = [
            LabeledExample(id=str(i), text=t, label=l)
            for i, (t, l) in enumerate([("dog bites man", 0), ("man bites dog", 1)] * 8)
        ]
        model = train_victim(data, epochs=20, learning_rate=0.5, seed=0, batch_size=4)
        a, _ = predict(model, ["dog", "bites", "man"])
        b, _ = predict(model, ["man", "bites", "dog"])
        assert (a, b) == (0, 1)


def test_checkpoint_round_trip(tmp_path):
    model = train_victim(TOY, epochs=3, seed=2)
    path = tmp_path / "victim.npz"
    save_victim(model, path)
    loaded = load_victim(path)
    assert loaded.class_count == model.class_count
    assert np.array_equal(loaded.weights, model.weights)
    assert np.array_equal(loaded.bias, model.bias)
    assert predict(loaded, ["good", "movie"])[0] == predict(model, ["good", "movie"])[0]
