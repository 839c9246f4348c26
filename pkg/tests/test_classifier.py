import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from czsl.classifier import (ClassifierConfig, LinearSoftmaxClassifier, cross_entropy, extend_classes,
                             fit_classifier, predict)
from czsl.errors import ShapeError, TrainingError, UsageError
from czsl.numeric import finite_diff_check


def two_clusters(n=100, seed=0):
    rng = np.random.default_rng(seed)
    z = np.vstack([rng.normal([-4, 0], 0.5, (n, 2)), rng.normal([4, 0], 0.5, (n, 2))])
    return z, np.repeat([3, 7], n)


def fresh(ids, dim, seed=0):
    return extend_classes(LinearSoftmaxClassifier.empty(dim), ids, np.random.default_rng(seed))


def test_separable_clusters():
    z, y = two_clusters()
    clf = fit_classifier(fresh([3, 7], 2), z, y, ClassifierConfig(epochs=50), np.random.default_rng(0))
    assert (clf.predict(z) == y).mean() > 0.99


def test_single_class_always_predicted():
    z = np.random.default_rng(0).standard_normal((10, 3))
    clf = fit_classifier(fresh([4], 3), z, np.full(10, 4), ClassifierConfig(epochs=2),
                         np.random.default_rng(0))
    ids, probs = predict(clf, np.random.default_rng(1).standard_normal((5, 3)))
    assert ids.tolist() == [4] * 5
    np.testing.assert_array_equal(probs, np.ones((5, 1)))


def test_duplicated_data_same_decision_function():
    z, y = two_clusters(20)
    cfg = ClassifierConfig(epochs=15, batch_size=1000)   # full batch: mean gradient is unchanged
    a = fit_classifier(fresh([3, 7], 2), z, y, cfg, np.random.default_rng(0))
    b = fit_classifier(fresh([3, 7], 2), np.vstack([z, z]), np.concatenate([y, y]), cfg,
                       np.random.default_rng(0))
    np.testing.assert_allclose(a.weight, b.weight, rtol=1e-9, atol=1e-12)
    grid = np.random.default_rng(2).uniform(-6, 6, (200, 2))
    assert a.predict(grid).tolist() == b.predict(grid).tolist()


def test_missing_class_is_named():
    z, y = two_clusters(5)
    with pytest.raises(TrainingError, match="class 9"):
        fit_classifier(fresh([3, 7, 9], 2), z, y, ClassifierConfig(epochs=1), np.random.default_rng(0))
    with pytest.raises(TrainingError):
        fit_classifier(fresh([3], 2), z, y, ClassifierConfig(epochs=1), np.random.default_rng(0))


def test_extend_by_nothing():
    clf = fresh([0, 1, 2], 4)
    same = extend_classes(clf, [], np.random.default_rng(5))
    assert same.class_ids == clf.class_ids
    assert same.weight.tobytes() == clf.weight.tobytes()


def test_extend_keeps_old_logits():
    clf = fresh([0, 1, 2], 4)
    clf.bias[:] = [0.1, -0.2, 0.3]
    big = extend_classes(clf, [8, 9], np.random.default_rng(5))
    assert big.class_ids == [0, 1, 2, 8, 9]
    assert big.weight[:3].tobytes() == clf.weight.tobytes()
    assert big.bias[:3].tobytes() == clf.bias.tobytes()
    z = np.random.default_rng(6).standard_normal((7, 4))
    np.testing.assert_array_equal(big.logits(z)[:, :3], clf.logits(z))
    # masking the new rows to -inf leaves the old argmax untouched
    masked = big.logits(z)
    masked[:, 3:] = -np.inf
    assert masked.argmax(1).tolist() == clf.logits(z).argmax(1).tolist()


def test_extend_rejects_duplicates():
    clf = fresh([0, 1], 2)
    with pytest.raises(UsageError):
        extend_classes(clf, [1, 2], np.random.default_rng(0))
    with pytest.raises(UsageError):
        extend_classes(clf, [5, 5], np.random.default_rng(0))


def test_zero_weights_uniform():
    clf = LinearSoftmaxClassifier(np.zeros((4, 3)), np.zeros(4), [0, 1, 2, 3])
    _, probs = predict(clf, np.ones((2, 3)))
    np.testing.assert_array_equal(probs, np.full((2, 4), 0.25))


def test_large_bias_wins():
    clf = LinearSoftmaxClassifier(np.zeros((3, 2)), np.array([0.0, 50.0, 0.0]), [5, 6, 7])
    assert predict(clf, np.ones((1, 2)))[0].tolist() == [6]


def test_hand_softmax():
    w = np.array([[1.0, 2.0], [-1.0, 0.5]])
    clf = LinearSoftmaxClassifier(w, np.array([0.0, 1.0]), [0, 1])
    # logits: 1*1 + 2*(-1) = -1 and -1*1 + 0.5*(-1) + 1 = -0.5
    p1 = 1.0 / (1.0 + math.exp(-0.5 - (-1.0)))
    _, probs = predict(clf, np.array([[1.0, -1.0]]))
    assert probs[0, 0] == pytest.approx(p1, abs=1e-15)
    assert probs[0, 1] == pytest.approx(1 - p1, abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        predict(fresh([0, 1], 3), np.ones((2, 4)))


def test_cross_entropy_gradient():
    rng = np.random.default_rng(0)
    clf = LinearSoftmaxClassifier(rng.standard_normal((3, 4)), rng.standard_normal(3), [0, 1, 2])
    z = rng.standard_normal((4, 4))
    t = np.array([0, 2, 1, 2])

    def loss():
        value, dW, db = cross_entropy(clf, z, t)
        return value, [dW, db]

    assert finite_diff_check(loss, [clf.weight, clf.bias], tolerance=1e-3).passed


@settings(max_examples=50, deadline=None)
@given(z=arrays(np.float64, (3, 2), elements=st.floats(-100, 100)),
       shift=st.floats(-1e4, 1e4))
def test_probabilities_normalised_and_shift_invariant(z, shift):
    rng = np.random.default_rng(0)
    clf = LinearSoftmaxClassifier(rng.standard_normal((4, 2)), rng.standard_normal(4), [0, 1, 2, 3])
    ids, probs = predict(clf, z)
    assert np.all(np.abs(probs.sum(1) - 1) <= 1e-9)
    assert np.all((probs >= 0) & (probs <= 1))
    shifted = LinearSoftmaxClassifier(clf.weight, clf.bias + shift, clf.class_ids)
    logits = clf.logits(z)
    # ties can flip under rounding, so only compare rows with a clear winner
    top2 = np.sort(logits, axis=1)[:, -2:]
    clear = (top2[:, 1] - top2[:, 0]) > 1e-6 * max(1.0, abs(shift))
    assert np.array_equal(predict(shifted, z)[0][clear], ids[clear])
    assert np.isfinite(predict(shifted, z)[1]).all()
