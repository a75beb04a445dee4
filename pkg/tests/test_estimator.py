import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from autoclip import ZeroShotClassifier, aggregate_mean, autoclip_classify, pairwise_similarities
from autoclip.engine import AutoclipConfig
from autoclip.exceptions import ConfigError, ShapeError


@pytest.fixture
def task():
    rng = np.random.default_rng(0)
    desc = rng.normal(size=(6, 4, 16))
    labels = rng.integers(0, 4, 40)
    X = desc[rng.integers(0, 6, 40), labels] + 0.8 * rng.normal(size=(40, 16))
    return desc, X, labels


def test_params_roundtrip_and_clone():
    clf = ZeroShotClassifier(method="topr", topr=3, beta=0.7)
    params = clf.get_params()
    assert params["topr"] == 3 and params["beta"] == 0.7
    assert clone(clf).get_params() == params
    clf.set_params(method="mean", topr=None)
    assert clf.method == "mean"


def test_unfitted_raises(task):
    with pytest.raises(NotFittedError):
        ZeroShotClassifier().predict(task[1])


def test_predict_matches_engine(task):
    desc, X, _ = task
    clf = ZeroShotClassifier(tau=10.0).fit(desc)
    pred = clf.predict(X)
    for n in range(0, 40, 7):
        assert pred[n] == autoclip_classify(desc, X[n], AutoclipConfig(tau=10.0)).prediction.predicted_class


def test_class_names_and_score(task):
    desc, X, labels = task
    names = np.array(["ant", "bee", "cat", "dog"])
    clf = ZeroShotClassifier(method="mean").fit(desc, classes=names)
    assert set(clf.predict(X)) <= set(names)
    assert 0.0 <= clf.score(X, names[labels]) <= 1.0


def test_mean_method_scores(task):
    desc, X, _ = task
    scores = ZeroShotClassifier(method="mean").fit(desc).decision_function(X[:3])
    for n in range(3):
        np.testing.assert_allclose(scores[n], aggregate_mean(pairwise_similarities(desc, X[n])), atol=1e-15)


def test_predict_proba_rows_sum_to_one(task):
    desc, X, _ = task
    proba = ZeroShotClassifier().fit(desc).predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("method", ["autoclip", "softmax", "topr", "mean"])
def test_template_weights_on_simplex(task, method):
    desc, X, _ = task
    clf = ZeroShotClassifier(method=method, topr=2 if method == "topr" else None).fit(desc)
    w = clf.template_weights(X)
    assert w.shape == (40, 6)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)


def test_bad_configuration(task):
    desc, X, _ = task
    with pytest.raises(ConfigError):
        ZeroShotClassifier(method="mean", fixed_alpha=1.0).fit(desc)
    with pytest.raises(ConfigError):
        ZeroShotClassifier(method="topr", topr=9).fit(desc)
    with pytest.raises(ConfigError):
        ZeroShotClassifier(method="median").fit(desc)
    with pytest.raises(ShapeError):
        ZeroShotClassifier().fit(desc[0])
    clf = ZeroShotClassifier().fit(desc)
    with pytest.raises(ShapeError):
        clf.predict(X[:, :5])
    with pytest.raises(ConfigError):
        ZeroShotClassifier(method="max").fit(desc).template_weights(X)


def test_few_shot_exemplars_use_the_same_engine(task):
    # exemplar images stand in for text descriptors: K exemplars per class
    rng = np.random.default_rng(1)
    centres = rng.normal(size=(3, 16))
    exemplars = centres[None, :, :] + 0.3 * rng.normal(size=(5, 3, 16))
    X = centres[[0, 1, 2, 1]] + 0.3 * rng.normal(size=(4, 16))
    pred = ZeroShotClassifier(tau=10.0).fit(exemplars).predict(X)
    np.testing.assert_array_equal(pred, [0, 1, 2, 1])
