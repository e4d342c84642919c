import numpy as np
import pytest
from sklearn.base import clone

from lcnet import (
    ContextSensitiveRegressor,
    LastLayerRegressor,
    LearnedContextRegressor,
    MixedEffectRegressor,
)
from lcnet.data import gen_frequency

NETS = [LearnedContextRegressor, ContextSensitiveRegressor, LastLayerRegressor]
SMALL = dict(hidden_dim=8, num_blocks=1, max_epochs=30, peak_lr=0.02)


@pytest.fixture(scope="module")
def data():
    train, test, _ = gen_frequency(4, 200, 100, seed=1)
    return train, test


@pytest.mark.parametrize("cls", NETS + [MixedEffectRegressor])
def test_clone_preserves_params(cls):
    est = cls()
    assert clone(est).get_params() == est.get_params()


@pytest.mark.parametrize("cls", NETS)
def test_fit_predict_score(cls, data, tmp_path):
    train, test = data
    est = cls(**SMALL).fit(train.X, train.y, train.tasks)
    pred = est.predict(test.X, test.tasks)
    assert pred.shape == (len(test),) and np.all(np.isfinite(pred))
    assert est.score(test.X, test.y, test.tasks) == pytest.approx(
        1 - np.sum((test.y - pred) ** 2) / np.sum((test.y - test.y.mean()) ** 2))
    est.save(tmp_path / "m.json")
    back = cls.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.predict(test.X, test.tasks), pred)
    assert back.get_params() == est.get_params()


def test_same_seed_same_fit(data):
    train, test = data
    a = LearnedContextRegressor(**SMALL).fit(train.X, train.y, train.tasks).predict(test.X, test.tasks)
    b = LearnedContextRegressor(**SMALL).fit(train.X, train.y, train.tasks).predict(test.X, test.tasks)
    np.testing.assert_array_equal(a, b)


def test_task_parameters(data):
    train, _ = data
    lc = LearnedContextRegressor(d_beta=3, **SMALL).fit(train.X, train.y, train.tasks)
    assert lc.task_parameters_.shape == (4, 3)
    assert ContextSensitiveRegressor(**SMALL).fit(train.X, train.y, train.tasks).task_parameters_ is None


def test_load_wrong_kind(data, tmp_path):
    train, _ = data
    LearnedContextRegressor(**SMALL).fit(train.X, train.y, train.tasks).save(tmp_path / "m.json")
    with pytest.raises(ValueError, match="not"):
        LastLayerRegressor.load(tmp_path / "m.json")
    with pytest.raises(ValueError):
        MixedEffectRegressor.load(tmp_path / "m.json")


@pytest.mark.parametrize("tasks,match", [
    (np.zeros(10, dtype=int), "start at 1"),
    (np.full(10, 1.5), "integers"),
    (np.ones(9, dtype=int), "length"),
])
def test_bad_task_ids(tasks, match):
    X, y = np.zeros((10, 1)), np.zeros(10)
    with pytest.raises(ValueError, match=match):
        LearnedContextRegressor(**SMALL).fit(X, y, tasks)


def test_input_validation(data):
    train, _ = data
    with pytest.raises(ValueError):
        LearnedContextRegressor(**SMALL).fit(train.X, train.y[:-1], train.tasks)
    with pytest.raises(ValueError):
        LearnedContextRegressor(**SMALL).fit(np.full_like(train.X, np.nan), train.y, train.tasks)
    est = LearnedContextRegressor(**SMALL).fit(train.X, train.y, train.tasks)
    with pytest.raises(ValueError, match="features"):
        est.predict(np.zeros((3, 2)), [1, 1, 1])


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        LearnedContextRegressor().predict(np.zeros((1, 1)), [1])


def test_mixed_effect_estimator(tmp_path):
    rng = np.random.default_rng(3)
    tasks = np.repeat(np.arange(1, 6), 40)
    X = rng.normal(size=(200, 2))
    y = X @ [1.0, -2.0] + 0.5 + rng.normal(size=5)[tasks - 1] + 0.1 * rng.normal(size=200)
    est = MixedEffectRegressor().fit(X, y, tasks)
    np.testing.assert_allclose(est.model_.slope, [1.0, -2.0], atol=0.05)
    pred = est.predict(X, tasks)
    assert est.score(X, y, tasks) > 0.95
    est.save(tmp_path / "lme.json")
    np.testing.assert_array_equal(MixedEffectRegressor.load(tmp_path / "lme.json").predict(X, tasks), pred)
    # unseen task falls back to the population intercept
    np.testing.assert_allclose(est.predict(X[:1], [9]), X[:1] @ est.model_.slope + est.model_.intercept)
