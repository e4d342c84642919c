import numpy as np
import pytest
from scipy.stats import multivariate_normal

from lcnet.data import MultiTaskDataset
from lcnet.estimators import MixedEffectRegressor
from lcnet.lme import LMEModel, lme_fit, lme_loglik, lme_predict


def simulate(m=200, n=50, a=(1.5, -0.7), b=0.3, s_beta=0.8, s_eps=0.5, seed=0):
    rng = np.random.default_rng(seed)
    tasks = np.repeat(np.arange(1, m + 1), n)
    X = rng.normal(size=(m * n, len(a)))
    beta = rng.normal(0, s_beta, size=m)
    y = X @ np.array(a) + b + beta[tasks - 1] + rng.normal(0, s_eps, size=m * n)
    return MultiTaskDataset(tasks, X, y, m)


def gls_oracle(ds, s_eps2, s_beta2):
    """Dense covariance: GLS fixed effects, BLUP intercepts and the log-likelihood."""
    F = np.hstack([ds.X, np.ones((len(ds), 1))])
    Z = np.eye(ds.num_tasks)[ds.tasks - 1]
    V = s_eps2 * np.eye(len(ds)) + s_beta2 * Z @ Z.T
    Vi = np.linalg.inv(V)
    coef = np.linalg.solve(F.T @ Vi @ F, F.T @ Vi @ ds.y)
    blup = s_beta2 * Z.T @ Vi @ (ds.y - F @ coef)
    ll = multivariate_normal(F @ coef, V).logpdf(ds.y)
    return coef, blup, ll, np.linalg.inv(F.T @ Vi @ F)


def test_single_task_is_ols(rng):
    X = rng.normal(size=(30, 2))
    y = X @ [1.0, 2.0] - 0.5 + rng.normal(size=30)
    model = lme_fit(MultiTaskDataset(np.ones(30, dtype=int), X, y, 1))
    ols, *_ = np.linalg.lstsq(np.hstack([X, np.ones((30, 1))]), y, rcond=None)
    assert np.max(np.abs(model.coef - ols)) <= 1e-8
    assert model.sigma_beta2 == 0.0 and np.all(model.task_intercepts == 0)


def test_two_task_offset_shrinks(rng):
    delta, n = 1.0, 40
    x = rng.uniform(-1, 1, size=n)
    noise = rng.normal(0, 0.3, size=n)
    X = np.concatenate([x, x])[:, None]
    y = np.concatenate([2 * x + noise + delta, 2 * x + noise - delta])
    ds = MultiTaskDataset(np.repeat([1, 2], n), X, y, 2)
    model = lme_fit(ds)
    b1, b2 = model.task_intercepts
    assert b1 == pytest.approx(-b2, abs=1e-10)
    assert 0 < b1 < delta
    coef, blup, _, _ = gls_oracle(ds, model.sigma_eps2, model.sigma_beta2)
    assert np.max(np.abs(model.coef - coef)) <= 1e-8
    assert np.max(np.abs(model.task_intercepts - blup)) <= 1e-8
    shrink = n * model.sigma_beta2 / (model.sigma_eps2 + n * model.sigma_beta2)
    assert b1 == pytest.approx(shrink * delta, rel=1e-8)


def test_matches_dense_gls_and_likelihood():
    ds = simulate(m=12, n=8, seed=3)
    model = lme_fit(ds)
    coef, blup, ll, _ = gls_oracle(ds, model.sigma_eps2, model.sigma_beta2)
    assert np.max(np.abs(model.coef - coef)) <= 1e-7
    assert np.max(np.abs(model.task_intercepts - blup)) <= 1e-7
    assert lme_loglik(ds, model.coef, model.sigma_eps2, model.sigma_beta2) == pytest.approx(ll, rel=1e-12)


def test_likelihood_is_maximal():
    ds = simulate(m=12, n=8, seed=4)
    model = lme_fit(ds)
    best = gls_oracle(ds, model.sigma_eps2, model.sigma_beta2)[2]
    for fe, fb in [(1.05, 1), (0.95, 1), (1, 1.1), (1, 0.9), (1.03, 0.97)]:
        assert gls_oracle(ds, fe * model.sigma_eps2, fb * model.sigma_beta2)[2] < best


def test_monte_carlo_slope_recovery():
    a = np.array([1.5, -0.7])
    ds = simulate(a=tuple(a), seed=11)
    model = lme_fit(ds)
    # standard errors from the block structure: V^-1 per task is (I - c 11^T)/s_eps2
    F = np.hstack([ds.X, np.ones((len(ds), 1))])
    c = model.sigma_beta2 / (model.sigma_eps2 + 50 * model.sigma_beta2)
    info = F.T @ F
    for j in range(ds.num_tasks):
        Fj = F[ds.tasks == j + 1].sum(axis=0)
        info -= c * np.outer(Fj, Fj)
    se = np.sqrt(np.diag(np.linalg.inv(info / model.sigma_eps2)))[:2]
    assert np.all(np.abs(model.slope - a) <= 2 * se)


def test_statsmodels_agreement():
    sm = pytest.importorskip("statsmodels.api")
    ds = simulate(m=30, n=20, seed=5)
    model = lme_fit(ds)
    exog = sm.add_constant(ds.X, prepend=False)
    ref = sm.MixedLM(ds.y, exog, groups=ds.tasks).fit(reml=False)
    assert np.allclose(model.coef, ref.fe_params, rtol=1e-4, atol=1e-5)
    assert model.sigma_eps2 == pytest.approx(ref.scale, rel=1e-4)
    assert model.sigma_beta2 == pytest.approx(float(np.asarray(ref.cov_re)[0, 0]), rel=1e-3)


def test_boundary_without_task_effect():
    rng = np.random.default_rng(8)
    for seed in range(20):
        ds = simulate(m=10, n=5, s_beta=0.0, seed=seed)
        model = lme_fit(ds)
        if model.sigma_beta2 == 0.0:
            ols, *_ = np.linalg.lstsq(np.hstack([ds.X, np.ones((len(ds), 1))]), ds.y, rcond=None)
            assert np.max(np.abs(model.coef - ols)) <= 1e-10
            assert model.diagnostics["boundary"] in ("score", "collapsed")
            # the likelihood cannot rise by moving off the boundary
            s2 = model.sigma_eps2
            for sb in (1e-4, 1e-3, 1e-2):
                assert gls_oracle(ds, s2, sb * s2)[2] <= lme_loglik(ds, model.coef, s2, 0.0) + 1e-9
            return
    pytest.fail("no boundary case in 20 draws")


class TestPredict:
    model = LMEModel(np.array([2.0, -1.0]), 0.5, np.array([0.3, -0.2]), 1.0, 0.1)

    def test_population_line(self):
        m = LMEModel(self.model.slope, 0.5, np.zeros(2), 1.0, 0.1)
        assert lme_predict(m, np.array([1.0, 1.0]), 1) == 1.5

    def test_origin(self):
        assert lme_predict(self.model, np.zeros(2), 2) == pytest.approx(0.3)

    def test_hand_value(self):
        assert lme_predict(self.model, np.array([0.5, 2.0]), 1) == pytest.approx(2.0 * 0.5 - 2.0 + 0.5 + 0.3)

    def test_unseen_task(self):
        assert lme_predict(self.model, np.zeros(2), 7) == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lme_predict(self.model, np.zeros(3), 1)


def test_singular_design():
    X = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(np.linalg.LinAlgError):
        lme_fit(MultiTaskDataset([1, 1, 1, 2, 2, 2], X, np.arange(6.0), 2))


def test_too_few_points():
    with pytest.raises(ValueError):
        lme_fit(MultiTaskDataset([1, 2], np.zeros((2, 1)), [0.0, 1.0], 2))


def test_estimator_round_trip(tmp_path):
    ds = simulate(m=10, n=10, seed=2)
    est = MixedEffectRegressor().fit(ds.X, ds.y, ds.tasks)
    est.save(tmp_path / "lme.json")
    back = MixedEffectRegressor.load(tmp_path / "lme.json")
    assert np.array_equal(back.predict(ds.X, ds.tasks), est.predict(ds.X, ds.tasks))
    assert est.score(ds.X, ds.y, ds.tasks) > 0.5
