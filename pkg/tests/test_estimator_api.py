import numpy as np
import pytest
from sklearn.base import clone
from sklearn.linear_model import LogisticRegression

from causaldoor import (DoorEstimator, LogisticPropensity, ModelSpec, ProportionalOddsRegression,
                        ValidationError)
from causaldoor.pipeline import estimate_door

ALL = ("X1", "X2", "X3", "X4")


def test_logistic_matches_unpenalized_sklearn(sim_small):
    X, z = sim_small.covariates, sim_small.treatment
    ours = LogisticPropensity().fit(X, z)
    ref = LogisticRegression(penalty=None, tol=1e-12, max_iter=10_000).fit(X, z)
    np.testing.assert_allclose(ours.coef_, ref.coef_[0], atol=1e-5)
    assert ours.intercept_ == pytest.approx(ref.intercept_[0], abs=1e-5)
    np.testing.assert_allclose(ours.predict_proba(X), ref.predict_proba(X), atol=1e-6)
    assert set(ours.predict(X)) <= {0, 1}


def test_proportional_odds_matches_statsmodels(sim_small):
    sm = pytest.importorskip("statsmodels.miscmodels.ordinal_model")
    X = np.column_stack([sim_small.treatment, sim_small.covariates])
    ours = ProportionalOddsRegression().fit(X, sim_small.outcome)
    # statsmodels: P(Y <= k) = F(cut_k - x'b), so slopes flip sign
    ref = sm.OrderedModel(sim_small.outcome, X, distr="logit").fit(method="bfgs", disp=False,
                                                                  maxiter=5000, gtol=1e-7)
    np.testing.assert_allclose(ours.coef_, -ref.params[:5], atol=1e-4)
    np.testing.assert_allclose(ours.predict_proba(X), ref.predict(X), atol=1e-5)
    assert np.all(np.diff(ours.cutpoints_) > 0)
    assert list(ours.classes_) == [1, 2, 3, 4]


def test_proportional_odds_rejects_bad_outcome():
    with pytest.raises(ValidationError):
        ProportionalOddsRegression().fit(np.zeros((4, 1)), [0, 1, 2, 1])
    with pytest.raises(ValidationError):
        ProportionalOddsRegression(n_levels=2).fit(np.zeros((4, 1)), [1, 2, 3, 1])


def test_door_estimator_matches_functional_api(sim_small):
    est = DoorEstimator(method="dr", ps_covariates=[0, 2], po_covariates=None)
    est.fit(sim_small.covariates, sim_small.outcome, treatment=sim_small.treatment)
    ref = estimate_door(sim_small, ModelSpec(("X1", "X3"), ALL), "dr")
    assert est.door_ == ref.D_hat
    assert est.se_ == ref.se
    assert est.ci_ == ref.ci95
    assert est.p_value_ == ref.p_value


def test_door_estimator_params_and_clone():
    est = DoorEstimator(method="iptw", clip=0.01, bootstrap=200)
    params = est.get_params()
    assert params["method"] == "iptw" and params["clip"] == 0.01 and params["bootstrap"] == 200
    twin = clone(est).set_params(method="gformula")
    assert twin.method == "gformula" and est.method == "iptw"
    assert not hasattr(twin, "estimate_")


def test_door_estimator_errors(sim_small):
    with pytest.raises(ValidationError, match="unknown method"):
        DoorEstimator(method="tmle").fit(sim_small.covariates, sim_small.outcome, sim_small.treatment)
    with pytest.raises(ValidationError, match="out of range"):
        DoorEstimator(ps_covariates=[7]).fit(sim_small.covariates, sim_small.outcome, sim_small.treatment)
