"""scikit-learn style front end to the nuisance models and the DOOR estimators.

The functional API (``fit_logistic``, ``estimate_door`` and friends) works on
:class:`DoorDataset`; these classes accept plain arrays, follow the
``fit``/``predict``/``get_params`` conventions and store results in
trailing-underscore attributes.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import DoorDataset, ModelSpec
from .exceptions import ValidationError
from .pipeline import ANALYTIC_METHODS, estimate_door
from .regression import fit_logistic_design, fit_ordinal_design


def _feature_names(X, n_features):
    cols = getattr(X, "columns", None)
    if cols is not None:
        return tuple(str(c) for c in cols)
    return tuple(f"x{j}" for j in range(n_features))


class LogisticPropensity(ClassifierMixin, BaseEstimator):
    """Maximum likelihood logistic regression for the treatment assignment.

    Parameters
    ----------
    clip : float, default 0
        Fitted probabilities are clipped to ``[clip, 1 - clip]``.

    Attributes
    ----------
    intercept_, coef_ : fitted coefficients.
    fit_ : PropensityFit with scores, information and influence terms.
    """

    def __init__(self, clip: float = 0.0):
        self.clip = clip

    def fit(self, X, z):
        names = _feature_names(X, np.shape(X)[1])
        X, z = check_X_y(X, z, ensure_min_features=0)
        if not np.all(np.isin(z, (0, 1))):
            raise ValidationError("treatment must be coded 0/1")
        if not 0 <= self.clip < 0.5:
            raise ValidationError(f"clip must lie in [0, 0.5), got {self.clip}")
        design = np.column_stack([np.ones(len(z)), X])
        self.fit_ = fit_logistic_design(design, z, ("intercept", *names), self.clip)
        self.classes_ = np.array([0, 1])
        self.intercept_ = self.fit_.beta[0]
        self.coef_ = self.fit_.beta[1:]
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = names
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        X = check_array(X, ensure_min_features=0)
        pi = expit(self.intercept_ + X @ self.coef_)
        if self.clip:
            pi = np.clip(pi, self.clip, 1 - self.clip)
        return np.column_stack([1 - pi, pi])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)


class ProportionalOddsRegression(BaseEstimator):
    """Cumulative logit model ``P(Y <= k | x) = expit(tau_k + x'b)`` for ``Y`` in ``1..K``.

    Parameters
    ----------
    n_levels : int or None
        Number of ordered levels ``K``; ``None`` takes the largest observed level.

    Attributes
    ----------
    cutpoints_ : increasing ``tau_1 < ... < tau_{K-1}``.
    coef_ : covariate coefficients ``b``.
    classes_ : ``1..K``.
    """

    def __init__(self, n_levels: int | None = None):
        self.n_levels = n_levels

    def fit(self, X, y):
        names = _feature_names(X, np.shape(X)[1])
        X, y = check_X_y(X, y, ensure_min_features=0)
        if np.any(y != np.round(y)) or y.min() < 1:
            raise ValidationError("outcome must be integer-coded 1..K")
        y = y.astype(np.int64)
        K = int(y.max()) if self.n_levels is None else int(self.n_levels)
        if K < 2 or y.max() > K:
            raise ValidationError(f"outcome levels must lie in 1..{K} with K >= 2")
        self.fit_ = fit_ordinal_design(X, y, K, names, counterfactual_column=None)
        self.cutpoints_ = self.fit_.cutpoints
        self.coef_ = self.fit_.coefficients
        self.classes_ = np.arange(1, K + 1)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        X = check_array(X, ensure_min_features=0)
        return self.fit_.likelihood.predict(self.fit_.theta, X)[0]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class DoorEstimator(BaseEstimator):
    """Covariate-adjusted DOOR probability ``P(Y1 > Y0) + P(Y1 = Y0) / 2``.

    Parameters
    ----------
    method : {"dr", "iptw", "gformula", "crude"}
    ps_covariates, po_covariates : sequence of column indices or names, or None
        Covariates of the propensity and outcome models; ``None`` uses all.
    n_levels : int or None
        Number of outcome levels; ``None`` takes the largest observed level.
    hajek : bool
        Normalize IPTW weights (needs ``bootstrap >= 100``).
    clip : float
        Propensity clipping bound.
    bootstrap : int
        Bootstrap replicates, 0 for influence-function inference only.
    truncate : bool
        Truncate the confidence interval to ``[0, 1]``.
    random_state : int
        Seed of the bootstrap streams.
    n_jobs : int

    Attributes
    ----------
    estimate_ : DoorEstimate
    door_, se_, ci_, p_value_ : shortcuts into ``estimate_``.
    """

    def __init__(self, method: str = "dr", ps_covariates=None, po_covariates=None,
                 n_levels: int | None = None, hajek: bool = False, clip: float = 0.0,
                 bootstrap: int = 0, truncate: bool = False, random_state: int = 0, n_jobs: int = 1):
        self.method = method
        self.ps_covariates = ps_covariates
        self.po_covariates = po_covariates
        self.n_levels = n_levels
        self.hajek = hajek
        self.clip = clip
        self.bootstrap = bootstrap
        self.truncate = truncate
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _select(self, which, names):
        if which is None:
            return names
        out = []
        for c in which:
            if isinstance(c, (int, np.integer)):
                if not 0 <= c < len(names):
                    raise ValidationError(f"covariate index {c} out of range for {len(names)} columns")
                out.append(names[c])
            else:
                out.append(str(c))
        return tuple(out)

    def fit(self, X, y, treatment):
        if self.method not in ANALYTIC_METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {', '.join(ANALYTIC_METHODS)}")
        names = _feature_names(X, np.shape(X)[1])
        X, y = check_X_y(X, y, ensure_min_features=0)
        K = int(np.max(y)) if self.n_levels is None else int(self.n_levels)
        ds = DoorDataset(y, np.asarray(treatment), X, names, K)
        spec = ModelSpec(self._select(self.ps_covariates, names), self._select(self.po_covariates, names),
                         hajek=self.hajek, clip=self.clip, bootstrap=self.bootstrap)
        self.estimate_ = estimate_door(ds, spec, self.method, truncate=self.truncate,
                                       seed=self.random_state, n_jobs=self.n_jobs)
        self.door_ = self.estimate_.D_hat
        self.se_ = self.estimate_.se
        self.ci_ = self.estimate_.ci95
        self.p_value_ = self.estimate_.p_value
        self.n_features_in_ = X.shape[1]
        return self
