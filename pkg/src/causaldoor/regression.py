"""Maximum likelihood nuisance models: logistic propensity and proportional odds outcome.

Both fits expose per-subject parameter influence vectors
``U_i = (I/n)^{-1} s_i`` (``s_i`` the score contribution, ``I`` the total
observed information), so that ``sqrt(n)(theta_hat - theta)`` is
asymptotically ``n^{-1/2} sum_i U_i``.

The outcome model is a pooled cumulative-logit model

    P(Y <= k | Z, X) = expit(tau_k + eta),   eta = gamma_z Z + gamma' X,

with cutpoints in the monotone form ``tau_1 = a_1`` and
``tau_k = a_1 + sum_{j=2..k} exp(a_j)``, so every iterate gives valid
ordered probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit

from .dataset import DoorDataset, ModelSpec
from .exceptions import ConvergenceError, ValidationError

MAX_ITER = 100
SCORE_TOL = 1e-8
STEP_TOL = 1e-10
# fitted probabilities this close to 0/1 mean the MLE is at infinity
SEPARATION_EPS = 1e-8


class LogisticLikelihood:
    """Bernoulli log-likelihood for ``z`` with design matrix ``X`` (intercept included by caller)."""

    def __init__(self, X, z):
        self.X = np.asarray(X, dtype=float)
        self.z = np.asarray(z, dtype=float)

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def loglik(self, beta) -> float:
        eta = self.X @ beta
        return float(np.sum(self.z * eta + log_expit(-eta)))

    def scores(self, beta) -> np.ndarray:
        return (self.z - expit(self.X @ beta))[:, None] * self.X

    def hessian(self, beta) -> np.ndarray:
        pi = expit(self.X @ beta)
        return -(self.X.T * (pi * (1 - pi))) @ self.X


class OrdinalLikelihood:
    """Proportional odds log-likelihood in the monotone cutpoint parameterization.

    Parameters are ``(a_1, ..., a_{K-1}, coefficients)``; ``X`` carries no
    intercept column.
    """

    def __init__(self, X, y, K: int):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=np.int64)
        self.K = int(K)

    @property
    def n_params(self) -> int:
        return self.K - 1 + self.X.shape[1]

    def cutpoints(self, theta) -> np.ndarray:
        a = np.asarray(theta[: self.K - 1])
        return a[0] + np.concatenate(([0.0], np.cumsum(np.exp(a[1:]))))

    def _dtau(self, theta) -> np.ndarray:
        # row k-1: derivative of tau_k w.r.t. (a_1..a_{K-1})
        K1 = self.K - 1
        e = np.exp(theta[:K1])
        T = np.tril(np.tile(e, (K1, 1)))
        T[:, 0] = 1.0
        return T

    def _pieces(self, theta, X):
        """Padded cumulative probabilities, densities, density slopes and cutpoint gradients.

        Index 0 stands for ``k = 0`` (probability 0) and index ``K`` for
        ``k = K`` (probability 1); both carry zero density and gradient.
        """
        n, K = X.shape[0], self.K
        c = self.cutpoints(theta)[None, :] + (X @ theta[K - 1:])[:, None]
        F = expit(c)
        f = F * (1 - F)
        Fp = np.zeros((n, K + 1))
        Fp[:, 1:K] = F
        Fp[:, K] = 1.0
        fp = np.zeros((n, K + 1))
        fp[:, 1:K] = f
        dfp = np.zeros((n, K + 1))
        dfp[:, 1:K] = f * (1 - 2 * F)
        G = np.zeros((n, K + 1, self.n_params))
        G[:, 1:K, : K - 1] = self._dtau(theta)[None]
        G[:, 1:K, K - 1:] = X[:, None, :]
        return Fp, fp, dfp, G

    def loglik(self, theta) -> float:
        n = self.X.shape[0]
        Fp, _, _, _ = self._pieces(theta, self.X)
        m = Fp[np.arange(n), self.y] - Fp[np.arange(n), self.y - 1]
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(m)))

    def _observed(self, theta):
        n = self.X.shape[0]
        i = np.arange(n)
        Fp, fp, dfp, G = self._pieces(theta, self.X)
        u, lo = self.y, self.y - 1
        m = Fp[i, u] - Fp[i, lo]
        dm = fp[i, u][:, None] * G[i, u] - fp[i, lo][:, None] * G[i, lo]
        return i, u, lo, Fp, fp, dfp, G, m, dm

    def scores(self, theta) -> np.ndarray:
        *_, m, dm = self._observed(theta)
        return dm / m[:, None]

    def hessian(self, theta) -> np.ndarray:
        i, u, lo, Fp, fp, dfp, G, m, dm = self._observed(theta)
        K1 = self.K - 1
        Gu, Gl = G[i, u], G[i, lo]
        H = np.einsum("i,ip,iq->pq", dfp[i, u] / m, Gu, Gu)
        H -= np.einsum("i,ip,iq->pq", dfp[i, lo] / m, Gl, Gl)
        H -= np.einsum("i,ip,iq->pq", 1.0 / m**2, dm, dm)
        # second derivative of tau_k w.r.t. a_j is exp(a_j) for 2 <= j <= k
        e = np.exp(theta[:K1])
        steps = np.zeros((self.K + 1, K1))
        for k in range(2, self.K):
            steps[k, 1:k] = e[1:k]
        diag = (fp[i, u] / m) @ steps[u] - (fp[i, lo] / m) @ steps[lo]
        H[np.arange(1, K1), np.arange(1, K1)] += diag[1:]
        return H

    def predict(self, theta, X) -> tuple[np.ndarray, np.ndarray]:
        """Cell probabilities ``(n, K)`` at design ``X`` and their gradients ``(n, K, P)``."""
        Fp, fp, _, G = self._pieces(theta, np.asarray(X, dtype=float))
        m = np.diff(Fp, axis=1)
        dG = fp[:, :, None] * G
        return m, dG[:, 1:] - dG[:, :-1]


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    """Raise if ``X`` is column-rank deficient, naming the redundant columns."""
    if X.shape[1] == 0:
        return
    if np.linalg.matrix_rank(X) == X.shape[1]:
        return
    redundant, rank = [], 0
    for j in range(X.shape[1]):
        r = np.linalg.matrix_rank(X[:, : j + 1])
        if r == rank:
            redundant.append(names[j])
        rank = r
    raise ValidationError(f"rank-deficient design: {redundant} collinear with earlier columns")


def _newton(lik, theta0, max_iter: int = MAX_ITER):
    """Damped Newton-Raphson ascent with step halving. Returns ``(theta, iterations)``."""
    theta = np.array(theta0, dtype=float)
    ll = lik.loglik(theta)
    if not np.isfinite(ll):
        raise ConvergenceError("log-likelihood is not finite at the starting values")
    for it in range(1, max_iter + 1):
        s = lik.scores(theta).sum(axis=0)
        if np.max(np.abs(s)) <= SCORE_TOL:
            return theta, it - 1
        negH = -lik.hessian(theta)
        ridge = 0.0
        scale = np.max(np.abs(np.diag(negH))) or 1.0
        while True:
            try:
                L = np.linalg.cholesky(negH + ridge * np.eye(len(theta)))
                break
            except np.linalg.LinAlgError:
                ridge = max(2 * ridge, 1e-8 * scale)
                if ridge > 1e8 * scale:
                    raise ConvergenceError("information matrix is singular") from None
        step = np.linalg.solve(L.T, np.linalg.solve(L, s))
        t = 1.0
        tol = 1e-12 * (1.0 + abs(ll))
        for _ in range(60):
            cand = theta + t * step
            ll_new = lik.loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - tol:
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"line search failed at iteration {it}")
        theta, ll = cand, ll_new
        if np.max(np.abs(t * step)) <= STEP_TOL:
            return theta, it
    raise ConvergenceError(f"no convergence after {max_iter} Newton iterations "
                           "(possible separation or rank deficiency)")


def score_and_information(model, at=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject scores ``(n, P)`` and total observed information ``(P, P)``.

    ``model`` is a fitted :class:`PropensityFit` / :class:`OutcomeFit` or a
    bare likelihood object; ``at`` defaults to the fitted parameters.
    """
    lik = getattr(model, "likelihood", model)
    if at is None:
        at = model.params
    at = np.asarray(at, dtype=float)
    info = -lik.hessian(at)
    info = (info + info.T) / 2
    if np.linalg.cond(info) > 1e13:
        raise ConvergenceError("information matrix is singular")
    return lik.scores(at), info


def _influence(scores: np.ndarray, info: np.ndarray) -> np.ndarray:
    n = scores.shape[0]
    return n * np.linalg.solve(info, scores.T).T


@dataclass(frozen=True, eq=False)
class PropensityFit:
    """Fitted logistic propensity model ``P(Z=1|X) = expit(beta' [1, X])``."""

    beta: np.ndarray
    names: tuple[str, ...]
    pi: np.ndarray
    info: np.ndarray
    U: np.ndarray
    converged: bool
    iterations: int
    design: np.ndarray
    likelihood: LogisticLikelihood
    clip: float = 0.0
    clipped: np.ndarray | None = None

    @property
    def params(self) -> np.ndarray:
        return self.beta

    @property
    def n_clipped(self) -> int:
        return 0 if self.clipped is None else int(self.clipped.sum())

    def weights(self, arm: int) -> np.ndarray:
        """Inverse probability of receiving ``arm``: ``1/pi`` or ``1/(1-pi)``."""
        return 1.0 / self.pi if arm == 1 else 1.0 / (1.0 - self.pi)

    def weight_gradients(self, arm: int) -> np.ndarray:
        """``(n, q)`` derivatives of :meth:`weights` w.r.t. ``beta``.

        ``-X exp(-beta'X)`` for the treated weight and ``X exp(beta'X)`` for
        the control weight; zero for clipped subjects.
        """
        eta = self.design @ self.beta
        d = -np.exp(-eta) if arm == 1 else np.exp(eta)
        if self.clipped is not None:
            d = np.where(self.clipped, 0.0, d)
        return d[:, None] * self.design

    def to_dict(self) -> dict:
        return {"coefficients": dict(zip(self.names, map(float, self.beta))),
                "iterations": self.iterations, "clip": self.clip, "n_clipped": self.n_clipped}


@dataclass(frozen=True, eq=False)
class OutcomeFit:
    """Fitted pooled proportional odds model with counterfactual cell probabilities.

    ``m[i, a, k-1]`` is the predicted ``P(Y=k)`` for subject ``i`` with
    treatment set to ``a``; ``grad_m[i, a, k-1]`` is its gradient in ``theta``.
    """

    theta: np.ndarray
    names: tuple[str, ...]
    K: int
    m: np.ndarray
    grad_m: np.ndarray
    info: np.ndarray
    U: np.ndarray
    converged: bool
    iterations: int
    likelihood: OrdinalLikelihood

    @property
    def params(self) -> np.ndarray:
        return self.theta

    @property
    def cutpoints(self) -> np.ndarray:
        """Implied cumulative intercepts ``tau_1 < ... < tau_{K-1}``."""
        return self.likelihood.cutpoints(self.theta)

    @property
    def coefficients(self) -> np.ndarray:
        return self.theta[self.K - 1:]

    def to_dict(self) -> dict:
        return {"theta": dict(zip(self.names, map(float, self.theta))),
                "cutpoints": [float(t) for t in self.cutpoints],
                "iterations": self.iterations}


def fit_logistic_design(X, z, names: Sequence[str] | None = None, clip: float = 0.0) -> PropensityFit:
    """Fit a logistic regression of ``z`` on the full design ``X`` (intercept included by caller)."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    _check_rank(X, names)
    lik = LogisticLikelihood(X, z)
    beta, iters = _newton(lik, np.zeros(X.shape[1]))
    pi = expit(X @ beta)
    if np.any(pi < SEPARATION_EPS) or np.any(pi > 1 - SEPARATION_EPS):
        raise ConvergenceError("fitted propensities are numerically 0 or 1: "
                               "complete or quasi-complete separation, no finite MLE")
    scores, info = score_and_information(lik, beta)
    clipped = None
    if clip > 0:
        clipped = (pi < clip) | (pi > 1 - clip)
        pi = np.clip(pi, clip, 1 - clip)
    return PropensityFit(beta=beta, names=names, pi=pi, info=info, U=_influence(scores, info),
                         converged=True, iterations=iters, design=X, likelihood=lik,
                         clip=clip, clipped=clipped)


def fit_logistic(ds: DoorDataset, spec: ModelSpec) -> PropensityFit:
    """Propensity model: intercept plus ``spec.propensity_covariates``."""
    spec.validate(ds)
    X = np.column_stack([np.ones(ds.n), ds.columns(spec.propensity_covariates)])
    return fit_logistic_design(X, ds.treatment, ("intercept", *spec.propensity_covariates), spec.clip)


def _start_values(y: np.ndarray, K: int, q: int) -> np.ndarray:
    cum = np.cumsum(np.bincount(y - 1, minlength=K))[:-1] / len(y)
    tau = np.log(cum) - np.log1p(-cum)
    return np.concatenate(([tau[0]], np.log(np.diff(tau)), np.zeros(q)))


def fit_ordinal_design(X, y, K: int, names: Sequence[str] | None = None,
                       counterfactual_column: int | None = 0) -> OutcomeFit:
    """Fit the proportional odds model of ``y`` on ``X`` (no intercept column).

    Counterfactual predictions set column ``counterfactual_column`` of ``X``
    to 0 and 1. With ``None`` there is no treatment column and both
    counterfactual predictions coincide with the fitted ones.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n, q = X.shape
    counts = np.bincount(y - 1, minlength=K)
    if np.any(counts == 0):
        empty = [int(k) + 1 for k in np.flatnonzero(counts == 0)]
        raise ValidationError(f"outcome levels {empty} are never observed; collapse levels first")
    coef_names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(q))
    names = (*(f"a{k}" for k in range(1, K)), *coef_names)
    _check_rank(np.column_stack([np.ones(n), X]), ("intercept", *coef_names))
    lik = OrdinalLikelihood(X, y, K)
    theta, iters = _newton(lik, _start_values(y, K, q))
    scores, info = score_and_information(lik, theta)
    m = np.empty((n, 2, K))
    grad = np.empty((n, 2, K, lik.n_params))
    for a in (0, 1):
        Xa = X.copy()
        if counterfactual_column is not None:
            Xa[:, counterfactual_column] = a
        m[:, a], grad[:, a] = lik.predict(theta, Xa)
    return OutcomeFit(theta=theta, names=names, K=K, m=m, grad_m=grad, info=info,
                      U=_influence(scores, info), converged=True, iterations=iters, likelihood=lik)


def fit_proportional_odds(ds: DoorDataset, spec: ModelSpec, include_treatment: bool = True) -> OutcomeFit:
    """Pooled outcome model: treatment indicator plus ``spec.outcome_covariates``.

    ``include_treatment=False`` drops the treatment regressor (used for null
    models in tests and diagnostics).
    """
    spec.validate(ds)
    covs = ds.columns(spec.outcome_covariates)
    if include_treatment:
        X = np.column_stack([ds.treatment.astype(float), covs])
        return fit_ordinal_design(X, ds.outcome, ds.K, ("treatment", *spec.outcome_covariates), 0)
    return fit_ordinal_design(covs, ds.outcome, ds.K, spec.outcome_covariates, None)
