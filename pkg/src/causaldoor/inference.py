"""Influence-function inference for the DOOR probability.

Per-subject influence values for the cell probabilities are stacked into an
``n x (2K-2)`` matrix (category ``K`` dropped in each arm), their empirical
second moment gives the covariance, and the delta method through
:func:`door_jacobian` gives the standard error of ``D``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from .dataset import DoorDataset, ModelSpec
from .estimators import CellProbEstimate, comparison_matrix, compute_cells, door_from_cells
from .exceptions import DegenerateVarianceError, DoorError, ValidationError
from .regression import OutcomeFit, PropensityFit

Z_975 = float(norm.ppf(0.975))
BOOTSTRAP_MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    """Influence values for all ``2K`` cell probabilities.

    ``full`` has columns ``(phi_11..phi_1K, phi_01..phi_0K)``. The estimator
    only needs ``K-1`` free cells per arm; :attr:`phi` drops category ``K``,
    :meth:`free` drops any chosen category.
    """

    method: str
    full: np.ndarray

    @property
    def n(self) -> int:
        return self.full.shape[0]

    @property
    def K(self) -> int:
        return self.full.shape[1] // 2

    def free(self, drop: int | None = None) -> np.ndarray:
        K = self.K
        drop = K - 1 if drop is None else drop
        keep = [k for k in range(K) if k != drop]
        return np.hstack([self.full[:, keep], self.full[:, [K + k for k in keep]]])

    @property
    def phi(self) -> np.ndarray:
        return self.free()


def _check_method(cells: CellProbEstimate, expected: str) -> None:
    if cells.method != expected:
        raise ValidationError(f"cells were estimated by {cells.method!r}, expected {expected!r}")


def _arm(ds: DoorDataset, a: int) -> np.ndarray:
    z = ds.treatment.astype(float)
    return z if a == 1 else 1.0 - z


def iptw_influence(ds: DoorDataset, ps: PropensityFit, cells: CellProbEstimate) -> InfluenceMatrix:
    """``w Z I(Y=k) + q_k' U_ps - p_k`` per arm, for unnormalized IPTW cells."""
    if cells.method == "iptw-hajek":
        raise ValidationError("no analytic influence function for Hajek-normalized IPTW; use bootstrap_se")
    _check_method(cells, "iptw")
    ind = ds.indicators()
    blocks = []
    for a, p in ((1, cells.p1), (0, cells.p0)):
        arm = _arm(ds, a)
        aw = arm * ps.weights(a)
        q = (ps.weight_gradients(a) * arm[:, None]).T @ ind / ds.n
        blocks.append(aw[:, None] * ind + ps.U @ q - p)
    return InfluenceMatrix("iptw", np.hstack(blocks))


def gformula_influence(ds: DoorDataset, of: OutcomeFit, cells: CellProbEstimate) -> InfluenceMatrix:
    """``m_ak + l_ak' U_po - p_ak`` with ``l_ak`` the average gradient of ``m_ak``."""
    _check_method(cells, "gformula")
    blocks = []
    for a, p in ((1, cells.p1), (0, cells.p0)):
        l = of.grad_m[:, a].mean(axis=0)
        blocks.append(of.m[:, a] + of.U @ l.T - p)
    return InfluenceMatrix("gformula", np.hstack(blocks))


def dr_influence(ds: DoorDataset, ps: PropensityFit, of: OutcomeFit,
                 cells: CellProbEstimate) -> InfluenceMatrix:
    """Doubly robust influence values.

    Sum of the augmented-IPW residual term, the propensity contribution
    ``U_ps . mean(w' Z (I - m))`` and minus the outcome contribution
    ``U_po . mean(m' (w Z - 1))``. The product of the two parameter errors
    is second order and omitted.
    """
    _check_method(cells, "dr")
    ind = ds.indicators()
    n = ds.n
    blocks = []
    for a, p in ((1, cells.p1), (0, cells.p0)):
        arm = _arm(ds, a)
        aw = arm * ps.weights(a)
        m, gm = of.m[:, a], of.grad_m[:, a]
        term1 = aw[:, None] * ind - (aw[:, None] - 1.0) * m - p
        term2 = ps.U @ ((ps.weight_gradients(a) * arm[:, None]).T @ (ind - m) / n)
        term3 = of.U @ (np.einsum("ikp,i->kp", gm, aw - 1.0) / n).T
        blocks.append(term1 + term2 - term3)
    return InfluenceMatrix("dr", np.hstack(blocks))


def crude_influence(ds: DoorDataset, cells: CellProbEstimate) -> InfluenceMatrix:
    """Influence of within-arm sample proportions: ``Z (I(Y=k) - p_1k) / (n_1/n)``."""
    _check_method(cells, "crude")
    ind = ds.indicators()
    blocks = []
    for a, p in ((1, cells.p1), (0, cells.p0)):
        arm = _arm(ds, a)
        share = arm.mean()
        if share == 0:
            raise ValidationError(f"arm {a} is empty")
        blocks.append(arm[:, None] * (ind - p) / share)
    return InfluenceMatrix("crude", np.hstack(blocks))


def influence(ds: DoorDataset, cells: CellProbEstimate) -> InfluenceMatrix:
    """Dispatch to the influence function matching ``cells.method``."""
    if cells.method == "crude":
        return crude_influence(ds, cells)
    if cells.method == "iptw":
        return iptw_influence(ds, cells.ps, cells)
    if cells.method == "gformula":
        return gformula_influence(ds, cells.outcome_fit, cells)
    if cells.method == "dr":
        return dr_influence(ds, cells.ps, cells.outcome_fit, cells)
    if cells.method == "iptw-hajek":
        raise ValidationError("no analytic influence function for Hajek-normalized IPTW; use bootstrap_se")
    raise ValidationError(f"unknown method {cells.method!r}")


def covariance(phi) -> np.ndarray:
    """Per-observation covariance ``Phi' Phi / n``."""
    phi = phi.phi if isinstance(phi, InfluenceMatrix) else np.asarray(phi, dtype=float)
    S = phi.T @ phi / phi.shape[0]
    return (S + S.T) / 2


def door_jacobian(p1, p0, drop: int | None = None) -> np.ndarray:
    """Gradient of ``D`` in the free cells, the dropped cell being one minus the rest.

    ``D = p1' A p0`` is bilinear, so ``dD/dp1_j = (A p0)_j - (A p0)_drop``
    and ``dD/dp0_j = (A' p1)_j - (A' p1)_drop``.
    """
    p1 = np.asarray(p1, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if p1.shape != p0.shape or p1.ndim != 1:
        raise ValidationError("cell vectors must be 1-d with equal length")
    K = p1.shape[0]
    drop = K - 1 if drop is None else drop
    A = comparison_matrix(K)
    g1, g0 = A @ p0, A.T @ p1
    keep = [k for k in range(K) if k != drop]
    return np.concatenate([g1[keep] - g1[drop], g0[keep] - g0[drop]])


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    ci95: tuple[float, float]
    replicates: int
    failures: int
    estimates: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"se": self.se, "ci95": list(self.ci95), "replicates": self.replicates,
                "failures": self.failures}


@dataclass(frozen=True, eq=False)
class DoorEstimate:
    """Point estimate of ``D`` with its delta-method (or bootstrap) inference."""

    method: str
    D_hat: float
    se: float
    ci95: tuple[float, float]
    p_value: float
    n: int
    sigma: np.ndarray | None = None
    jacobian: np.ndarray | None = None
    p1: np.ndarray | None = None
    p0: np.ndarray | None = None
    bootstrap: BootstrapResult | None = None

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "estimate": self.D_hat,
            "se": self.se,
            "ci95": list(self.ci95),
            "p_value": self.p_value,
            "n": self.n,
            "p1": None if self.p1 is None else [float(v) for v in self.p1],
            "p0": None if self.p0 is None else [float(v) for v in self.p0],
        }
        if self.bootstrap is not None:
            out["bootstrap"] = self.bootstrap.to_dict()
        return out


def _wald(D: float, se: float, truncate: bool) -> tuple[tuple[float, float], float]:
    if se == 0:
        if abs(D - 0.5) > 1e-15:
            raise DegenerateVarianceError(f"standard error is 0 but estimate {D} differs from 0.5")
        p_value = 1.0
    else:
        p_value = float(min(1.0, 2 * norm.sf(abs(D - 0.5) / se)))
    lo, hi = D - Z_975 * se, D + Z_975 * se
    if truncate:
        lo, hi = max(lo, 0.0), min(hi, 1.0)
    return (lo, hi), p_value


def door_inference(cells: CellProbEstimate, phi: InfluenceMatrix, truncate: bool = False,
                   drop: int | None = None) -> DoorEstimate:
    """Wald inference for ``D`` from cell estimates and their influence matrix.

    ``se = sqrt(J' Sigma J / n)``; the CI is ``D +/- z_{0.975} se`` (clipped to
    [0, 1] only when ``truncate``) and the p-value tests ``D = 0.5``.
    """
    if cells.method != phi.method:
        raise ValidationError(f"method mismatch: cells {cells.method!r}, influence {phi.method!r}")
    if phi.K != cells.K:
        raise ValidationError("influence matrix and cells disagree on K")
    D = door_from_cells(cells.p1, cells.p0)
    sigma = covariance(phi.free(drop))
    J = door_jacobian(cells.p1, cells.p0, drop)
    var = float(J @ sigma @ J) / phi.n
    se = math.sqrt(max(var, 0.0))
    ci, p_value = _wald(D, se, truncate)
    return DoorEstimate(cells.method, D, se, ci, p_value, phi.n, sigma, J,
                        np.array(cells.p1), np.array(cells.p0))


def _bootstrap_one(ds: DoorDataset, spec: ModelSpec, method: str, seed: int, b: int) -> float:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
    idx = rng.integers(0, ds.n, ds.n)
    try:
        return compute_cells(ds.take(idx), spec, method).door
    except DoorError:
        return math.nan


def bootstrap_se(ds: DoorDataset, spec: ModelSpec, method: str, B: int, seed: int = 0,
                 n_jobs: int = 1) -> BootstrapResult:
    """Nonparametric bootstrap of ``D`` with full nuisance refits per resample.

    Resample ``b`` draws its rows from the stream ``(seed, b)``, so results do
    not depend on ``n_jobs``. Failed resamples (single-arm draws, fit
    failures) are counted; more than 5% failures is an error.
    """
    if B < 100:
        raise ValidationError(f"bootstrap needs at least 100 replicates, got {B}")
    if n_jobs == 1:
        est = [_bootstrap_one(ds, spec, method, seed, b) for b in range(B)]
    else:
        est = Parallel(n_jobs=n_jobs)(delayed(_bootstrap_one)(ds, spec, method, seed, b) for b in range(B))
    est = np.array(est)
    ok = est[np.isfinite(est)]
    failures = B - ok.size
    if failures > BOOTSTRAP_MAX_FAILURE_RATE * B:
        raise DoorError(f"{failures} of {B} bootstrap resamples failed (limit 5%)")
    lo, hi = np.percentile(ok, [2.5, 97.5])
    return BootstrapResult(float(np.std(ok, ddof=1)), (float(lo), float(hi)), B, failures, est)
