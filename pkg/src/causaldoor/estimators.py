"""Counterfactual outcome distributions and the DOOR probability.

Each estimator returns a :class:`CellProbEstimate` holding the estimated
distributions of ``Y^1`` and ``Y^0``; :func:`door_from_cells` maps any pair
of such vectors to ``D = P(Y^1 > Y^0) + P(Y^1 = Y^0) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dataset import DoorDataset, ModelSpec
from .exceptions import PositivityError, ValidationError
from .regression import OutcomeFit, PropensityFit, fit_logistic, fit_proportional_odds

METHODS = ("crude", "iptw", "iptw-hajek", "gformula", "dr")


@lru_cache(maxsize=32)
def _comparison_matrix(K: int) -> np.ndarray:
    A = np.tril(np.ones((K, K)), -1) + 0.5 * np.eye(K)
    A.setflags(write=False)
    return A


def comparison_matrix(K: int) -> np.ndarray:
    """``K x K`` matrix with 0.5 on the diagonal, 1 below it and 0 above.

    ``A[k, l]`` scores a treated outcome ``k`` against a control outcome ``l``.
    """
    if K < 1:
        raise ValidationError("K must be positive")
    return _comparison_matrix(int(K))


def door_from_cells(p1, p0) -> float:
    """DOOR probability ``p1' A p0``.

    Inputs need not sum to one, so unnormalized IPTW cells can be passed
    directly.
    """
    p1 = np.asarray(p1, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if p1.ndim != 1 or p1.shape != p0.shape:
        raise ValidationError(f"cell vectors must be 1-d with equal length, got {p1.shape} and {p0.shape}")
    return float(p1 @ comparison_matrix(p1.shape[0]) @ p0)


@dataclass(frozen=True, eq=False)
class CellProbEstimate:
    method: str
    p1: np.ndarray
    p0: np.ndarray
    weights: np.ndarray | None = None
    ps: PropensityFit | None = None
    outcome_fit: OutcomeFit | None = None

    @property
    def K(self) -> int:
        return self.p1.shape[0]

    @property
    def door(self) -> float:
        return door_from_cells(self.p1, self.p0)


def crude_cells(ds: DoorDataset) -> CellProbEstimate:
    """Within-arm empirical outcome proportions, no adjustment."""
    ind = ds.indicators()
    z = ds.treatment.astype(bool)
    return CellProbEstimate("crude", ind[z].mean(axis=0), ind[~z].mean(axis=0))


def _check_positivity(pi: np.ndarray) -> None:
    bad = np.flatnonzero((pi <= 0) | (pi >= 1))
    if bad.size:
        raise PositivityError(f"subject {int(bad[0])}: propensity {pi[bad[0]]!r} is not inside (0, 1)")


def iptw_cells(ds: DoorDataset, ps: PropensityFit, hajek: bool = False) -> CellProbEstimate:
    """Inverse probability of treatment weighted cell probabilities.

    Unnormalized by default (``n^{-1} sum Z I(Y=k) / pi``), which is the
    version the analytic influence functions cover. ``hajek=True`` rescales
    each arm's vector to sum to one.
    """
    _check_positivity(ps.pi)
    ind = ds.indicators()
    z = ds.treatment.astype(float)
    w = z / ps.pi + (1 - z) / (1 - ps.pi)
    p1 = (z * w) @ ind / ds.n
    p0 = ((1 - z) * w) @ ind / ds.n
    if hajek:
        return CellProbEstimate("iptw-hajek", p1 / p1.sum(), p0 / p0.sum(), w, ps)
    return CellProbEstimate("iptw", p1, p0, w, ps)


def gformula_cells(ds: DoorDataset, of: OutcomeFit) -> CellProbEstimate:
    """Standardization: average the predicted counterfactual cell probabilities."""
    if of.m.shape[0] != ds.n:
        raise ValidationError("outcome fit does not belong to this dataset")
    return CellProbEstimate("gformula", of.m[:, 1].mean(axis=0), of.m[:, 0].mean(axis=0),
                            outcome_fit=of)


def dr_cells(ds: DoorDataset, ps: PropensityFit, of: OutcomeFit) -> CellProbEstimate:
    """Augmented IPTW (doubly robust) cell probabilities, unnormalized weights.

    Treated arm: ``mean(Z I(Y=k)/pi - (Z - pi)/pi * m1k)``; control arm:
    ``mean((1-Z) I(Y=k)/(1-pi) + (Z - pi)/(1-pi) * m0k)``.
    """
    _check_positivity(ps.pi)
    if of.m.shape[0] != ds.n:
        raise ValidationError("outcome fit does not belong to this dataset")
    ind = ds.indicators()
    z = ds.treatment.astype(float)[:, None]
    pi = ps.pi[:, None]
    p1 = np.mean(z * ind / pi - (z - pi) / pi * of.m[:, 1], axis=0)
    p0 = np.mean((1 - z) * ind / (1 - pi) + (z - pi) / (1 - pi) * of.m[:, 0], axis=0)
    w = (z / pi + (1 - z) / (1 - pi))[:, 0]
    return CellProbEstimate("dr", p1, p0, w, ps, of)


def collapse_outcome(ds: DoorDataset, cut: int) -> DoorDataset:
    """Binary ordinal outcome ``I(Y >= cut) + 1`` (2 = desirable)."""
    if not 2 <= cut <= ds.K:
        raise ValidationError(f"cut must be in 2..{ds.K}, got {cut}")
    y = (ds.outcome >= cut).astype(np.int64) + 1
    if np.all(y == y[0]):
        raise ValidationError(f"cut {cut}: dichotomized outcome is degenerate (all level {int(y[0])})")
    return ds.with_outcome(y, 2)


def compute_cells(ds: DoorDataset, spec: ModelSpec, method: str,
                  ps: PropensityFit | None = None) -> CellProbEstimate:
    """Fit whatever nuisance models ``method`` needs and return its cell estimate.

    ``method`` is one of ``crude``, ``iptw``, ``gformula``, ``dr``;
    ``iptw`` becomes ``iptw-hajek`` when ``spec.hajek`` is set (``iptw-hajek``
    is also accepted directly). A precomputed propensity fit can be passed.
    """
    if method == "crude":
        return crude_cells(ds)
    if method in ("iptw", "iptw-hajek"):
        ps = ps if ps is not None else fit_logistic(ds, spec)
        return iptw_cells(ds, ps, hajek=spec.hajek or method == "iptw-hajek")
    if method == "gformula":
        return gformula_cells(ds, fit_proportional_odds(ds, spec))
    if method == "dr":
        ps = ps if ps is not None else fit_logistic(ds, spec)
        return dr_cells(ds, ps, fit_proportional_odds(ds, spec))
    raise ValidationError(f"unknown method {method!r}; choose from crude, iptw, gformula, dr")


def sequential_dichotomized(ds: DoorDataset, spec: ModelSpec, method: str, cut: int,
                            ps: PropensityFit | None = None):
    """DOOR estimate for the binary outcome ``I(Y >= cut)``.

    The propensity model is reused (or refit unchanged); the outcome model is
    refit on the collapsed outcome, i.e. a logistic model. Returns a
    ``DoorEstimate``.
    """
    from .pipeline import estimate_door

    return estimate_door(collapse_outcome(ds, cut), spec, method, ps=ps)
