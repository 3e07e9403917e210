"""Monte Carlo data generation, true DOOR probability, replication and power studies.

Data-generating process (four covariates, equicorrelated latent normals,
the last two dichotomized at zero)::

    P(Z=1 | X)   = expit(beta0 + beta'X)
    P(Y>k | X,Z) = expit(alpha_k + gamma'X + delta Z),   k = 1..K-1

``alpha`` must be strictly decreasing. Larger ``Y`` is better, so positive
``delta`` favours treatment.

Every replicate ``r`` draws from its own stream ``SeedSequence(seed,
spawn_key=(0, r))``, which keeps results identical for any ``n_jobs``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .dataset import DoorDataset, ModelSpec
from .estimators import crude_cells, door_from_cells, dr_cells, gformula_cells, iptw_cells
from .exceptions import DoorError, ValidationError
from .inference import (crude_influence, door_inference, door_jacobian, dr_influence,
                        gformula_influence, iptw_influence)
from .regression import fit_logistic, fit_proportional_odds

SCHEMA_VERSION = 1
COVARIATES = ("X1", "X2", "X3", "X4")
MISSPECIFIED = ("X1", "X3")
SCENARIOS = {
    # scenario: (propensity model correct, outcome model correct)
    "both-correct": (True, True),
    "ps-correct": (True, False),
    "po-correct": (False, True),
    "both-incorrect": (False, False),
}
STUDY_METHODS = ("crude", "iptw", "gformula", "dr")
OUTCOME_LINK = "logit P(Y>k|X,Z) = alpha_k + gamma'X + delta*Z"
MAX_FAILURE_RATE = 0.01
POWER_GRID = tuple(round(0.05 * i, 2) for i in range(9))


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    replicates: int = 2000
    delta: float = 0.4
    beta0: float = -0.4
    beta: tuple[float, ...] = (0.15, -0.3, 0.2, -0.25)
    alpha: tuple[float, ...] = (1.0, 0.5, -0.5)
    gamma: tuple[float, ...] = (0.8, -0.4, 0.6, -0.3)
    rho: float = 0.5
    scenario: str = "both-correct"
    seed: int = 0
    truth_draws: int = 1_000_000

    def __post_init__(self):
        for name in ("beta", "alpha", "gamma"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.n < 50:
            raise ValidationError(f"n must be at least 50, got {self.n}")
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if not -1 < self.rho < 1:
            raise ValidationError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if len(self.beta) != 4 or len(self.gamma) != 4:
            raise ValidationError("beta and gamma must have 4 entries")
        if len(self.alpha) < 1 or np.any(np.diff(self.alpha) >= 0):
            raise ValidationError("alpha must be strictly decreasing")

    @property
    def K(self) -> int:
        return len(self.alpha) + 1

    def model_spec(self) -> ModelSpec:
        ps_ok, po_ok = SCENARIOS[self.scenario]
        return ModelSpec(COVARIATES if ps_ok else MISSPECIFIED, COVARIATES if po_ok else MISSPECIFIED)


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, r)))


def gen_covariates(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """``(n, 4)`` covariates: two standard normals and two indicators of latent normals > 0."""
    C = np.full((4, 4), rho)
    np.fill_diagonal(C, 1.0)
    L = np.linalg.cholesky(C)
    X = rng.standard_normal((n, 4)) @ L.T
    X[:, 2:] = X[:, 2:] > 0
    return X


def gen_treatment(X, beta0: float, beta, rng: np.random.Generator) -> np.ndarray:
    pi = expit(beta0 + X @ np.asarray(beta))
    return (rng.random(X.shape[0]) < pi).astype(np.int64)


def cell_probabilities(X, z, alpha, gamma, delta: float) -> np.ndarray:
    """``(n, K)`` outcome distribution given covariates and treatment ``z`` (scalar or array)."""
    X = np.asarray(X, dtype=float)
    lin = X @ np.asarray(gamma) + delta * np.asarray(z, dtype=float)
    exceed = expit(np.asarray(alpha)[None, :] + np.reshape(lin, (-1, 1)))  # P(Y > k)
    n = exceed.shape[0]
    cum = np.hstack([np.zeros((n, 1)), 1.0 - exceed, np.ones((n, 1))])
    probs = np.diff(cum, axis=1)
    assert np.all(probs >= 0), "negative cell probability"
    return probs


def gen_outcome(X, Z, alpha, gamma, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Y`` in ``1..K`` by inverting each subject's cumulative distribution."""
    cum = np.cumsum(cell_probabilities(X, Z, alpha, gamma, delta), axis=1)[:, :-1]
    u = rng.random(cum.shape[0])
    return 1 + np.sum(u[:, None] > cum, axis=1)


def simulate_dataset(config: SimConfig, rng: np.random.Generator) -> DoorDataset:
    X = gen_covariates(config.n, config.rho, rng)
    Z = gen_treatment(X, config.beta0, config.beta, rng)
    Y = gen_outcome(X, Z, config.alpha, config.gamma, config.delta, rng)
    return DoorDataset(Y, Z, X, COVARIATES, config.K)


@lru_cache(maxsize=64)
def _mc_truth(alpha, gamma, rho, delta, draws, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    K = len(alpha) + 1
    s1, s0 = np.zeros(K), np.zeros(K)
    chunks = []
    for start in range(0, draws, 250_000):
        X = gen_covariates(min(250_000, draws - start), rho, rng)
        m1 = cell_probabilities(X, 1.0, alpha, gamma, delta)
        m0 = cell_probabilities(X, 0.0, alpha, gamma, delta)
        s1 += m1.sum(axis=0)
        s0 += m0.sum(axis=0)
        chunks.append((m1, m0))
    p1, p0 = s1 / draws, s0 / draws
    D = door_from_cells(p1, p0)
    # delta-method MC standard error of D over the covariate draws
    J = door_jacobian(p1, p0)
    ss = 0.0
    for m1, m0 in chunks:
        phi = np.hstack([m1[:, :-1] - p1[:-1], m0[:, :-1] - p0[:-1]])
        ss += float(np.sum((phi @ J) ** 2))
    return D, math.sqrt(ss / draws) / math.sqrt(draws)


def mc_true_door(config: SimConfig, draws: int | None = None, seed: int | None = None,
                 return_se: bool = False):
    """True DOOR probability by Monte Carlo over covariates.

    Each draw contributes its exact counterfactual cell probabilities at
    ``Z=1`` and ``Z=0`` rather than a sampled outcome.
    """
    draws = config.truth_draws if draws is None else int(draws)
    if draws < 100_000:
        raise ValidationError("use at least 100000 Monte Carlo draws for the truth")
    seed = config.seed if seed is None else seed
    D, se = _mc_truth(config.alpha, config.gamma, config.rho, float(config.delta), draws, seed)
    return (D, se) if return_se else D


def _estimate_all(ds: DoorDataset, spec: ModelSpec):
    ps = fit_logistic(ds, spec)
    of = fit_proportional_odds(ds, spec)
    out = []
    c = crude_cells(ds)
    out.append(door_inference(c, crude_influence(ds, c)))
    c = iptw_cells(ds, ps)
    out.append(door_inference(c, iptw_influence(ds, ps, c)))
    c = gformula_cells(ds, of)
    out.append(door_inference(c, gformula_influence(ds, of, c)))
    c = dr_cells(ds, ps, of)
    out.append(door_inference(c, dr_influence(ds, ps, of, c)))
    return out


def _replicate(config: SimConfig, r: int) -> np.ndarray:
    """``(methods, 5)`` rows of (D, se, ci_lo, ci_hi, p_value); NaN when the replicate failed."""
    ds = simulate_dataset(config, replicate_rng(config.seed, r))
    try:
        ests = _estimate_all(ds, config.model_spec())
    except DoorError:
        return np.full((len(STUDY_METHODS), 5), np.nan)
    return np.array([[e.D_hat, e.se, e.ci95[0], e.ci95[1], e.p_value] for e in ests])


def _run_block(config: SimConfig, rs) -> list[np.ndarray]:
    return [_replicate(config, r) for r in rs]


def simulate_replicates(config: SimConfig, n_jobs: int = 1) -> np.ndarray:
    """``(replicates, methods, 5)`` raw per-replicate results, in replicate order."""
    R = config.replicates
    if n_jobs == 1:
        rows = _run_block(config, range(R))
    else:
        n_workers = n_jobs if n_jobs > 0 else os.cpu_count() or 1
        size = max(1, math.ceil(R / (4 * n_workers)))
        blocks = [range(s, min(R, s + size)) for s in range(0, R, size)]
        parts = Parallel(n_jobs=n_jobs)(delayed(_run_block)(config, b) for b in blocks)
        rows = [row for part in parts for row in part]
    return np.stack(rows)


def model_label(method: str, scenario: str) -> str:
    ps_ok, po_ok = SCENARIOS[scenario]
    if method == "crude":
        return "none"
    if method == "iptw":
        return "correct" if ps_ok else "incorrect"
    if method == "gformula":
        return "correct" if po_ok else "incorrect"
    return scenario


@dataclass
class StudyReport:
    """Bias, empirical SE, average estimated SE, coverage and rejection rate per method."""

    config: SimConfig
    d_true: float
    rows: list[dict]
    replicates: int
    failures: int
    raw: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config": asdict(self.config),
                "outcome_link": OUTCOME_LINK, "d_true": self.d_true,
                "replicates": self.replicates, "failures": self.failures, "rows": self.rows}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)


CSV_FIELDS = ("schema_version", "scenario", "n", "delta", "d_true", "method", "model", "bias", "se", "see", "cp",
              "rejection", "replicates", "failures")


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Strict JSON (non-finite numbers become ``null``), indented, full float precision."""
    return json.dumps(_nan_to_none(obj), indent=2, allow_nan=False)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({"schema_version": SCHEMA_VERSION,
                    **{k: repr(v) if isinstance(v, float) else v for k, v in row.items()}})
    return buf.getvalue()


def summarize_replicates(config: SimConfig, raw: np.ndarray, d_true: float) -> StudyReport:
    ok = np.all(np.isfinite(raw[:, :, 0]), axis=1)
    failures = int((~ok).sum())
    good = raw[ok]
    rows = []
    for j, method in enumerate(STUDY_METHODS):
        D, se, lo, hi, pv = (good[:, j, c] for c in range(5))
        count = D.shape[0]
        rows.append({
            "scenario": config.scenario,
            "n": config.n,
            "delta": float(config.delta),
            "d_true": d_true,
            "method": method,
            "model": model_label(method, config.scenario),
            "bias": float(D.mean() - d_true) if count else math.nan,
            "se": float(D.std(ddof=1)) if count > 1 else math.nan,
            "see": float(se.mean()) if count else math.nan,
            "cp": float(np.mean((lo <= d_true) & (d_true <= hi))) if count else math.nan,
            "rejection": float(np.mean(pv < 0.05)) if count else math.nan,
            "replicates": count,
            "failures": failures,
            "se_defined": count > 1,
        })
    return StudyReport(config, d_true, rows, config.replicates, failures, raw)


def run_replication_study(config: SimConfig, n_jobs: int = 1, d_true: float | None = None) -> StudyReport:
    """Simulate ``config.replicates`` datasets and summarize all four estimators.

    Replicates whose nuisance fits fail are dropped and counted; more than 1%
    failures aborts the study.
    """
    if d_true is None:
        d_true = mc_true_door(config)
    raw = simulate_replicates(config, n_jobs)
    report = summarize_replicates(config, raw, d_true)
    if report.failures > MAX_FAILURE_RATE * config.replicates:
        raise DoorError(f"{report.failures} of {config.replicates} replicates failed (limit 1%)")
    return report


@dataclass
class PowerTable:
    deltas: tuple[float, ...]
    truths: tuple[float, ...]
    reports: list[StudyReport]

    @property
    def rows(self) -> list[dict]:
        return [row for rep in self.reports for row in rep.rows]

    def rejection(self, method: str) -> list[float]:
        return [next(r["rejection"] for r in rep.rows if r["method"] == method) for rep in self.reports]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "outcome_link": OUTCOME_LINK,
                "deltas": list(self.deltas), "d_true": list(self.truths),
                "rejection": {m: self.rejection(m) for m in STUDY_METHODS},
                "rows": self.rows}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)


def run_power_study(config: SimConfig, deltas=POWER_GRID, n_jobs: int = 1) -> PowerTable:
    """Rejection rate of ``H0: D = 0.5`` per method over a grid of treatment effects.

    All grid points share ``config.seed`` (common random numbers).
    """
    reports = [run_replication_study(replace(config, delta=float(d)), n_jobs) for d in deltas]
    return PowerTable(tuple(float(d) for d in deltas), tuple(r.d_true for r in reports), reports)
