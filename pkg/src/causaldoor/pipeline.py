"""End-to-end estimation: fit nuisance models, estimate cells, attach inference."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .dataset import DoorDataset, ModelSpec, summarize
from .estimators import compute_cells, sequential_dichotomized
from .exceptions import ValidationError
from .inference import DoorEstimate, _wald, bootstrap_se, door_inference, influence
from .regression import PropensityFit, fit_logistic

SCHEMA_VERSION = 1
ANALYTIC_METHODS = ("crude", "iptw", "gformula", "dr")


def estimate_door(ds: DoorDataset, spec: ModelSpec, method: str, ps: PropensityFit | None = None,
                  truncate: bool = False, seed: int = 0, n_jobs: int = 1) -> DoorEstimate:
    """Estimate ``D`` by ``method`` with influence-function inference.

    Hajek-normalized IPTW (``spec.hajek`` with ``method="iptw"``) has no
    analytic variance here, so it requires ``spec.bootstrap >= 100`` and its
    standard error is the bootstrap one. For the other methods a positive
    ``spec.bootstrap`` adds a bootstrap result next to the analytic one.
    """
    spec.validate(ds)
    cells = compute_cells(ds, spec, method, ps=ps)
    if cells.method == "iptw-hajek":
        if spec.bootstrap < 100:
            raise ValidationError("Hajek-normalized IPTW has no analytic variance; "
                                  "request at least 100 bootstrap replicates")
        boot = bootstrap_se(ds, spec, "iptw-hajek", spec.bootstrap, seed, n_jobs)
        D = cells.door
        ci, p_value = _wald(D, boot.se, truncate)
        return DoorEstimate("iptw-hajek", D, boot.se, ci, p_value, ds.n,
                            p1=cells.p1, p0=cells.p0, bootstrap=boot)
    est = door_inference(cells, influence(ds, cells), truncate=truncate)
    if spec.bootstrap:
        est = dataclasses.replace(est, bootstrap=bootstrap_se(ds, spec, method, spec.bootstrap, seed, n_jobs))
    return est


@dataclass
class AnalysisReport:
    """Everything the ``analyze`` command reports."""

    estimates: list[DoorEstimate]
    spec: ModelSpec
    n: int
    K: int
    arm_sizes: tuple[int, int]
    warnings: list[str] = field(default_factory=list)
    forest: list[dict] = field(default_factory=list)
    summary: dict | None = None
    models: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "K": self.K,
            "arm_sizes": {"control": self.arm_sizes[0], "treated": self.arm_sizes[1]},
            "spec": {
                "propensity_covariates": list(self.spec.propensity_covariates),
                "outcome_covariates": list(self.spec.outcome_covariates),
                "hajek": self.spec.hajek,
                "clip": self.spec.clip,
                "bootstrap": self.spec.bootstrap,
            },
            "estimates": [e.to_dict() for e in self.estimates],
            "forest": self.forest,
            "models": self.models,
            "summary": self.summary,
            "warnings": self.warnings,
        }


def analyze(ds: DoorDataset, spec: ModelSpec, methods=("dr",), dichotomize: bool = False,
            truncate: bool = False, seed: int = 0, n_jobs: int = 1) -> AnalysisReport:
    """Run each requested method; optionally add sequentially dichotomized DOOR rows.

    Dichotomization rows use the first requested method, for cuts ``2..K``.
    """
    spec.validate(ds)
    for m in methods:
        if m not in ANALYTIC_METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {', '.join(ANALYTIC_METHODS)}")
    ps = None
    warnings = []
    models = {}
    if any(m in ("iptw", "dr") for m in methods):
        ps = fit_logistic(ds, spec)
        models["propensity"] = ps.to_dict()
        if ps.n_clipped:
            warnings.append(f"{ps.n_clipped} propensity score(s) clipped to [{spec.clip}, {1 - spec.clip}]")
    estimates = [estimate_door(ds, spec, m, ps=ps, truncate=truncate, seed=seed, n_jobs=n_jobs)
                 for m in methods]
    for est in estimates:
        if est.bootstrap is not None and est.bootstrap.failures:
            warnings.append(f"{est.method}: {est.bootstrap.failures} bootstrap resample(s) failed")
    forest = []
    if dichotomize:
        method = methods[0]
        for cut in range(2, ds.K + 1):
            est = sequential_dichotomized(ds, spec, method, cut, ps=ps)
            forest.append({"cut": cut, "method": est.method, "estimate": est.D_hat, "se": est.se,
                           "ci95": list(est.ci95), "p_value": est.p_value})
    return AnalysisReport(estimates, spec, ds.n, ds.K, ds.arm_sizes, warnings, forest,
                          summarize(ds), models)
