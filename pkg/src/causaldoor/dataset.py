"""Two-arm ordinal-outcome datasets, model specifications and CSV I/O."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ValidationError

logger = logging.getLogger(__name__)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DoorDataset:
    """Ordinal outcome ``Y`` in ``1..K``, binary treatment ``Z`` and covariates ``X``.

    Arrays are stored read-only, so a dataset can be shared freely once built.
    ``K`` is declared rather than inferred: a level may be empty in-sample.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    K: int

    def __post_init__(self):
        y = np.asarray(self.outcome)
        z = np.asarray(self.treatment)
        x = np.asarray(self.covariates, dtype=float)
        names = tuple(str(c) for c in self.covariate_names)
        if y.ndim != 1:
            raise ValidationError("outcome must be one-dimensional")
        n = y.shape[0]
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(n, 0)
        if x.ndim != 2 or x.shape[0] != n:
            raise ValidationError(f"covariates must have shape (n, p) with n={n}, got {x.shape}")
        if z.shape != (n,):
            raise ValidationError(f"treatment must have length {n}, got {z.shape}")
        if x.shape[1] != len(names):
            raise ValidationError(f"{x.shape[1]} covariate columns but {len(names)} names")
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate covariate names: {names}")
        if int(self.K) != self.K or self.K < 2:
            raise ValidationError(f"K must be an integer >= 2, got {self.K}")
        if n == 0:
            raise ValidationError("dataset is empty")
        if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            bad = int(np.flatnonzero(~np.isfinite(y) | (y != np.round(y)))[0])
            raise ValidationError(f"row {bad}: outcome {y[bad]!r} is not an integer")
        bad = np.flatnonzero((y < 1) | (y > self.K))
        if bad.size:
            raise ValidationError(f"row {int(bad[0])}: outcome {y[bad[0]]:g} outside 1..{self.K}")
        bad = np.flatnonzero((z != 0) & (z != 1))
        if bad.size:
            raise ValidationError(f"row {int(bad[0])}: treatment {z[bad[0]]!r} not in {{0, 1}}")
        if np.all(z == 1) or np.all(z == 0):
            raise ValidationError(f"single-arm data: every subject has treatment={int(z[0])}")
        bad_rows = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
        if bad_rows.size:
            raise ValidationError(f"row {int(bad_rows[0])}: non-finite covariate value")
        object.__setattr__(self, "outcome", _frozen(y.astype(np.int64)))
        object.__setattr__(self, "treatment", _frozen(z.astype(np.int64)))
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "K", int(self.K))

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def arm_sizes(self) -> tuple[int, int]:
        """``(n0, n1)``: control and treated counts."""
        n1 = int(self.treatment.sum())
        return self.n - n1, n1

    def columns(self, names: Sequence[str]) -> np.ndarray:
        """Covariate submatrix for ``names`` (in the given order)."""
        idx = []
        for name in names:
            try:
                idx.append(self.covariate_names.index(name))
            except ValueError:
                raise ValidationError(f"unknown covariate {name!r}; have {list(self.covariate_names)}") from None
        return self.covariates[:, idx]

    def take(self, rows) -> "DoorDataset":
        """Subset (or resample, with repeats) the rows."""
        rows = np.asarray(rows)
        return DoorDataset(self.outcome[rows], self.treatment[rows], self.covariates[rows],
                           self.covariate_names, self.K)

    def with_outcome(self, outcome, K: int) -> "DoorDataset":
        return DoorDataset(np.asarray(outcome), self.treatment, self.covariates, self.covariate_names, K)

    def indicators(self) -> np.ndarray:
        """``(n, K)`` one-hot matrix of ``I(Y_i = k)``."""
        out = np.zeros((self.n, self.K))
        out[np.arange(self.n), self.outcome - 1] = 1.0
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Which covariates enter which nuisance model, plus estimation options.

    The propensity model always gets an intercept; the outcome model always
    gets the treatment indicator as a pooled regressor.
    """

    propensity_covariates: tuple[str, ...] = ()
    outcome_covariates: tuple[str, ...] = ()
    hajek: bool = False
    clip: float = 0.0
    bootstrap: int = 0

    def __post_init__(self):
        object.__setattr__(self, "propensity_covariates", tuple(self.propensity_covariates))
        object.__setattr__(self, "outcome_covariates", tuple(self.outcome_covariates))
        if not 0.0 <= self.clip < 0.5:
            raise ValidationError(f"clip must lie in [0, 0.5), got {self.clip}")
        if self.bootstrap < 0:
            raise ValidationError("bootstrap replicate count must be non-negative")

    def validate(self, ds: DoorDataset) -> None:
        for name in (*self.propensity_covariates, *self.outcome_covariates):
            if name not in ds.covariate_names:
                raise ValidationError(f"unknown covariate {name!r}; have {list(ds.covariate_names)}")


@dataclass(frozen=True)
class ColumnMap:
    """CSV column names for the outcome, treatment and covariates."""

    outcome: str
    treatment: str
    covariates: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))


def _parse_number(text: str) -> float:
    value = float(text)  # raises ValueError on junk
    if not math.isfinite(value):
        raise ValueError(text)
    return value


def load_csv(path, schema: ColumnMap | Mapping, K: int, complete_case: bool = False) -> DoorDataset:
    """Read a UTF-8 CSV with a header row into a validated :class:`DoorDataset`.

    ``schema`` maps roles to column names, either a :class:`ColumnMap` or a
    mapping with keys ``outcome``, ``treatment`` and optionally ``covariates``.
    Missing or non-numeric cells are an error naming the data row (0-based,
    header excluded) unless ``complete_case`` is set, in which case such rows
    are dropped and the count is logged.
    """
    if not isinstance(schema, ColumnMap):
        schema = ColumnMap(schema["outcome"], schema["treatment"], tuple(schema.get("covariates", ())))
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    wanted = [schema.outcome, schema.treatment, *schema.covariates]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header row required") from None
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ValidationError(f"{path}: columns not found in header: {missing}")
        pos = [header.index(c) for c in wanted]
        rows, dropped = [], 0
        for i, rec in enumerate(reader):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            try:
                values = [_parse_number(rec[j].strip()) if j < len(rec) else _parse_number("") for j in pos]
            except ValueError:
                if complete_case:
                    dropped += 1
                    continue
                bad = next(c for c, j in zip(wanted, pos) if j >= len(rec) or not _is_number(rec[j]))
                raise ValidationError(f"row {i}: missing or non-numeric value in column {bad!r}") from None
            rows.append(values)
    if dropped:
        logger.warning("complete-case: dropped %d row(s) with missing or non-numeric values", dropped)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    return DoorDataset(data[:, 0], data[:, 1], data[:, 2:], schema.covariates, K)


def _is_number(text: str) -> bool:
    try:
        _parse_number(text.strip())
    except ValueError:
        return False
    return True


def write_csv(ds: DoorDataset, path, outcome: str = "Y", treatment: str = "Z") -> ColumnMap:
    """Write ``ds`` so that ``load_csv(path, <returned map>, ds.K)`` reproduces it exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([outcome, treatment, *ds.covariate_names])
        for y, z, x in zip(ds.outcome, ds.treatment, ds.covariates):
            w.writerow([int(y), int(z), *(repr(float(v)) for v in x)])
    return ColumnMap(outcome, treatment, ds.covariate_names)


def summarize(ds: DoorDataset) -> dict:
    """Per-arm outcome level counts and covariate means.

    Every level ``1..K`` is reported, including empty ones.
    """
    out = {"n": ds.n, "K": ds.K, "arms": {}}
    for arm, label in ((0, "control"), (1, "treated")):
        mask = ds.treatment == arm
        counts = np.bincount(ds.outcome[mask] - 1, minlength=ds.K)
        means = ds.covariates[mask].mean(axis=0) if ds.p else np.empty(0)
        out["arms"][label] = {
            "n": int(mask.sum()),
            "counts": [int(c) for c in counts],
            "covariate_means": dict(zip(ds.covariate_names, (float(m) for m in means))),
        }
    return out
