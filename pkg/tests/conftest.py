import numpy as np
import pytest

from causaldoor import DoorDataset
from causaldoor.simulation import SimConfig, replicate_rng, simulate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sim_small():
    """One N=400 dataset from the default data-generating process."""
    return simulate_dataset(SimConfig(n=400, delta=0.4), replicate_rng(11, 0))


def make_dataset(y, z, x=None, K=None, names=None):
    y = np.asarray(y)
    x = np.zeros((len(y), 0)) if x is None else np.asarray(x, dtype=float).reshape(len(y), -1)
    names = names or tuple(f"x{j + 1}" for j in range(x.shape[1]))
    return DoorDataset(y, np.asarray(z), x, names, K or int(y.max()))


def central_diff(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        cols.append((np.asarray(f(theta + e)) - np.asarray(f(theta - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def saturated_outcome_fit(ds, strata, n_strata):
    """Stratum-by-arm empirical outcome model for a K=2 outcome.

    Parameter ``2*s + a`` is ``P(Y=1 | stratum s, Z=a)``; its influence and
    the gradients of the cell probabilities are written out by hand.
    """
    from causaldoor.regression import OutcomeFit

    n, P = ds.n, 2 * n_strata
    y1 = (ds.outcome == 1).astype(float)
    theta = np.zeros(P)
    U = np.zeros((n, P))
    for s in range(n_strata):
        for a in (0, 1):
            cell = (strata == s) & (ds.treatment == a)
            j = 2 * s + a
            theta[j] = y1[cell].mean()
            U[:, j] = cell * (y1 - theta[j]) / cell.mean()
    m = np.zeros((n, 2, 2))
    grad = np.zeros((n, 2, 2, P))
    for a in (0, 1):
        j = 2 * strata + a
        m[:, a, 0] = theta[j]
        m[:, a, 1] = 1 - theta[j]
        grad[np.arange(n), a, 0, j] = 1.0
        grad[np.arange(n), a, 1, j] = -1.0
    return OutcomeFit(theta=theta, names=tuple(f"t{j}" for j in range(P)), K=2, m=m, grad_m=grad,
                      info=np.eye(P), U=U, converged=True, iterations=0, likelihood=None)


@pytest.fixture(scope="session")
def saturated():
    """K=2 data on 4 covariate strata with saturated propensity and outcome models."""
    from causaldoor import ModelSpec
    from causaldoor.regression import fit_logistic

    rng = np.random.default_rng(4)
    n = 600
    s1 = rng.integers(0, 2, n)
    s2 = rng.integers(0, 2, n)
    strata = 2 * s1 + s2
    z = (rng.random(n) < np.array([0.3, 0.45, 0.6, 0.7])[strata]).astype(int)
    y = 1 + (rng.random(n) < np.array([0.3, 0.5, 0.4, 0.6])[strata] + 0.1 * z).astype(int)
    X = np.column_stack([s1, s2, s1 * s2])
    ds = make_dataset(y, z, X, K=2, names=("s1", "s2", "s12"))
    ps = fit_logistic(ds, ModelSpec(("s1", "s2", "s12")))
    return ds, ps, saturated_outcome_fit(ds, strata, 4), strata


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
