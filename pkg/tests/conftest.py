"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import time

import numpy as np
import pytest

from misal.analysis import _kkt_enumerate
from misal.cli import ExperimentConfig, acceptance_config, run_pipeline
from misal.problem import PenaltyConfig, SimpleSet, ThetaBox, affine_problem


def scalar_problem(a=-1.0, b=1.0, lo=-10.0, hi=10.0, q=2.0, c=0.0):
    """min q/2 x^2 + c x  s.t.  a x + b <= 0  over [lo, hi]; theta is inert."""
    return affine_problem([[q]], [c], [[a]], [b], SimpleSet.box([lo], [hi]),
                          ThetaBox([-1.0], [1.0]), kappa_X=0.0)


def random_qp(rng, n=3, m=2, d=2, spread=0.1, slack=(0.1, 0.5), box=1.0):
    """Strongly convex QP over a box with a strictly feasible point at theta = 0."""
    B = rng.normal(size=(n, n))
    Q0 = B @ B.T + 0.5 * np.eye(n)
    lam_min = np.linalg.eigvalsh(Q0).min()
    Qk = []
    for _ in range(d):
        S = rng.normal(size=(n, n))
        S = 0.5 * (S + S.T)
        Qk.append(S * (0.5 * lam_min / d / np.linalg.norm(S, 2)))
    c0 = rng.normal(size=n) * 2.0
    A0 = rng.normal(size=(m, n))
    x_feas = rng.uniform(-0.3 * box, 0.3 * box, size=n)
    b0 = -A0 @ x_feas - rng.uniform(*slack, size=m)
    return affine_problem(
        Q0, c0, A0, b0, SimpleSet.box(-box * np.ones(n), box * np.ones(n)),
        ThetaBox(-np.ones(d), np.ones(d)),
        Qk=np.array(Qk), ck=spread * rng.normal(size=(d, n)),
        Ak=spread * rng.normal(size=(d, m, n)), bk=spread * rng.normal(size=(d, m)),
        kappa_X=1.0,
    )


def inner_minimum_oracle(p, cfg: PenaltyConfig, lam, theta):
    """Exact ``min over X of L_rho(., lam; theta)`` for a quadratic problem on a polytope.

    Uses the slack form ``min_{x in X, z >= 0} f + lam'(h + z) + rho/2 ||h + z||^2``,
    a strongly convex QP in ``(x, z)`` when Q is positive definite, solved by
    active-set enumeration.
    """
    Q, c, A, b = p.snapshot(theta)
    lam = np.asarray(lam, dtype=float)
    n, m, rho = p.n, p.m, cfg.rho
    H = np.zeros((n + m, n + m))
    H[:n, :n] = Q + rho * A.T @ A
    H[:n, n:] = rho * A.T
    H[n:, :n] = rho * A
    H[n:, n:] = rho * np.eye(m)
    lin = np.concatenate([c + A.T @ lam + rho * A.T @ b, lam + rho * b])
    G_X, g_X, E_X, e_X = p.feasible_set.linear_description()
    G = np.zeros((G_X.shape[0] + m, n + m))
    G[: G_X.shape[0], :n] = G_X
    G[G_X.shape[0]:, n:] = -np.eye(m)
    g = np.concatenate([g_X, np.zeros(m)])
    E = np.zeros((E_X.shape[0], n + m))
    E[:, :n] = E_X
    best = _kkt_enumerate(H, lin, G, g, E, e_X)
    assert best is not None
    xz, value = best[0], best[3]
    return xz[:n], value + lam @ b + 0.5 * rho * b @ b


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def timed_pipeline(raw_config):
    start = time.perf_counter()
    result = run_pipeline(ExperimentConfig.from_dict(raw_config))
    result.elapsed = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def acceptance_run():
    """The benchmark pipeline run once per session, with its wall time."""
    return timed_pipeline(acceptance_config())
