"""Seeded benchmark instances.

All randomness comes from ``numpy.random.default_rng(seed)`` (the PCG64 bit
generator), so a seed reproduces an instance bit-exactly on any platform
running the same NumPy major version.
"""

from __future__ import annotations

import numpy as np

from .analysis import ORACLE_SIZE_LIMIT, solve_ground_truth
from .errors import ConfigurationError
from .inner import accelerated_projected_gradient
from .problem import MisspecifiedProblem, SimpleSet, ThetaBox, affine_problem, compute_certificates, project

BENCHMARK_KINDS = ("random-qp", "portfolio")


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def _psd_perturbations(rng, d, n, budget):
    # sum_i |theta_i| ||Qk_i|| <= budget for theta in [-1, 1]^d
    out = np.empty((d, n, n))
    for i in range(d):
        S = rng.normal(size=(n, n))
        S = 0.5 * (S + S.T)
        out[i] = S * (budget / d / np.linalg.norm(S, 2))
    return out


def lagrangian_minimizer(p: MisspecifiedProblem, lam, theta, tol=1e-13, max_iter=50_000):
    """argmin over X of f(x; theta) + lam' h(x; theta) by restarted FISTA."""
    Q, c, A, b = p.snapshot(theta)
    lin = c + A.T @ lam
    L = float(np.linalg.norm(Q, 2))
    proj = lambda v: project(p.feasible_set, v)  # noqa: E731

    def stop(j, y, x_next, g):
        return True if np.linalg.norm(y - x_next) <= tol else None

    x, *_ = accelerated_projected_gradient(
        lambda x: Q @ x + lin, proj, L, np.zeros(p.n), max_iter, stop=stop,
        value=lambda x: 0.5 * x @ Q @ x + lin @ x, restart=True,
    )
    return x


def estimate_kappa_x(p: MisspecifiedProblem, lam_scale: float, seed: int, samples: int = 48,
                     safety: float = 2.0) -> float:
    """Empirical theta-Lipschitz modulus of the Lagrangian minimizer, times ``safety``.

    This is a sampled estimate, not a proof; callers can override it.
    """
    rng = np.random.default_rng([seed, 1])
    best = 0.0
    for _ in range(samples):
        lam = rng.uniform(0.0, lam_scale, size=p.m)
        t1 = p.theta_box.sample(rng, 1)[0]
        for eps in (1e-3, 1e-1, 1.0):
            v = rng.normal(size=p.d)
            t2 = p.theta_box.project(t1 + eps * v / np.linalg.norm(v))
            dt = np.linalg.norm(t2 - t1)
            if dt == 0:
                continue
            x1 = lagrangian_minimizer(p, lam, t1)
            x2 = lagrangian_minimizer(p, lam, t2)
            best = max(best, float(np.linalg.norm(x1 - x2) / dt))
    return safety * best


def random_qp(n: int, m: int, d: int, seed: int):
    if m + 2 * n > ORACLE_SIZE_LIMIT:
        raise ConfigurationError(f"random-qp with n={n}, m={m} exceeds the oracle size guard")
    if min(n, m, d) < 1:
        raise ConfigurationError("random-qp needs n, m, d >= 1")
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.7, 1.5, size=n)
    B = _orthogonal(rng, n) @ np.diag(s) @ _orthogonal(rng, n).T
    Q0 = B.T @ B
    Q0 = 0.5 * (Q0 + Q0.T)
    Qk = _psd_perturbations(rng, d, n, 0.5 * float(np.min(s**2)))
    c0 = 2.0 * rng.normal(size=n)
    ck = 0.3 * rng.normal(size=(d, n))
    X = SimpleSet.box(-2.0 * np.ones(n), 2.0 * np.ones(n))
    tb = ThetaBox(-np.ones(d), np.ones(d))
    theta_star = rng.uniform(-0.5, 0.5, size=d)
    x_feas = rng.uniform(-0.5, 0.5, size=n)

    A0 = rng.normal(size=(m, n))
    Ak = 0.2 * rng.normal(size=(d, m, n))
    bk = 0.2 * rng.normal(size=(d, m))
    Qs = Q0 + np.tensordot(theta_star, Qk, axes=1)
    x_free = np.clip(-np.linalg.solve(Qs, c0 + theta_star @ ck), -2.0, 2.0)
    A_star = A0 + np.tensordot(theta_star, Ak, axes=1)
    # Orient each row against the unconstrained minimizer so constraints bind.
    flip = np.where(A_star @ (x_free - x_feas) < 0, -1.0, 1.0)
    A0 = A0 * flip[:, None]
    Ak = Ak * flip[None, :, None]
    A_star = A_star * flip[:, None]
    slack = rng.uniform(0.2, 0.6, size=m)
    b0 = -A_star @ x_feas - slack - theta_star @ bk
    meta = {"kind": "random-qp", "seed": seed, "strictly_feasible_point": x_feas.tolist()}
    p = affine_problem(Q0, c0, A0, b0, X, tb, Qk=Qk, ck=ck, Ak=Ak, bk=bk, kappa_X=0.0, meta=meta)
    return p, theta_star


def portfolio(n: int, seed: int, sectors: int = 2, cap: float = 0.7, risk_tradeoff: float = 0.8):
    if sectors + n > ORACLE_SIZE_LIMIT:
        raise ConfigurationError(f"portfolio with n={n} exceeds the oracle size guard")
    if n < 2 or not (1 <= sectors <= n):
        raise ConfigurationError("portfolio needs n >= 2 and 1 <= sectors <= n")
    rng = np.random.default_rng(seed)
    band = max(2.0, n / 2.0)
    idx = np.arange(n)
    sigma = np.maximum(1.0 - np.abs(idx[:, None] - idx[None, :]) / band, 0.0) + 0.1 * np.eye(n)
    d = 2
    Qk = _psd_perturbations(rng, d, n, 0.5 * float(np.linalg.eigvalsh(sigma).min()))
    mu = rng.uniform(-1.0, 1.0, size=n)
    c0 = -risk_tradeoff * mu
    groups = np.array_split(idx, sectors)
    A0 = np.zeros((sectors, n))
    for j, g in enumerate(groups):
        A0[j, g] = 1.0
    # Uniform weights must be strictly feasible.
    cap = max(cap, max(len(g) for g in groups) / n + 0.05)
    b0 = -cap * np.ones(sectors)
    X = SimpleSet.simplex(n, 1.0)
    tb = ThetaBox(-np.ones(d), np.ones(d))
    theta_star = rng.uniform(-0.5, 0.5, size=d)
    meta = {"kind": "portfolio", "seed": seed, "strictly_feasible_point": (np.ones(n) / n).tolist()}
    p = affine_problem(sigma, c0, A0, b0, X, tb, Qk=Qk, kappa_X=0.0, meta=meta)
    return p, theta_star


def generate_benchmark(kind: str, seed: int, *, n: int = 5, m: int = 3, d: int = 2,
                       kappa_X=None):
    """Build a seeded instance with certificates.

    Returns ``(problem, theta_star)``; ``theta_star`` is a test fixture.
    ``kappa_X`` defaults to :func:`estimate_kappa_x` around the true multipliers.
    """
    if kind == "random-qp":
        p, theta_star = random_qp(n, m, d, seed)
    elif kind == "portfolio":
        p, theta_star = portfolio(n, seed)
    else:
        raise ConfigurationError(f"unknown benchmark kind {kind!r}")
    if kappa_X is None:
        gt = solve_ground_truth(p, theta_star)
        scale = 2.0 * (float(np.max(gt.lambda_star, initial=0.0)) + 1.0)
        kappa_X = estimate_kappa_x(p, scale, seed)
    p = p.with_certificates(compute_certificates(p, kappa_X))
    if not p.check_psd(samples=10, seed=seed):
        raise ConfigurationError("generated instance failed the PSD check")
    return p, theta_star
