"""Certified inexact minimization of the augmented Lagrangian over X.

Both solvers run accelerated projected gradient (FISTA momentum) with the
fixed step ``1 / L_k``.  ``solve_subproblem`` runs the full iteration budget
implied by the O(1/T^2) bound; ``solve_subproblem_adaptive`` stops as soon as
a gradient-mapping bound certifies the requested accuracy.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, InnerSolverError, NumericalFailure
from .problem import MisspecifiedProblem, PenaltyConfig, project

# Hard cap for unbounded X, where no budget is available.
DEFAULT_MAX_ITER = 1_000_000


@dataclasses.dataclass(frozen=True)
class InnerResult:
    x: np.ndarray
    iterations: int
    certified_gap: float
    lipschitz_used: float
    rule: str = "budget"


def smoothness_constant(p: MisspecifiedProblem, cfg: PenaltyConfig, theta) -> float:
    """Upper bound ``sigma_max(Q) + rho sigma_max(A)^2`` on the x-gradient Lipschitz constant."""
    A = p.A(theta)
    penalty = cfg.rho * np.linalg.norm(A, 2) ** 2 if A.size else 0.0
    if p.plugin is not None:
        if p.plugin.smoothness is None:
            raise ConfigurationError("convex plugin must supply a smoothness constant")
        return float(p.plugin.smoothness(np.asarray(theta, dtype=float))) + penalty
    return float(np.linalg.norm(p.Q(theta), 2) + penalty)


def iteration_budget(lipschitz: float, diameter: float, alpha: float) -> int:
    """Smallest T with ``2 L D^2 / T^2 <= alpha`` (at least one step)."""
    if not math.isfinite(diameter):
        raise ConfigurationError("fixed budget needs a compact feasible set")
    return max(1, math.ceil(math.sqrt(2.0 * lipschitz * diameter**2 / alpha)))


def accelerated_projected_gradient(grad, proj, lipschitz, x0, max_iter, *, stop=None,
                                   value=None, restart=False, callback=None):
    """FISTA core loop.

    ``stop(j, y, x_next, g)`` is consulted after every projected-gradient
    step taken from the extrapolated point ``y``; a non-None return value
    ends the loop and is passed back as the certificate.

    Returns ``(x, steps, certificate, x_first, steps_since_restart)``.
    """
    eta = 1.0 / lipschitz
    x = proj(x0)
    y = x
    t = 1.0
    x_first = None
    since_restart = 0
    for j in range(max_iter):
        g = grad(y)
        trial = y - eta * g
        if not np.all(np.isfinite(trial)):
            raise NumericalFailure(
                f"non-finite iterate at inner step {j} (|y|={np.linalg.norm(y):.3e}, "
                f"|grad|={np.linalg.norm(g):.3e}, L={lipschitz:.3e})"
            )
        x_next = proj(trial)
        if x_first is None:
            x_first = x_next
        if callback is not None:
            callback(j, x_next)
        if stop is not None:
            cert = stop(j, y, x_next, g)
            if cert is not None:
                return x_next, j, cert, x_first, since_restart + 1
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if restart and value(x_next) > value(x):
            t_next = 1.0
            y = x_next
            since_restart = 0
        else:
            y = x_next + ((t - 1.0) / t_next) * (x_next - x)
            since_restart += 1
        x, t = x_next, t_next
    return x, max_iter, None, x_first, since_restart


def _subproblem(p: MisspecifiedProblem, cfg: PenaltyConfig, lam, theta):
    """Value and gradient closures of x -> L_rho(x, lam; theta) with theta frozen."""
    rho = cfg.rho
    lam = np.asarray(lam, dtype=float)
    theta = np.asarray(theta, dtype=float)
    A, b = p.A(theta), p.b(theta)
    lam_sq = lam @ lam
    if p.plugin is None:
        Q, c = p.Q(theta), p.c(theta)

        def value(x):
            r = np.maximum(lam + rho * (A @ x + b), 0.0)
            return 0.5 * x @ Q @ x + c @ x + (r @ r - lam_sq) / (2.0 * rho)

        def grad(x):
            return Q @ x + c + A.T @ np.maximum(lam + rho * (A @ x + b), 0.0)
    else:
        fv, fg = p.plugin.value, p.plugin.grad

        def value(x):
            r = np.maximum(lam + rho * (A @ x + b), 0.0)
            return float(fv(x, theta)) + (r @ r - lam_sq) / (2.0 * rho)

        def grad(x):
            return np.asarray(fg(x, theta)) + A.T @ np.maximum(lam + rho * (A @ x + b), 0.0)

    return value, grad


def _prepare(p, cfg, theta, alpha, warm_start):
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ConfigurationError(f"alpha must be positive and finite, got {alpha}")
    X = p.feasible_set
    x0 = np.zeros(p.n) if warm_start is None else np.asarray(warm_start, dtype=float)
    return X, project(X, x0), smoothness_constant(p, cfg, theta)


def _pick_monotone(value, x, x_first):
    # The first projected-gradient step is a fallback with a smaller value;
    # any certificate for x transfers to it.
    if x_first is not None and value(x_first) < value(x):
        return x_first
    return x


def solve_subproblem(p: MisspecifiedProblem, cfg: PenaltyConfig, lam, theta, alpha: float,
                     warm_start=None, *, callback: Optional[Callable] = None) -> InnerResult:
    """Run the full accelerated budget ``T = ceil(sqrt(2 L D^2 / alpha))``."""
    X, x0, L = _prepare(p, cfg, theta, alpha, warm_start)
    if not X.compact:
        raise ConfigurationError("unbounded X has no budget; use solve_subproblem_adaptive")
    D = X.diameter()
    T = iteration_budget(L, D, alpha)
    value, grad = _subproblem(p, cfg, lam, theta)
    proj = lambda v: project(X, v)  # noqa: E731
    x, steps, _, x_first, _ = accelerated_projected_gradient(grad, proj, L, x0, T, callback=callback)
    x = _pick_monotone(value, x, x_first)
    return InnerResult(x, steps, 2.0 * L * D**2 / (T + 1) ** 2, L, "budget")


def solve_subproblem_adaptive(p: MisspecifiedProblem, cfg: PenaltyConfig, lam, theta, alpha: float,
                              warm_start=None, *, restart: bool = False,
                              max_iter: Optional[int] = None,
                              callback: Optional[Callable] = None) -> InnerResult:
    """Accelerated projected gradient with an early gradient-mapping stop.

    With ``x+ = P_X(y - grad(y)/L)`` and ``delta = ||y - x+||`` the value of
    ``x+`` exceeds the minimum by at most ``L D delta``; the rule fires when
    ``L D delta + L delta^2 / 2 <= alpha``.  The loop never runs longer than
    the fixed budget of :func:`solve_subproblem`.  For unbounded X the
    strong-convexity bound ``||grad(x+)||^2 / (2 mu)`` is used instead and
    ``max_iter`` caps the work.
    """
    X, x0, L = _prepare(p, cfg, theta, alpha, warm_start)
    value, grad = _subproblem(p, cfg, lam, theta)
    proj = lambda v: project(X, v)  # noqa: E731

    if X.compact:
        D = X.diameter()
        T = iteration_budget(L, D, alpha)
        if max_iter is not None:
            T = min(T, max_iter)

        def stop(j, y, x_next, g):
            delta = float(np.linalg.norm(y - x_next))
            bound = L * D * delta + 0.5 * L * delta * delta
            return bound if bound <= alpha else None
    else:
        if p.plugin is not None:
            raise ConfigurationError("unbounded X needs a quadratic objective")
        mu = float(np.linalg.eigvalsh(p.Q(theta)).min())
        if mu <= 0:
            raise ConfigurationError("unbounded X needs a strongly convex objective")
        D = math.inf
        T = DEFAULT_MAX_ITER if max_iter is None else max_iter

        def stop(j, y, x_next, g):
            gn = float(np.linalg.norm(grad(x_next)))
            bound = gn * gn / (2.0 * mu)
            return bound if bound <= alpha else None

    x, steps, cert, x_first, since = accelerated_projected_gradient(
        grad, proj, L, x0, T, stop=stop, value=value, restart=restart, callback=callback
    )
    rule = "gradient-mapping" if X.compact else "strong-convexity"
    if cert is None:
        if not X.compact:
            raise InnerSolverError(f"no certificate within {T} steps (alpha={alpha:.3e})")
        cert = 2.0 * L * D**2 / (since + 1) ** 2
        rule = "budget"
        if cert > alpha:
            raise InnerSolverError(
                f"budget exhausted after {T} steps without certifying alpha={alpha:.3e} "
                f"(best bound {cert:.3e})"
            )
    x = _pick_monotone(value, x, x_first)
    return InnerResult(x, steps, float(cert), L, rule)
