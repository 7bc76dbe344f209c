"""Dual function brackets and the proximal map of the ordinary dual."""

from __future__ import annotations

import numpy as np

from .inner import solve_subproblem_adaptive
from .problem import (
    MisspecifiedProblem,
    PenaltyConfig,
    eval_aug_lagrangian,
    grad_lambda_aug_lagrangian,
)


def eval_dual(p: MisspecifiedProblem, cfg: PenaltyConfig, lam, theta, inner_tol: float,
              warm_start=None, *, restart: bool = False):
    """Bracket ``(lower, upper)`` around g_rho(lam; theta) of width ``inner_tol``."""
    res = solve_subproblem_adaptive(p, cfg, lam, theta, inner_tol, warm_start, restart=restart)
    upper = eval_aug_lagrangian(p, cfg, res.x, lam, theta)
    return upper - inner_tol, upper


def dual_gradient(p: MisspecifiedProblem, cfg: PenaltyConfig, lam, theta, inner_tol: float,
                  warm_start=None, *, restart: bool = False) -> np.ndarray:
    """Inexact gradient of g_rho; error at most ``sqrt(2 inner_tol / rho)``."""
    res = solve_subproblem_adaptive(p, cfg, lam, theta, inner_tol, warm_start, restart=restart)
    return grad_lambda_aug_lagrangian(p, cfg, res.x, lam, theta)


def prox_map(p: MisspecifiedProblem, cfg: PenaltyConfig, lam, theta, inner_tol: float,
             warm_start=None, *, restart: bool = False) -> np.ndarray:
    """pi_rho(lam; theta) = lam + rho * grad g_rho(lam; theta), evaluated inexactly.

    The error against the exact prox is at most ``rho * sqrt(2 inner_tol / rho)``.
    """
    lam = np.asarray(lam, dtype=float)
    return lam + cfg.rho * dual_gradient(p, cfg, lam, theta, inner_tol, warm_start, restart=restart)


def prox_error_bound(cfg: PenaltyConfig, inner_tol: float) -> float:
    return cfg.rho * float(np.sqrt(2.0 * inner_tol / cfg.rho))
