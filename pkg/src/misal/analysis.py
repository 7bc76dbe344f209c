"""Ground truth, rate constants and envelope checks for run traces."""

from __future__ import annotations

import dataclasses
import itertools
import math
from typing import Optional, Sequence

import numpy as np

from .driver import InexactnessSchedule, RunTrace
from .dual import eval_dual, dual_gradient
from .errors import ConfigurationError, OracleError, TheoremViolation
from .learning import RateCertificate
from .problem import (
    MisspecifiedProblem,
    PenaltyConfig,
    dist_to_nonpos_orthant,
)

ORACLE_SIZE_LIMIT = 20
FEAS_TOL = 1e-9
KKT_TOL = 1e-9
DUALITY_GAP_TOL = 1e-8


# --------------------------------------------------------------------------
# Active-set oracle
# --------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class GroundTruth:
    f_star: float
    x_star: np.ndarray
    lambda_star: np.ndarray
    duality_gap_check: float
    kkt_residual: float
    theta_star: np.ndarray

    def to_dict(self) -> dict:
        return {
            "f_star": self.f_star, "x_star": self.x_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "duality_gap_check": self.duality_gap_check,
            "kkt_residual": self.kkt_residual, "theta_star": self.theta_star.tolist(),
        }


def _kkt_enumerate(Q, c, G, g, E, e):
    """Best KKT point of ``min 1/2 x'Qx + c'x  s.t.  G x <= g, E x = e``.

    Every subset of at most ``n - rank(E)`` inequalities is tried as the
    active set.  Returns ``(x, mu, nu, value, residual)`` or None.
    """
    n, p, r = Q.shape[0], G.shape[0], E.shape[0]
    best = None
    scale = 1.0 + np.abs(Q).max() + np.abs(c).max()
    for size in range(0, min(p, max(n - r, 0)) + 1):
        for S in itertools.combinations(range(p), size):
            S = list(S)
            GS = G[S]
            k = n + size + r
            M = np.zeros((k, k))
            M[:n, :n] = Q
            M[:n, n:n + size] = GS.T
            M[:n, n + size:] = E.T
            M[n:n + size, :n] = GS
            M[n + size:, :n] = E
            rhs = np.concatenate([-c, g[S], e])
            try:
                sol = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
            if not np.all(np.isfinite(sol)) or np.linalg.norm(M @ sol - rhs) > 1e-10 * scale:
                continue
            x, mu_S, nu = sol[:n], sol[n:n + size], sol[n + size:]
            if np.any(mu_S < -1e-12) or np.any(G @ x - g > FEAS_TOL):
                continue
            if r and np.abs(E @ x - e).max() > FEAS_TOL:
                continue
            mu = np.zeros(p)
            mu[S] = np.maximum(mu_S, 0.0)
            value = 0.5 * x @ Q @ x + c @ x
            stat = Q @ x + c + G.T @ mu + E.T @ nu
            comp = np.abs(mu * (G @ x - g)).max() if p else 0.0
            resid = max(float(np.linalg.norm(stat)), float(comp),
                        float(np.maximum(G @ x - g, 0.0).max()) if p else 0.0)
            if best is None or value < best[3] - 1e-12:
                best = (x, mu, nu, float(value), resid)
    return best


def _polyhedron(p: MisspecifiedProblem):
    X = p.feasible_set
    if X.kind == "whole-space":
        return np.zeros((0, p.n)), np.zeros(0), np.zeros((0, p.n)), np.zeros(0)
    if not X.polyhedral:
        raise OracleError(f"oracle does not support {X.kind} feasible sets")
    return X.linear_description()


def solve_ground_truth(p: MisspecifiedProblem, theta_star) -> GroundTruth:
    """Exact optimum and multipliers of the problem at ``theta_star``."""
    if p.plugin is not None:
        raise OracleError("oracle needs the quadratic objective family")
    theta_star = np.asarray(theta_star, dtype=float)
    G_X, g_X, E, e = _polyhedron(p)
    if p.m + G_X.shape[0] > ORACLE_SIZE_LIMIT:
        raise OracleError(
            f"{p.m} constraints plus {G_X.shape[0]} facets exceed the oracle limit {ORACLE_SIZE_LIMIT}"
        )
    Q, c, A, b = p.snapshot(theta_star)
    G = np.vstack([A, G_X])
    g = np.concatenate([-b, g_X])
    best = _kkt_enumerate(Q, c, G, g, E, e)
    if best is None:
        raise OracleError("no feasible KKT point (infeasible or unbounded instance)")
    x, mu, _, value, resid = best
    lam = mu[: p.m].copy()

    # Zero duality gap check: g_0(lam*) = min over X of f + lam*' h.
    inner = _kkt_enumerate(Q, c + A.T @ lam, G_X, g_X, E, e)
    if inner is None:
        raise OracleError("Lagrangian subproblem has no KKT point")
    g0 = inner[3] + lam @ b
    return GroundTruth(value, x, lam, abs(value - g0), resid, theta_star)


# --------------------------------------------------------------------------
# Rate constants
# --------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RateConstants:
    C_lambda: float
    B_g: float
    C_1: float
    C_2: float
    U: float
    M_h: float
    C_bar: float
    inputs: dict

    def V(self, k):
        """Infeasibility envelope at the average of ``k + 1`` primal iterates."""
        k = np.asarray(k, dtype=float)
        return self.C_1 / np.sqrt(k + 1.0) + self.C_2 / (k + 1.0)

    def lower_envelope(self, k):
        v = self.V(k)
        return -0.5 * self.inputs["rho"] * v**2 - self.inputs["norm_lambda_star"] * v

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def recompute(self) -> "RateConstants":
        return rate_constants(**self.inputs)


def rate_constants(*, rho, sum_sqrt_alpha, sum_alpha, q, initial_gap, L_f, L_h, M_h,
                   norm_lambda_star) -> RateConstants:
    """Evaluate the bound constants from scalar inputs."""
    if not (0.0 < q < 1.0):
        raise ConfigurationError(f"q must lie in (0, 1), got {q}")
    if not (math.isfinite(sum_sqrt_alpha) and math.isfinite(sum_alpha)):
        raise ConfigurationError("inexactness schedule is not summable")
    drift = initial_gap / (1.0 - q)
    C_lambda = math.sqrt(2.0 * rho) * sum_sqrt_alpha + rho * M_h * drift + norm_lambda_star
    B_g = norm_lambda_star**2 / (2.0 * rho) + C_lambda * (
        math.sqrt(2.0 / rho) * sum_sqrt_alpha + M_h * drift
    )
    C_1 = math.sqrt(2.0 * B_g / rho + (C_lambda / rho) ** 2)
    C_2 = math.sqrt(2.0 / rho) * sum_sqrt_alpha + (L_h + M_h) * drift
    C_bar = C_lambda + norm_lambda_star
    U = (0.5 * rho * L_h**2 * initial_gap**2 / (1.0 - q * q)
         + (C_bar * L_h + 2.0 * L_f) * drift + sum_alpha)
    inputs = dict(rho=rho, sum_sqrt_alpha=sum_sqrt_alpha, sum_alpha=sum_alpha, q=q,
                  initial_gap=initial_gap, L_f=L_f, L_h=L_h, M_h=M_h,
                  norm_lambda_star=norm_lambda_star)
    return RateConstants(C_lambda, B_g, C_1, C_2, U, M_h, C_bar, inputs)


def compute_constants(p: MisspecifiedProblem, cfg: PenaltyConfig, sched: InexactnessSchedule,
                      cert: RateCertificate, gt: GroundTruth) -> RateConstants:
    cs = p.certificates
    return rate_constants(
        rho=cfg.rho, sum_sqrt_alpha=sched.sum_sqrt_alpha(), sum_alpha=sched.sum_alpha(),
        q=cert.q, initial_gap=cert.initial_gap, L_f=cs.L_f, L_h=cs.L_h, M_h=cs.M_h,
        norm_lambda_star=float(np.linalg.norm(gt.lambda_star)),
    )


# --------------------------------------------------------------------------
# Trace checks
# --------------------------------------------------------------------------


@dataclasses.dataclass
class CheckReport:
    theorem: str
    checked_ks: list
    measured: list
    envelope: list
    margin: list
    passed: bool
    violations: list = dataclasses.field(default_factory=list)
    extra: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem, "checked_ks": list(map(int, self.checked_ks)),
            "measured": _floats(self.measured), "envelope": _floats(self.envelope),
            "margin": _floats(self.margin), "pass": bool(self.passed),
            "violations": list(self.violations),
            **{k: _json_scalar(v) for k, v in self.extra.items()},
        }

    def raise_on_failure(self):
        if not self.passed:
            i = int(np.argmin(self.margin))
            raise TheoremViolation(self.theorem, self.checked_ks[i], self.measured[i], self.envelope[i])


def _json_scalar(v):
    # Strict JSON has no infinities; spell them out.
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _floats(vals):
    return [None if not math.isfinite(v) else float(v) for v in map(float, vals)]


def _report(theorem, ks, measured, envelope, extra=None, lower=None) -> CheckReport:
    measured = np.asarray(measured, dtype=float)
    envelope = np.asarray(envelope, dtype=float)
    margin = envelope - measured
    if lower is not None:
        margin = np.minimum(margin, measured - np.asarray(lower, dtype=float))
    bad = [int(k) for k, mg in zip(ks, margin) if not mg >= 0]
    violations = [f"{theorem} violated at k={k}" for k in bad]
    return CheckReport(theorem, [int(k) for k in ks], measured.tolist(), envelope.tolist(),
                       margin.tolist(), not bad, violations, extra or {})


def sample_ks(K: int) -> list:
    """Geometric grid 1, 2, 4, ... up to K plus the last ten indices."""
    ks = set()
    k = 1
    while k <= K:
        ks.add(k)
        k *= 2
    ks.update(range(max(1, K - 9), K + 1))
    return sorted(ks)


REFERENCE_TOL_FLOOR = 1e-13


def reference_tolerance(consts: RateConstants, K: int) -> float:
    """``min(1e-10, 0.01 B_g / K)``, floored so the reference solve stays certifiable."""
    return max(REFERENCE_TOL_FLOOR, min(1e-10, 0.01 * consts.B_g / max(K, 1)))


def tail_slope(ks, values, K: int) -> float:
    """Least-squares slope of log(values) against log(ks) over the last decade.

    Exact zeros carry no log information and are skipped.  A tail that is
    identically zero decays faster than any power and reports ``-inf``.
    """
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    tail = ks >= K / 10.0
    if tail.sum() >= 2 and np.all(values[tail] == 0.0):
        return float("-inf")
    mask = tail & (values > 0) & np.isfinite(values)
    if mask.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(ks[mask]), np.log(values[mask]), 1)
    return float(slope)


def annotate_trace(trace: RunTrace, p: MisspecifiedProblem, cfg: PenaltyConfig, gt: GroundTruth,
                   consts: RateConstants, inner_tol: Optional[float] = None,
                   ks: Optional[Sequence[int]] = None) -> RunTrace:
    """Fill the ground-truth diagnostic columns of ``trace`` in place.

    Infeasibility and primal gap are exact and filled for every record.  The
    dual gap needs a reference inner solve and is filled only at ``ks`` (the
    index of the averaged multiplier; stored on record ``k - 1``).
    """
    K = len(trace)
    theta = gt.theta_star
    A, b = p.A(theta), p.b(theta)
    infeas = trace.diagnostic("infeasibility")
    primal = trace.diagnostic("primal_gap")
    for i, rec in enumerate(trace.records):
        infeas[i] = dist_to_nonpos_orthant(A @ rec.x_bar + b)
        primal[i] = p.objective(rec.x_bar, theta) - gt.f_star
    tol = reference_tolerance(consts, K) if inner_tol is None else inner_tol
    lo = trace.diagnostic("dual_gap_lo")
    hi = trace.diagnostic("dual_gap_hi")
    for k in (sample_ks(K) if ks is None else ks):
        rec = trace.records[k - 1]
        g_lo, g_hi = eval_dual(p, cfg, rec.lam_bar, theta, tol, warm_start=rec.x)
        lo[k - 1] = gt.f_star - g_hi
        hi[k - 1] = gt.f_star - g_lo
    trace.meta["reference_tol"] = tol
    return trace


def check_multiplier_bound(trace: RunTrace, gt: GroundTruth, consts: RateConstants) -> CheckReport:
    ks = [r.k + 1 for r in trace.records]
    dist = [float(np.linalg.norm(r.lam - gt.lambda_star)) for r in trace.records]
    env = [consts.C_lambda] * len(ks)
    ratio = max(dist) / consts.C_lambda if consts.C_lambda > 0 else (0.0 if max(dist) == 0 else math.inf)
    return _report("multiplier_bound", ks, dist, env, {"max_ratio": ratio})


def check_multiplier_drift(trace: RunTrace, cfg: PenaltyConfig, gt: GroundTruth,
                           consts: RateConstants) -> CheckReport:
    """Per-step growth of ||lam_k - lam*|| against sqrt(2 rho alpha) + rho M_h ||theta_k - theta*||."""
    prev = float(np.linalg.norm(gt.lambda_star))  # lam_0 = 0
    ks, growth, env = [], [], []
    for r in trace.records:
        cur = float(np.linalg.norm(r.lam - gt.lambda_star))
        ks.append(r.k)
        growth.append(cur - prev)
        env.append(math.sqrt(2.0 * cfg.rho * r.alpha)
                   + cfg.rho * consts.M_h * float(np.linalg.norm(r.theta - gt.theta_star)))
        prev = cur
    return _report("multiplier_drift", ks, growth, env)


def check_dual_suboptimality(trace: RunTrace, p: MisspecifiedProblem, cfg: PenaltyConfig,
                             gt: GroundTruth, consts: RateConstants,
                             inner_tol: Optional[float] = None,
                             ks: Optional[Sequence[int]] = None) -> CheckReport:
    K = len(trace)
    tol = reference_tolerance(consts, K) if inner_tol is None else inner_tol
    ks = sample_ks(K) if ks is None else list(ks)
    lo = trace.diagnostic("dual_gap_lo")
    missing = [k for k in ks if np.isnan(lo[k - 1])]
    if missing:
        annotate_trace(trace, p, cfg, gt, consts, tol, missing)
    measured = [float(lo[k - 1]) for k in ks]
    env = [consts.B_g / k + tol for k in ks]
    return _report("dual_suboptimality", ks, measured, env,
                   {"tail_slope": tail_slope(ks, measured, K), "reference_tol": tol})


def _ensure_exact_columns(trace, p, gt):
    infeas = trace.diagnostic("infeasibility")
    primal = trace.diagnostic("primal_gap")
    if np.isnan(infeas).any() or np.isnan(primal).any():
        A, b = p.A(gt.theta_star), p.b(gt.theta_star)
        for i, rec in enumerate(trace.records):
            infeas[i] = dist_to_nonpos_orthant(A @ rec.x_bar + b)
            primal[i] = p.objective(rec.x_bar, gt.theta_star) - gt.f_star
    return infeas, primal


def check_primal_infeasibility(trace: RunTrace, p: MisspecifiedProblem, gt: GroundTruth,
                               consts: RateConstants) -> CheckReport:
    infeas, _ = _ensure_exact_columns(trace, p, gt)
    ks = np.arange(len(trace))
    env = consts.V(ks)
    # x_bar_k averages k + 1 iterates, so the slope is taken against k + 1.
    slope = tail_slope(ks + 1, infeas, len(trace))
    return _report("primal_infeasibility", ks, infeas, env, {"tail_slope": slope})


def check_primal_suboptimality(trace: RunTrace, p: MisspecifiedProblem, gt: GroundTruth,
                               consts: RateConstants) -> CheckReport:
    _, primal = _ensure_exact_columns(trace, p, gt)
    ks = np.arange(1, len(trace))
    upper = consts.U / ks
    lower = consts.lower_envelope(ks)
    rep = _report("primal_suboptimality", ks, primal[1:], upper, lower=lower)
    rep.extra["lower_envelope"] = _floats(lower)
    return rep


def check_gradient_bound(trace: RunTrace, p: MisspecifiedProblem, cfg: PenaltyConfig,
                         gt: GroundTruth, inner_tol: float = 1e-10,
                         ks: Optional[Sequence[int]] = None) -> CheckReport:
    """||grad g_rho(lam; theta*)|| <= sqrt(2/rho (f* - g_rho(lam; theta*))) at trace multipliers."""
    ks = sample_ks(len(trace)) if ks is None else list(ks)
    slack = math.sqrt(2.0 * inner_tol / cfg.rho)
    measured, env = [], []
    for k in ks:
        rec = trace.records[k - 1]
        grad = dual_gradient(p, cfg, rec.lam, gt.theta_star, inner_tol, warm_start=rec.x)
        _, g_hi = eval_dual(p, cfg, rec.lam, gt.theta_star, inner_tol, warm_start=rec.x)
        gap = max(gt.f_star - g_hi + inner_tol, 0.0)
        measured.append(float(np.linalg.norm(grad)))
        env.append(math.sqrt(2.0 / cfg.rho * gap) + slack)
    return _report("dual_gradient_bound", ks, measured, env)


def check_all(trace: RunTrace, p: MisspecifiedProblem, cfg: PenaltyConfig, gt: GroundTruth,
              consts: RateConstants) -> dict:
    """Run the four envelope checks and assemble the JSON report."""
    reports = [
        check_multiplier_bound(trace, gt, consts),
        check_dual_suboptimality(trace, p, cfg, gt, consts),
        check_primal_infeasibility(trace, p, gt, consts),
        check_primal_suboptimality(trace, p, gt, consts),
    ]
    return {
        "pass": all(r.passed for r in reports),
        "constants": consts.to_dict(),
        "ground_truth": gt.to_dict(),
        "theorems": {r.theorem: r.to_dict() for r in reports},
    }
