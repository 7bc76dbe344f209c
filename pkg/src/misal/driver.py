"""Outer loop of the misspecified inexact augmented Lagrangian scheme.

Iteration ``k`` (zero based) reads the estimate ``theta_k``, finds ``x_k``
with ``L_rho(x_k, lam_k; theta_k) <= g_rho(lam_k; theta_k) + alpha_k`` and
sets ``lam_{k+1} = lam_k + rho * grad_lam L_rho(x_k, lam_k; theta_k)``,
starting from ``lam_0 = 0``.

Record ``k`` of the trace therefore carries ``x_k``, ``lam_{k+1}``,
``x_bar_k = mean(x_0..x_k)`` and ``lam_bar_{k+1} = mean(lam_1..lam_{k+1})``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InnerSolverError, RunAborted
from .inner import solve_subproblem, solve_subproblem_adaptive
from .learning import LearningSequence, certify
from .problem import (
    MisspecifiedProblem,
    PenaltyConfig,
    grad_lambda_aug_lagrangian,
    multiplier_update,
)


@dataclasses.dataclass(frozen=True)
class InexactnessSchedule:
    """Inner accuracies ``alpha_k`` whose square roots are summable.

    ``power``: ``alpha_k = c (k+1)^-p`` with ``p > 2``.
    ``geometric``: ``alpha_k = c r^k`` with ``0 < r < 1``.
    """

    kind: str
    c: float
    p: Optional[float] = None
    r: Optional[float] = None

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ConfigurationError("schedule scale c must be positive")
        if self.kind == "power":
            if self.p is None or not self.p > 2:
                raise ConfigurationError(
                    f"power schedule needs p > 2 for summable sqrt(alpha), got p={self.p}"
                )
        elif self.kind == "geometric":
            if self.r is None or not (0 < self.r < 1):
                raise ConfigurationError(f"geometric schedule needs 0 < r < 1, got r={self.r}")
        else:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def power(cls, c: float = 1.0, p: float = 2.5) -> "InexactnessSchedule":
        return cls("power", float(c), p=float(p))

    @classmethod
    def geometric(cls, c: float, r: float) -> "InexactnessSchedule":
        return cls("geometric", float(c), r=float(r))

    def alpha(self, k: int) -> float:
        if self.kind == "power":
            return self.c * (k + 1.0) ** (-self.p)
        return self.c * self.r**k

    def sum_sqrt_alpha(self) -> float:
        """Upper bound on the infinite sum of sqrt(alpha_k)."""
        if self.kind == "power":
            return math.sqrt(self.c) * (1.0 + 1.0 / (self.p / 2.0 - 1.0))
        return math.sqrt(self.c) / (1.0 - math.sqrt(self.r))

    def sum_alpha(self) -> float:
        """Upper bound on the infinite sum of alpha_k."""
        if self.kind == "power":
            return self.c * (1.0 + 1.0 / (self.p - 1.0))
        return self.c / (1.0 - self.r)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "c": self.c}
        out.update({"p": self.p} if self.kind == "power" else {"r": self.r})
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "InexactnessSchedule":
        return cls(d.get("kind"), float(d.get("c", 1.0)),
                   p=None if d.get("p") is None else float(d["p"]),
                   r=None if d.get("r") is None else float(d["r"]))


@dataclasses.dataclass(frozen=True)
class InnerOptions:
    rule: str = "adaptive"
    restart: bool = False

    def __post_init__(self):
        if self.rule not in ("adaptive", "budget"):
            raise ConfigurationError(f"unknown inner rule {self.rule!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True, eq=False)
class AlState:
    """State after ``k`` completed outer iterations.

    ``x`` is ``x_{k-1}`` (the warm start for the next solve), ``lam`` is
    ``lam_k``, ``x_bar`` averages ``x_0..x_{k-1}`` and ``lam_bar`` averages
    ``lam_1..lam_k``.  At ``k = 0`` the averages are the initial points.
    """

    k: int
    x: np.ndarray
    lam: np.ndarray
    x_bar: np.ndarray
    lam_bar: np.ndarray
    theta: np.ndarray
    alpha: float
    fingerprint: str


@dataclasses.dataclass(frozen=True, eq=False)
class IterationRecord:
    k: int
    alpha: float
    theta_error_bound: float
    theta_projected: bool
    inner_iterations: int
    certified_gap: float
    lambda_norm: float
    x: np.ndarray
    lam: np.ndarray
    x_bar: np.ndarray
    lam_bar: np.ndarray
    theta: np.ndarray


DIAGNOSTIC_FIELDS = ("dual_gap_lo", "dual_gap_hi", "infeasibility", "primal_gap")
SCALAR_FIELDS = ("k", "alpha", "theta_error_bound", "theta_projected", "inner_iterations",
                 "certified_gap", "lambda_norm")
VECTOR_FIELDS = ("x", "lam", "x_bar", "lam_bar", "theta")


@dataclasses.dataclass(eq=False)
class RunTrace:
    """Append-only per-iteration log plus run metadata.

    ``diagnostics`` holds ground-truth columns filled in afterwards by the
    analysis module (NaN where not evaluated).
    """

    meta: dict
    fingerprint: str
    records: list = dataclasses.field(default_factory=list)
    diagnostics: dict = dataclasses.field(default_factory=dict)
    aborted: bool = False
    context: Optional[dict] = dataclasses.field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def append(self, rec: IterationRecord):
        if rec.k != len(self.records):
            raise ValueError("trace records must be appended in order")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        if name in DIAGNOSTIC_FIELDS:
            return self.diagnostic(name)
        return np.array([getattr(r, name) for r in self.records])

    def diagnostic(self, name: str) -> np.ndarray:
        col = self.diagnostics.get(name)
        if col is None or len(col) != len(self.records):
            out = np.full(len(self.records), np.nan)
            if col is not None:
                out[: len(col)] = col[: len(self.records)]
            col = out
            self.diagnostics[name] = col
        return col

    # -- serialization ------------------------------------------------------

    def csv_header(self) -> list:
        n = self.records[0].x.size if self.records else self.meta.get("n", 0)
        m = self.records[0].lam.size if self.records else self.meta.get("m", 0)
        d = self.records[0].theta.size if self.records else self.meta.get("d", 0)
        sizes = {"x": n, "lam": m, "x_bar": n, "lam_bar": m, "theta": d}
        header = list(SCALAR_FIELDS) + list(DIAGNOSTIC_FIELDS)
        for name in VECTOR_FIELDS:
            header += [f"{name}_{i}" for i in range(sizes[name])]
        return header

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        diag = {name: self.diagnostic(name) for name in DIAGNOSTIC_FIELDS}
        for i, r in enumerate(self.records):
            row = [r.k, _fmt(r.alpha), _fmt(r.theta_error_bound), int(r.theta_projected),
                   r.inner_iterations, _fmt(r.certified_gap), _fmt(r.lambda_norm)]
            row += [_fmt(diag[name][i]) for name in DIAGNOSTIC_FIELDS]
            for name in VECTOR_FIELDS:
                row += [_fmt(v) for v in getattr(r, name)]
            writer.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        recs = []
        for r in self.records:
            item = {name: getattr(r, name) for name in SCALAR_FIELDS}
            item["theta_projected"] = bool(r.theta_projected)
            item.update({name: getattr(r, name).tolist() for name in VECTOR_FIELDS})
            recs.append(item)
        diag = {name: [None if np.isnan(v) else float(v) for v in self.diagnostic(name)]
                for name in DIAGNOSTIC_FIELDS}
        return {"meta": self.meta, "fingerprint": self.fingerprint, "aborted": self.aborted,
                "records": recs, "diagnostics": diag}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunTrace":
        recs = []
        for item in d["records"]:
            recs.append(IterationRecord(
                k=int(item["k"]), alpha=float(item["alpha"]),
                theta_error_bound=float(item["theta_error_bound"]),
                theta_projected=bool(item["theta_projected"]),
                inner_iterations=int(item["inner_iterations"]),
                certified_gap=float(item["certified_gap"]),
                lambda_norm=float(item["lambda_norm"]),
                **{name: np.asarray(item[name], dtype=float) for name in VECTOR_FIELDS},
            ))
        diag = {name: np.array([np.nan if v is None else v for v in vals], dtype=float)
                for name, vals in d.get("diagnostics", {}).items()}
        return cls(meta=d["meta"], fingerprint=d["fingerprint"], records=recs,
                   diagnostics=diag, aborted=bool(d.get("aborted", False)))


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def run_fingerprint(p: MisspecifiedProblem, cfg: PenaltyConfig, seq: LearningSequence,
                    sched: InexactnessSchedule, options: InnerOptions) -> str:
    blob = json.dumps({
        "problem": p.to_dict(), "rho": cfg.rho, "learning": seq.to_dict(),
        "schedule": sched.to_dict(), "inner": options.to_dict(),
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def initial_state(p: MisspecifiedProblem, seq: LearningSequence, fingerprint: str) -> AlState:
    from .problem import project

    x0 = project(p.feasible_set, np.zeros(p.n))
    lam0 = np.zeros(p.m)
    return AlState(0, x0, lam0, x0.copy(), lam0.copy(), seq.theta_0.copy(), float("nan"), fingerprint)


def run(p: MisspecifiedProblem, cfg: PenaltyConfig, seq: LearningSequence,
        sched: InexactnessSchedule, K: int, *, options: Optional[InnerOptions] = None):
    """Execute ``K`` outer iterations; returns ``(AlState, RunTrace)``."""
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    if not isinstance(sched, InexactnessSchedule):
        raise ConfigurationError("schedule must be an InexactnessSchedule")
    options = options or InnerOptions()
    fp = run_fingerprint(p, cfg, seq, sched, options)
    cert = certify(seq, K)
    meta = {
        "rho": cfg.rho, "schedule": sched.to_dict(), "inner": options.to_dict(),
        "certificates": p.certificates.to_dict(),
        "learning": {"q": cert.q, "initial_gap": cert.initial_gap, "kind": seq.kind},
        "n": p.n, "m": p.m, "d": p.d,
    }
    trace = RunTrace(meta=meta, fingerprint=fp,
                     context={"problem": p, "cfg": cfg, "seq": seq, "sched": sched,
                              "options": options, "cert": cert})
    state = initial_state(p, seq, fp)
    return _iterate(state, trace, K)


def resume(state: AlState, trace: RunTrace, extra: int):
    """Continue a run; bit-identical to a single longer run."""
    if trace.aborted:
        raise ConfigurationError("cannot resume an aborted run")
    if trace.context is None:
        raise ConfigurationError("trace carries no run context")
    if state.fingerprint != trace.fingerprint or state.k != len(trace.records):
        raise ConfigurationError("state does not match the trace configuration")
    if extra < 0:
        raise ValueError("extra must be >= 0")
    if extra == 0:
        return state, trace
    return _iterate(state, trace, state.k + extra)


def _iterate(state: AlState, trace: RunTrace, K: int):
    ctx = trace.context
    p, cfg, seq, sched, options = ctx["problem"], ctx["cfg"], ctx["seq"], ctx["sched"], ctx["options"]
    cert = seq.certificate
    solver = solve_subproblem_adaptive if options.rule == "adaptive" else solve_subproblem
    kwargs = {"restart": options.restart} if options.rule == "adaptive" else {}

    k, x, lam = state.k, state.x, state.lam
    x_bar, lam_bar = state.x_bar, state.lam_bar
    theta, alpha = state.theta, state.alpha
    while k < K:
        theta, projected = seq.estimate(k)
        alpha = sched.alpha(k)
        try:
            res = solver(p, cfg, lam, theta, alpha, x, **kwargs)
        except InnerSolverError as exc:
            trace.aborted = True
            partial = AlState(k, x, lam, x_bar, lam_bar, theta, alpha, state.fingerprint)
            raise RunAborted(f"outer iteration {k}: {exc}", partial, trace) from exc
        x = res.x
        lam = multiplier_update(lam, cfg, grad_lambda_aug_lagrangian(p, cfg, x, lam, theta))
        x_bar = x if k == 0 else x_bar + (x - x_bar) / (k + 1)
        lam_bar = lam if k == 0 else lam_bar + (lam - lam_bar) / (k + 1)
        trace.append(IterationRecord(
            k=k, alpha=alpha, theta_error_bound=cert.error_bound(k), theta_projected=projected,
            inner_iterations=res.iterations, certified_gap=res.certified_gap,
            lambda_norm=float(np.linalg.norm(lam)),
            x=x, lam=lam, x_bar=x_bar, lam_bar=lam_bar, theta=theta,
        ))
        k += 1
    return AlState(k, x, lam, x_bar, lam_bar, theta, alpha, state.fingerprint), trace
