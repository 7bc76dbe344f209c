import csv
import dataclasses
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from misal.driver import InexactnessSchedule, InnerOptions, RunTrace, resume, run
from misal.errors import ConfigurationError, RunAborted
from misal.learning import LearningSequence
from misal.problem import ConvexPlugin, PenaltyConfig, grad_lambda_aug_lagrangian

from conftest import random_qp, scalar_problem


def fixed(p, theta=None):
    theta = np.zeros(p.d) if theta is None else np.asarray(theta, dtype=float)
    return LearningSequence.geometric_oracle(theta, theta, 0.5, p.theta_box)


SCHED = InexactnessSchedule.power(1.0, 2.5)


# -- schedules ----------------------------------------------------------------


@pytest.mark.parametrize("kind, kw", [("power", {"p": 1.5}), ("power", {"p": 2.0}),
                                      ("geometric", {"r": 1.0}), ("geometric", {"r": 0.0}),
                                      ("cosine", {})])
def test_invalid_schedules_rejected(kind, kw):
    with pytest.raises(ConfigurationError):
        InexactnessSchedule(kind, 1.0, **kw)


def test_invalid_schedule_rejected_before_any_iteration():
    p = scalar_problem()
    with pytest.raises(ConfigurationError):
        run(p, PenaltyConfig(1.0), fixed(p), "power-1.5", 5)


@given(st.floats(0.01, 10), st.floats(2.05, 6))
def test_power_sums_bound_partial_sums(c, pw):
    sched = InexactnessSchedule.power(c, pw)
    k = np.arange(200_000, dtype=float)
    a = c * (k + 1) ** (-pw)
    assert np.sqrt(a).sum() <= sched.sum_sqrt_alpha()
    assert a.sum() <= sched.sum_alpha()


@given(st.floats(0.01, 10), st.floats(0.01, 0.95))
def test_geometric_sums_closed_form(c, r):
    sched = InexactnessSchedule.geometric(c, r)
    a = np.array([sched.alpha(k) for k in range(3000)])
    assert np.sqrt(a).sum() <= sched.sum_sqrt_alpha() * (1 + 1e-12)
    assert math.isclose(a.sum(), sched.sum_alpha(), rel_tol=1e-9)


def test_default_schedule_value():
    assert InexactnessSchedule.power().alpha(3) == 4 ** -2.5


# -- runs ---------------------------------------------------------------------


def test_slack_constraints_keep_multipliers_zero():
    p = scalar_problem(a=1.0, b=-5.0, c=-2.0)  # unconstrained minimizer x = 1 has h = -4
    _, trace = run(p, PenaltyConfig(1.0), fixed(p), SCHED, 200)
    assert all(np.all(r.lam == 0.0) for r in trace.records)
    assert abs(trace.records[-1].x[0] - 1.0) <= 1e-3


def test_scalar_problem_converges_to_hand_kkt_point():
    p = scalar_problem(a=-1.0, b=1.0)  # min x^2 s.t. 1 - x <= 0
    state, trace = run(p, PenaltyConfig(1.0), fixed(p), SCHED, 2000)
    assert abs(state.lam[0] - 2.0) <= 1e-3
    assert abs(state.x_bar[0] - 1.0) <= 1e-2
    assert abs(p.objective(state.x, [0.0]) - 1.0) <= 1e-3


def test_single_iteration_unrolled(rng):
    p = random_qp(rng)
    cfg = PenaltyConfig(1.5)
    seq = LearningSequence.geometric_oracle([0.1, -0.2], [1.0, 1.0], 0.7, p.theta_box)
    state, trace = run(p, cfg, seq, SCHED, 1)
    assert len(trace) == 1 and state.k == 1
    rec = trace.records[0]
    assert np.array_equal(rec.theta, [1.0, 1.0])
    expected = cfg.rho * grad_lambda_aug_lagrangian(p, cfg, rec.x, np.zeros(p.m), rec.theta)
    np.testing.assert_allclose(state.lam, np.maximum(expected, 0.0), atol=1e-15)
    assert rec.certified_gap <= SCHED.alpha(0)


def test_run_rejects_bad_horizon():
    p = scalar_problem()
    with pytest.raises(ConfigurationError):
        run(p, PenaltyConfig(1.0), fixed(p), SCHED, 0)


def _misspecified_run(rng, K=60, options=None):
    p = random_qp(rng)
    seq = LearningSequence.geometric_oracle([0.2, -0.3], [1.0, 1.0], 0.8, p.theta_box)
    return p, seq, run(p, PenaltyConfig(1.0), seq, SCHED, K, options=options)


def test_multipliers_nonnegative_and_averages_consistent(rng):
    _, _, (state, trace) = _misspecified_run(rng, K=150)
    xs = np.array([r.x for r in trace.records])
    lams = np.array([r.lam for r in trace.records])
    assert np.all(lams >= 0.0)
    for k, r in enumerate(trace.records):
        np.testing.assert_allclose(r.x_bar, xs[: k + 1].mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(r.lam_bar, lams[: k + 1].mean(axis=0), atol=1e-12)
        assert r.certified_gap <= r.alpha
        assert r.theta_error_bound == pytest.approx(0.8**k * np.linalg.norm(np.array([0.8, 1.3])))


def test_resume_is_bit_identical(rng):
    p = random_qp(rng)
    seq = LearningSequence.geometric_oracle([0.2, -0.3], [1.0, 1.0], 0.8, p.theta_box)
    cfg = PenaltyConfig(1.0)
    s10, t10 = run(p, cfg, seq, SCHED, 10)
    s15, t15 = resume(s10, t10, 5)
    _, full = run(p, cfg, seq, SCHED, 15)
    assert t15.to_csv() == full.to_csv()
    assert s15.k == 15


def test_resume_zero_is_identity(rng):
    _, _, (state, trace) = _misspecified_run(rng, K=5)
    before = trace.to_csv()
    s2, t2 = resume(state, trace, 0)
    assert s2 is state and t2.to_csv() == before


def test_resume_rejects_mismatched_state(rng):
    _, _, (state_a, _) = _misspecified_run(rng, K=5)
    _, _, (_, trace_b) = _misspecified_run(rng, K=5)
    with pytest.raises(ConfigurationError):
        resume(state_a, trace_b, 3)


def _poisoned_problem(after):
    p = scalar_problem(a=-1.0, b=1.0)
    calls = {"n": 0}

    def grad(x, t):
        calls["n"] += 1
        return np.array([np.nan]) if calls["n"] > after else 2 * x

    return dataclasses.replace(p, plugin=ConvexPlugin(lambda x, t: float(x @ x), grad, lambda t: 2.0))


def test_inner_failure_aborts_with_partial_trace():
    p = _poisoned_problem(after=40)
    with pytest.raises(RunAborted) as info:
        run(p, PenaltyConfig(1.0), fixed(p), SCHED, 100)
    err = info.value
    assert err.trace.aborted
    assert 0 < len(err.trace) < 100
    assert err.state.k == len(err.trace)
    with pytest.raises(ConfigurationError):
        resume(err.state, err.trace, 5)


def test_budget_rule_runs(rng):
    _, _, (_, trace) = _misspecified_run(rng, K=5, options=InnerOptions(rule="budget"))
    assert all(r.certified_gap <= r.alpha for r in trace.records)


def test_unknown_inner_rule():
    with pytest.raises(ConfigurationError):
        InnerOptions(rule="newton")


# -- trace serialization --------------------------------------------------------


def test_csv_header_and_rows(rng):
    _, _, (_, trace) = _misspecified_run(rng, K=12)
    rows = list(csv.reader(io.StringIO(trace.to_csv())))
    header = rows[0]
    assert header[:7] == ["k", "alpha", "theta_error_bound", "theta_projected", "inner_iterations",
                          "certified_gap", "lambda_norm"]
    assert header[7:11] == ["dual_gap_lo", "dual_gap_hi", "infeasibility", "primal_gap"]
    assert "x_bar_2" in header and "lam_bar_1" in header and "theta_1" in header
    assert len(rows) == 13
    assert rows[1][7] == ""  # diagnostics not yet filled
    assert float(rows[5][header.index("x_2")]) == trace.records[4].x[2]


def test_csv_is_deterministic(rng):
    seed_rng = np.random.default_rng(3)
    _, _, (_, a) = _misspecified_run(seed_rng, K=30)
    seed_rng = np.random.default_rng(3)
    _, _, (_, b) = _misspecified_run(seed_rng, K=30)
    assert a.to_csv() == b.to_csv()
    assert a.fingerprint == b.fingerprint


def test_json_roundtrip(rng):
    _, _, (_, trace) = _misspecified_run(rng, K=8)
    trace.diagnostic("infeasibility")[:] = np.arange(8.0)
    back = RunTrace.from_dict(json.loads(trace.to_json()))
    assert back.to_csv() == trace.to_csv()
    assert back.meta == json.loads(json.dumps(trace.meta))


def test_trace_is_append_only(rng):
    _, _, (_, trace) = _misspecified_run(rng, K=3)
    with pytest.raises(ValueError):
        trace.append(trace.records[0])
