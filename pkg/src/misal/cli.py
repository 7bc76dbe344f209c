"""Command-line front end: ``misal {generate,run,check,plotdata}``.

Exit status: 0 when every envelope check passes, 1 when a check fails,
2 when a stage errors (the stage name is printed on stderr).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import dataclasses
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import (
    annotate_trace,
    check_all,
    compute_constants,
    solve_ground_truth,
)
from .benchmarks import generate_benchmark
from .driver import InexactnessSchedule, InnerOptions, RunTrace, run
from .errors import ConfigurationError
from .learning import LearningSequence, fixture_target
from .problem import MisspecifiedProblem, PenaltyConfig

WORKERS_ENV = "MISAL_WORKERS"
PLOT_COLUMNS = ("k", "dual_gap", "Bg_over_k", "infeasibility", "V_k", "primal_gap",
                "U_over_k", "lower_envelope")
EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def acceptance_config() -> dict:
    """Benchmark QP with n=5, m=3, d=2, q=0.9, rho=1, alpha_k=(k+1)^-2.5, K=2000."""
    return {
        "problem": {"generate": {"kind": "random-qp", "n": 5, "m": 3, "d": 2}},
        "learning": {"kind": "geometric-oracle", "q": 0.9},
        "rho": 1.0,
        "schedule": {"kind": "power", "c": 1.0, "p": 2.5},
        "K": 2000,
        "seed": 0,
        "inner": {"rule": "adaptive", "restart": False},
        "outputs": {"trace_csv": "trace.csv", "report_json": "report.json",
                    "trace_json": "trace.json", "plotdata_csv": "plotdata.csv"},
    }


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class _stage:
    """Context manager tagging any exception with the pipeline stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


@dataclasses.dataclass
class ExperimentConfig:
    problem: dict
    learning: dict
    rho: float
    schedule: dict
    K: int
    seed: int
    inner: dict = dataclasses.field(default_factory=dict)
    outputs: dict = dataclasses.field(default_factory=dict)
    base_dir: Path = dataclasses.field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        missing = [k for k in ("problem", "learning", "rho", "schedule", "K", "seed") if k not in d]
        if missing:
            raise ConfigurationError(f"config is missing {', '.join(missing)}")
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        seed = d["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigurationError("seed must be a nonnegative integer")
        cfg = cls(problem=dict(d["problem"]), learning=dict(d["learning"]), rho=float(d["rho"]),
                  schedule=dict(d["schedule"]), K=int(d["K"]), seed=seed,
                  inner=dict(d.get("inner", {})), outputs=dict(d.get("outputs", {})),
                  base_dir=Path(base_dir) if base_dir is not None else Path.cwd())
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {"problem": self.problem, "learning": self.learning, "rho": self.rho,
                "schedule": self.schedule, "K": self.K, "seed": self.seed,
                "inner": self.inner, "outputs": self.outputs}

    def resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    def validate(self):
        """Cheap checks that run before any iteration or output."""
        PenaltyConfig(self.rho)
        InexactnessSchedule.from_dict(self.schedule)
        InnerOptions(**self.inner)
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        sources = [k for k in ("file", "inline", "generate") if k in self.problem]
        if len(sources) != 1:
            raise ConfigurationError("problem needs exactly one of file, inline, generate")
        for key in ("file", "fixture"):
            if key in self.problem and not self.resolve(self.problem[key]).is_file():
                raise ConfigurationError(f"problem {key} {self.problem[key]!r} does not exist")
        if "generate" not in self.problem and not ({"theta_star", "fixture"} & set(self.problem)):
            if self.learning.get("kind") == "geometric-oracle":
                raise ConfigurationError("a geometric-oracle learner needs theta_star or a fixture file")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {str(path)!r} does not exist")
    return ExperimentConfig.from_dict(json.loads(path.read_text()), base_dir=path.parent)


# --------------------------------------------------------------------------
# Pipeline
# --------------------------------------------------------------------------


@dataclasses.dataclass
class PipelineResult:
    problem: MisspecifiedProblem
    trace: RunTrace
    report: dict
    constants: object
    ground_truth: object

    @property
    def passed(self) -> bool:
        return bool(self.report["pass"])


def build_problem(config: ExperimentConfig):
    """Return ``(problem, theta_star or None)`` from the problem block."""
    block = config.problem
    if "generate" in block:
        g = dict(block["generate"])
        kind = g.pop("kind", "random-qp")
        return generate_benchmark(kind, config.seed, **g)
    if "file" in block:
        p = MisspecifiedProblem.from_json(config.resolve(block["file"]).read_text())
    else:
        p = MisspecifiedProblem.from_dict(block["inline"])
    theta_star = block.get("theta_star")
    if "fixture" in block:
        theta_star = json.loads(config.resolve(block["fixture"]).read_text())["theta_star"]
    return p, None if theta_star is None else np.asarray(theta_star, dtype=float)


def build_learning(config: ExperimentConfig, p: MisspecifiedProblem, theta_star) -> LearningSequence:
    block = dict(config.learning)
    if block.pop("perfect_information", False):
        if theta_star is None:
            raise ConfigurationError("perfect information needs theta_star")
        block["theta_0"] = np.asarray(theta_star).tolist()
    return LearningSequence.from_dict(block, p.theta_box, theta_star)


def run_pipeline(config: ExperimentConfig) -> PipelineResult:
    """generate -> run -> check, without touching the filesystem."""
    with _stage("generate"):
        p, theta_star = build_problem(config)
        seq = build_learning(config, p, theta_star)
        sched = InexactnessSchedule.from_dict(config.schedule)
        cfg = PenaltyConfig(config.rho)
        options = InnerOptions(**config.inner)
    with _stage("run"):
        _, trace = run(p, cfg, seq, sched, config.K, options=options)
    with _stage("check"):
        gt = solve_ground_truth(p, fixture_target(seq))
        consts = compute_constants(p, cfg, sched, seq.certificate, gt)
        annotate_trace(trace, p, cfg, gt, consts)
        report = check_all(trace, p, cfg, gt, consts)
        report["config"] = config.to_dict()
        report["fingerprint"] = trace.fingerprint
    return PipelineResult(p, trace, report, consts, gt)


def emit_plotdata(trace: RunTrace, consts) -> str:
    """Columnar CSV of measured series next to their envelopes, one row per k = 1..K.

    ``dual_gap`` is the lower end of the bracket on f* - g(lam_bar_k) and is
    blank where the trace was not annotated.  Primal columns refer to the
    average of ``x_0..x_k``; the last row has no such average and is blank.
    """
    K = len(trace)
    dual = trace.diagnostic("dual_gap_lo")
    infeas = trace.diagnostic("infeasibility")
    primal = trace.diagnostic("primal_gap")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    fmt = lambda v: "" if not np.isfinite(v) else repr(float(v))  # noqa: E731
    for k in range(1, K + 1):
        inf_k = infeas[k] if k < K else np.nan
        prim_k = primal[k] if k < K else np.nan
        w.writerow([k, fmt(dual[k - 1]), fmt(consts.B_g / k), fmt(inf_k), fmt(consts.V(k)),
                    fmt(prim_k), fmt(consts.U / k), fmt(consts.lower_envelope(k))])
    return buf.getvalue()


def _atomic_write(files: dict):
    """Write all files via temporaries, then rename them into place."""
    staged = []
    try:
        for path, text in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _output_paths(config: ExperimentConfig, out_dir) -> dict:
    outs = {"trace_csv": "trace.csv", "report_json": "report.json", "trace_json": "trace.json"}
    outs.update(config.outputs)
    base = Path(out_dir) if out_dir is not None else Path.cwd()
    return {k: (Path(v) if Path(v).is_absolute() else base / v) for k, v in outs.items() if v}


def run_experiment(config: ExperimentConfig, out_dir=None) -> int:
    """Full pipeline plus outputs; returns the exit status."""
    result = run_pipeline(config)
    paths = _output_paths(config, out_dir)
    files = {
        paths["trace_csv"]: result.trace.to_csv(),
        paths["trace_json"]: result.trace.to_json(),
        paths["report_json"]: json.dumps(result.report, indent=2, sort_keys=True),
    }
    if "plotdata_csv" in paths:
        files[paths["plotdata_csv"]] = emit_plotdata(result.trace, result.constants)
    with _stage("write"):
        _atomic_write(files)
    return EXIT_PASS if result.passed else EXIT_FAIL


def _load_trace(config, out_dir):
    path = _output_paths(config, out_dir)["trace_json"]
    if not path.is_file():
        raise ConfigurationError(f"trace {str(path)!r} not found; run the experiment first")
    return RunTrace.from_dict(json.loads(path.read_text()))


def _recheck(config: ExperimentConfig, out_dir):
    with _stage("generate"):
        p, theta_star = build_problem(config)
        seq = build_learning(config, p, theta_star)
        sched = InexactnessSchedule.from_dict(config.schedule)
        cfg = PenaltyConfig(config.rho)
    with _stage("load"):
        trace = _load_trace(config, out_dir)
        if len(trace) != config.K:
            raise ConfigurationError(f"trace has {len(trace)} records, config asks for K={config.K}")
    with _stage("check"):
        gt = solve_ground_truth(p, fixture_target(seq))
        consts = compute_constants(p, cfg, sched, seq.certificate, gt)
        report = check_all(trace, p, cfg, gt, consts)
        report["config"] = config.to_dict()
        report["fingerprint"] = trace.fingerprint
    return trace, consts, report


def check_experiment(config: ExperimentConfig, out_dir=None) -> int:
    _, _, report = _recheck(config, out_dir)
    with _stage("write"):
        _atomic_write({_output_paths(config, out_dir)["report_json"]:
                       json.dumps(report, indent=2, sort_keys=True)})
    return EXIT_PASS if report["pass"] else EXIT_FAIL


def plotdata_experiment(config: ExperimentConfig, out_dir=None) -> int:
    trace, consts, _ = _recheck(config, out_dir)
    path = _output_paths(config, out_dir).get("plotdata_csv") or (
        (Path(out_dir) if out_dir else Path.cwd()) / "plotdata.csv")
    with _stage("write"):
        _atomic_write({path: emit_plotdata(trace, consts)})
    return EXIT_PASS


def generate_experiment(config: ExperimentConfig, out_dir=None) -> int:
    if "generate" not in config.problem:
        raise StageError("generate", ConfigurationError("config has no problem.generate block"))
    with _stage("generate"):
        p, theta_star = build_problem(config)
    base = Path(out_dir) if out_dir is not None else Path.cwd()
    fixture = {"theta_star": theta_star.tolist(),
               "strictly_feasible_point": p.meta.get("strictly_feasible_point")}
    with _stage("write"):
        _atomic_write({base / "problem.json": p.to_json(),
                       base / "fixture.json": json.dumps(fixture, sort_keys=True)})
    return EXIT_PASS


VERBS = {
    "generate": generate_experiment,
    "run": run_experiment,
    "check": check_experiment,
    "plotdata": plotdata_experiment,
}


def _prepare_config(path: Optional[str], seed, K) -> ExperimentConfig:
    with _stage("config"):
        if path is None:
            raw = acceptance_config()
            base = Path.cwd()
        else:
            p = Path(path)
            if not p.is_file():
                raise ConfigurationError(f"config file {path!r} does not exist")
            raw = json.loads(p.read_text())
            base = p.parent
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw["seed"] = seed
        if K is not None:
            raw["K"] = K
        return ExperimentConfig.from_dict(raw, base_dir=base)


def _execute(job) -> tuple:
    verb, path, seed, K, out = job
    try:
        config = _prepare_config(path, seed, K)
        return VERBS[verb](config, out), None
    except StageError as exc:
        return EXIT_ERROR, f"misal: [{exc.stage}] {path or '<acceptance>'}: {type(exc.cause).__name__}: {exc.cause}"


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misal", description=__doc__.splitlines()[0])
    parser.add_argument("verb", choices=sorted(VERBS))
    parser.add_argument("--config", action="append",
                        help="experiment config JSON (repeatable; default: built-in acceptance benchmark)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--k", type=int, dest="K", help="override the horizon K")
    parser.add_argument("--out", help="output directory (default: current directory)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configs = args.config or [None]
    jobs = []
    for i, path in enumerate(configs):
        out = args.out
        if out is not None and len(configs) > 1:
            out = str(Path(out) / f"{i:02d}-{Path(path).stem}")
        jobs.append((args.verb, path, args.seed, args.K, out))
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_execute, jobs))
    else:
        results = [_execute(job) for job in jobs]
    for code, err in results:
        if err:
            print(err, file=sys.stderr)
    return max(code for code, _ in results)


if __name__ == "__main__":
    sys.exit(main())
