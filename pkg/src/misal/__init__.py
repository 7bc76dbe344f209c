"""Augmented Lagrangian method for constrained convex problems whose data
depend on a parameter that is learned while the optimizer runs."""

from .analysis import (
    GroundTruth,
    RateConstants,
    check_all,
    compute_constants,
    solve_ground_truth,
)
from .benchmarks import generate_benchmark
from .driver import InexactnessSchedule, InnerOptions, RunTrace, resume, run
from .learning import LearningSequence, RateCertificate, certify
from .problem import (
    Certificates,
    MisspecifiedProblem,
    PenaltyConfig,
    SimpleSet,
    ThetaBox,
    affine_problem,
)

__all__ = [
    "Certificates", "GroundTruth", "InexactnessSchedule", "InnerOptions", "LearningSequence",
    "MisspecifiedProblem", "PenaltyConfig", "RateCertificate", "RateConstants", "RunTrace",
    "SimpleSet", "ThetaBox", "affine_problem", "certify", "check_all", "compute_constants",
    "generate_benchmark", "resume", "run", "solve_ground_truth",
]
