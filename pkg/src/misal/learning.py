"""Parameter estimate sequences with linear-rate certificates.

Only the estimate for index ``k`` is ever requested at outer iteration ``k``;
the limit parameter stays private to the sequence object and only the
scalar certificate ``(q, ||theta_0 - theta_limit||)`` is published.
"""

from __future__ import annotations

import dataclasses
import threading
from typing import Optional

import numpy as np

from .errors import CertificationError, ConfigurationError
from .problem import ThetaBox

_ENVELOPE_RTOL = 1e-12
_ENVELOPE_ATOL = 1e-14
_LIMIT_MAX_ITER = 100_000


@dataclasses.dataclass(frozen=True)
class RateCertificate:
    q: float
    initial_gap: float

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise ConfigurationError(f"q must lie in (0, 1), got {self.q}")
        if not np.isfinite(self.initial_gap) or self.initial_gap < 0:
            raise ConfigurationError("initial_gap must be finite and >= 0")

    def error_bound(self, k: int) -> float:
        return self.q**k * self.initial_gap

    def summed_error_bound(self) -> float:
        """Upper bound on the sum of ||theta_i - theta_limit|| over all i."""
        return self.initial_gap / (1.0 - self.q)


class LearningSequence:
    """Deterministic estimate sequence; build with the classmethods."""

    def __init__(self, kind, theta_box: ThetaBox, theta_0, q, *, target, rotation=None,
                 hessian=None, linear=None, step=None):
        self.kind = kind
        self.theta_box = theta_box
        self.theta_0 = np.asarray(theta_0, dtype=float)
        self.q = float(q)
        self.rotation = None if rotation is None else np.asarray(rotation, dtype=float)
        self.hessian = None if hessian is None else np.asarray(hessian, dtype=float)
        self.linear = None if linear is None else np.asarray(linear, dtype=float)
        self.step = None if step is None else float(step)
        self._target = np.asarray(target, dtype=float)
        self._cache = [self.theta_0.copy()]
        self._flags = [False]
        self._lock = threading.Lock()
        if self.theta_0.shape != (theta_box.dim,):
            raise ConfigurationError("theta_0 dimension differs from the theta box")
        if not theta_box.contains(self.theta_0):
            raise ConfigurationError("theta_0 must lie in Theta")

    # -- constructors -----------------------------------------------------

    @classmethod
    def geometric_oracle(cls, theta_star, theta_0, q, theta_box: ThetaBox, rotation=None):
        """theta_k = theta* + R^k q^k (theta_0 - theta*), clipped to Theta."""
        theta_star = np.asarray(theta_star, dtype=float)
        if not theta_box.contains(theta_star):
            raise ConfigurationError("theta_star must lie in Theta")
        if not (0.0 < q < 1.0):
            raise ConfigurationError(f"q must lie in (0, 1), got {q}")
        if rotation is not None:
            R = np.asarray(rotation, dtype=float)
            if R.shape != (theta_box.dim, theta_box.dim) or not np.allclose(R.T @ R, np.eye(theta_box.dim)):
                raise ConfigurationError("rotation must be an orthogonal d x d matrix")
        return cls("geometric-oracle", theta_box, theta_0, q, target=theta_star, rotation=rotation)

    @classmethod
    def iterative_learner(cls, hessian, linear, theta_0, step, theta_box: ThetaBox):
        """Projected gradient descent on l(theta) = 1/2 theta'H theta - linear'theta."""
        H = np.asarray(hessian, dtype=float)
        g = np.asarray(linear, dtype=float)
        eig = np.linalg.eigvalsh(0.5 * (H + H.T))
        if eig.min() <= 0:
            raise ConfigurationError("learning loss must be strongly convex")
        q = float(np.max(np.abs(1.0 - step * eig)))
        limit = _learner_limit(H, g, step, theta_box, q)
        return cls("iterative-learner", theta_box, theta_0, max(q, np.finfo(float).tiny),
                   target=limit, hessian=H, linear=g, step=step)

    # -- iteration --------------------------------------------------------

    def estimate(self, k: int):
        """Return ``(theta_k, projected)`` where ``projected`` flags a clip onto Theta."""
        if k < 0:
            raise ValueError("k must be nonnegative")
        if self.kind == "geometric-oracle":
            dev = self.theta_0 - self._target
            if self.rotation is not None:
                dev = np.linalg.matrix_power(self.rotation, k) @ dev
            raw = self._target + self.q**k * dev
            clipped = self.theta_box.project(raw)
            return clipped, bool(np.any(clipped != raw))
        with self._lock:
            while len(self._cache) <= k:
                prev = self._cache[-1]
                raw = prev - self.step * (self.hessian @ prev - self.linear)
                nxt = self.theta_box.project(raw)
                self._cache.append(nxt)
                self._flags.append(bool(np.any(nxt != raw)))
            return self._cache[k].copy(), self._flags[k]

    @property
    def certificate(self) -> RateCertificate:
        return RateCertificate(self.q, float(np.linalg.norm(self.theta_0 - self._target)))

    def to_dict(self, include_target: bool = False) -> dict:
        out = {"kind": self.kind, "q": self.q, "theta_0": self.theta_0.tolist()}
        if self.kind == "geometric-oracle":
            if self.rotation is not None:
                out["rotation"] = self.rotation.tolist()
            if include_target:
                out["theta_star"] = self._target.tolist()
        else:
            out["step"] = self.step
            out["loss"] = {"hessian": self.hessian.tolist(), "linear": self.linear.tolist()}
        return out

    @classmethod
    def from_dict(cls, d: dict, theta_box: ThetaBox, theta_star=None) -> "LearningSequence":
        kind = d.get("kind")
        theta_0 = d.get("theta_0", theta_box.upper.tolist())
        if kind == "geometric-oracle":
            target = d.get("theta_star", theta_star)
            if target is None:
                raise ConfigurationError("geometric-oracle needs theta_star")
            return cls.geometric_oracle(target, theta_0, float(d["q"]), theta_box, d.get("rotation"))
        if kind == "iterative-learner":
            loss = d["loss"]
            return cls.iterative_learner(loss["hessian"], loss["linear"], theta_0, float(d["step"]), theta_box)
        raise ConfigurationError(f"unknown learning kind {kind!r}")


def _learner_limit(H, g, step, theta_box: ThetaBox, q: float) -> np.ndarray:
    try:
        free = np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        free = None
    if free is not None and theta_box.contains(free):
        return free
    if q >= 1.0:
        raise CertificationError(f"step {step} gives contraction factor {q} >= 1")
    theta = theta_box.project(np.zeros_like(g))
    for _ in range(_LIMIT_MAX_ITER):
        nxt = theta_box.project(theta - step * (H @ theta - g))
        if np.array_equal(nxt, theta):
            break
        theta = nxt
    return theta


def next_estimate(seq: LearningSequence, k: int) -> np.ndarray:
    """The estimate revealed at outer iteration ``k``."""
    return seq.estimate(k)[0]


def certify(seq: LearningSequence, horizon: int) -> RateCertificate:
    """Certificate for the first ``horizon`` estimates, checked empirically."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if seq.q >= 1.0:
        raise CertificationError(f"contraction factor {seq.q} is not below 1")
    cert = seq.certificate
    for k in range(horizon + 1):
        err = float(np.linalg.norm(seq.estimate(k)[0] - seq._target))
        bound = cert.error_bound(k)
        if err > bound * (1.0 + _ENVELOPE_RTOL) + _ENVELOPE_ATOL:
            raise CertificationError(
                f"estimate {k} is {err:.3e} from the limit, above the envelope {bound:.3e}"
            )
    return cert


def fixture_target(seq: LearningSequence) -> Optional[np.ndarray]:
    """Limit parameter of a sequence; for test fixtures and ground-truth only."""
    return seq._target.copy()
