"""Parametrized problem model and the augmented-Lagrangian primitives.

A problem instance is the pair

    f(x; theta) = 1/2 x' Q(theta) x + c(theta)' x
    h(x; theta) = A(theta) x + b(theta)

with every data block affine in ``theta`` (``Q(theta) = Q0 + sum_i theta_i Qk[i]``
and so on), a simple feasible set ``X`` that admits an exact Euclidean
projection, and a coordinate box ``Theta`` of admissible parameters.

All objects are immutable after construction and every function here is
pure, so instances can be shared freely between threads.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, ContractError

# Repository-wide numerical tolerances.
ALGEBRA_TOL = 1e-10
GRADIENT_TOL = 1e-6
PSD_TOL = 1e-10

# Vertex enumeration is exact for the certificates but exponential in dimension.
_MAX_VERTEX_DIM = 16


def _vec(a, name="vector") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite entries")
    return arr


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# Feasible sets
# --------------------------------------------------------------------------

SET_KINDS = ("whole-space", "box", "simplex", "ball")


@dataclasses.dataclass(frozen=True, eq=False)
class SimpleSet:
    """Closed convex set with a cheap exact projection.

    Use the ``box``, ``simplex``, ``ball`` and ``whole_space`` constructors.
    The simplex is ``{x >= 0, sum(x) = radius}``.
    """

    kind: str
    dim: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SET_KINDS:
            raise ConfigurationError(f"unsupported set kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("set dimension must be positive")
        if self.kind == "box":
            lo, hi = _readonly(self.lower), _readonly(self.upper)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ConfigurationError("box bounds must match the set dimension")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ConfigurationError("box bounds must be finite")
            if np.any(lo > hi):
                raise ConfigurationError("empty box: lower > upper")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind == "simplex":
            if self.radius is None or not np.isfinite(self.radius) or self.radius <= 0:
                raise ConfigurationError("simplex radius must be positive and finite")
        elif self.kind == "ball":
            c = _readonly(self.center)
            if c.shape != (self.dim,):
                raise ConfigurationError("ball center must match the set dimension")
            if self.radius is None or not np.isfinite(self.radius) or self.radius < 0:
                raise ConfigurationError("ball radius must be nonnegative and finite")
            object.__setattr__(self, "center", c)

    @classmethod
    def box(cls, lower, upper) -> "SimpleSet":
        lower = np.asarray(lower, dtype=float)
        return cls("box", lower.size, lower=lower, upper=np.asarray(upper, dtype=float))

    @classmethod
    def simplex(cls, dim: int, radius: float = 1.0) -> "SimpleSet":
        return cls("simplex", int(dim), radius=float(radius))

    @classmethod
    def ball(cls, center, radius: float) -> "SimpleSet":
        center = np.asarray(center, dtype=float)
        return cls("ball", center.size, center=center, radius=float(radius))

    @classmethod
    def whole_space(cls, dim: int) -> "SimpleSet":
        return cls("whole-space", int(dim))

    @property
    def compact(self) -> bool:
        return self.kind != "whole-space"

    @property
    def polyhedral(self) -> bool:
        return self.kind in ("box", "simplex")

    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.upper - self.lower))
        if self.kind == "simplex":
            return float(np.sqrt(2.0) * self.radius) if self.dim > 1 else 0.0
        if self.kind == "ball":
            return 2.0 * self.radius
        return float("inf")

    def max_norm(self) -> float:
        """Largest Euclidean norm of a point in the set."""
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))
        if self.kind == "simplex":
            return float(self.radius)
        if self.kind == "ball":
            return float(np.linalg.norm(self.center) + self.radius)
        return float("inf")

    def coordinate_bound(self) -> np.ndarray:
        """Per-coordinate bound on ``|x_i|`` over the set."""
        if self.kind == "box":
            return np.maximum(np.abs(self.lower), np.abs(self.upper))
        if self.kind == "simplex":
            return np.full(self.dim, float(self.radius))
        if self.kind == "ball":
            return np.abs(self.center) + self.radius
        return np.full(self.dim, np.inf)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))
        if self.kind == "simplex":
            return bool(np.all(x >= -tol) and abs(x.sum() - self.radius) <= tol * max(1.0, self.dim))
        if self.kind == "ball":
            return bool(np.linalg.norm(x - self.center) <= self.radius + tol)
        return bool(np.all(np.isfinite(x)))

    def vertices(self) -> np.ndarray:
        """Extreme points of a polytope, one per row."""
        if self.kind == "box":
            if self.dim > _MAX_VERTEX_DIM:
                raise ConfigurationError("box too large for vertex enumeration")
            corners = itertools.product(*zip(self.lower, self.upper))
            return np.array(list(corners), dtype=float)
        if self.kind == "simplex":
            return self.radius * np.eye(self.dim)
        raise ConfigurationError(f"{self.kind} has no finite vertex set")

    def linear_description(self):
        """Return ``(G, g, E, e)`` with the set equal to ``{G x <= g, E x = e}``."""
        n = self.dim
        if self.kind == "box":
            G = np.vstack([np.eye(n), -np.eye(n)])
            g = np.concatenate([self.upper, -self.lower])
            return G, g, np.zeros((0, n)), np.zeros(0)
        if self.kind == "simplex":
            return -np.eye(n), np.zeros(n), np.ones((1, n)), np.array([self.radius])
        raise ConfigurationError(f"{self.kind} is not polyhedral")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "dim": self.dim}
        if self.kind == "box":
            out.update(lower=self.lower.tolist(), upper=self.upper.tolist())
        elif self.kind == "simplex":
            out.update(radius=self.radius)
        elif self.kind == "ball":
            out.update(center=self.center.tolist(), radius=self.radius)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SimpleSet":
        kind = d.get("kind")
        if kind == "box":
            return cls.box(d["lower"], d["upper"])
        if kind == "simplex":
            return cls.simplex(d["dim"], d.get("radius", 1.0))
        if kind == "ball":
            return cls.ball(d["center"], d["radius"])
        if kind == "whole-space":
            return cls.whole_space(d["dim"])
        raise ConfigurationError(f"unsupported set kind {kind!r}")


def _project_simplex(v: np.ndarray, radius: float) -> np.ndarray:
    # Sort-based exact method; the threshold is unique so ties are harmless.
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def project(set_: SimpleSet, point) -> np.ndarray:
    """Euclidean projection of ``point`` onto ``set_``."""
    x = _vec(point, "point")
    if x.shape != (set_.dim,):
        raise ContractError(f"point has dimension {x.size}, set has {set_.dim}")
    if set_.kind == "box":
        return np.clip(x, set_.lower, set_.upper)
    if set_.kind == "simplex":
        return _project_simplex(x, set_.radius)
    if set_.kind == "ball":
        d = x - set_.center
        nd = np.linalg.norm(d)
        if nd <= set_.radius:
            return x.copy()
        return set_.center + d * (set_.radius / nd)
    if set_.kind == "whole-space":
        return x.copy()
    raise ConfigurationError(f"unsupported set kind {set_.kind!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class ThetaBox:
    """Compact coordinate box of admissible parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _readonly(self.lower), _readonly(self.upper)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ConfigurationError("theta box bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(lo > hi):
            raise ConfigurationError("theta box must be finite and nonempty")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaBox":
        return cls(np.asarray(d["lower"], dtype=float), np.asarray(d["upper"], dtype=float))


# --------------------------------------------------------------------------
# Problem model
# --------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Certificates:
    """Lipschitz-type constants of the problem family.

    ``L_f``: theta-Lipschitz constant of f, uniform over X.
    ``L_h``: theta-Lipschitz constant of h, uniform over X.
    ``sigma_h``: bound on the x-Lipschitz constant of h over Theta.
    ``kappa_X``: pseudo-Lipschitz modulus of the Lagrangian minimizer set;
    taken on trust from the caller.
    """

    L_f: float
    L_h: float
    sigma_h: float
    kappa_X: float

    def __post_init__(self):
        for name in ("L_f", "L_h", "sigma_h", "kappa_X"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"certificate {name} must be finite and >= 0")

    @property
    def M_h(self) -> float:
        """Working theta-Lipschitz constant of the dual gradient: L_h + kappa_X sigma_h."""
        return self.L_h + self.kappa_X * self.sigma_h

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Certificates":
        return cls(float(d["L_f"]), float(d["L_h"]), float(d["sigma_h"]), float(d["kappa_X"]))


@dataclasses.dataclass(frozen=True)
class ConvexPlugin:
    """General convex objective supplied as callables of ``(x, theta)``.

    ``smoothness(theta)`` must return an upper bound on the x-gradient
    Lipschitz constant; without it the inner solver cannot be configured.
    """

    value: Callable[[np.ndarray, np.ndarray], float]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    smoothness: Optional[Callable[[np.ndarray], float]] = None


class Snapshot(NamedTuple):
    """Problem data frozen at one parameter value."""

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray


@dataclasses.dataclass(frozen=True, eq=False)
class MisspecifiedProblem:
    """Quadratic objective and affine constraints, both affine in theta."""

    Q0: np.ndarray
    Qk: np.ndarray
    c0: np.ndarray
    ck: np.ndarray
    A0: np.ndarray
    Ak: np.ndarray
    b0: np.ndarray
    bk: np.ndarray
    feasible_set: SimpleSet
    theta_box: ThetaBox
    certificates: Certificates
    plugin: Optional[ConvexPlugin] = None
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for name in ("Q0", "Qk", "c0", "ck", "A0", "Ak", "b0", "bk"):
            arr = _readonly(getattr(self, name))
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        n, m, d = self.c0.size, self.b0.size, self.theta_box.dim
        shapes = {
            "Q0": (n, n), "Qk": (d, n, n), "ck": (d, n),
            "A0": (m, n), "Ak": (d, m, n), "bk": (d, m),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ConfigurationError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        if self.feasible_set.dim != n:
            raise ConfigurationError("feasible set dimension differs from n")
        if not (np.allclose(self.Q0, self.Q0.T) and np.allclose(self.Qk, self.Qk.transpose(0, 2, 1))):
            raise ConfigurationError("Q blocks must be symmetric")

    @property
    def n(self) -> int:
        return self.c0.size

    @property
    def m(self) -> int:
        return self.b0.size

    @property
    def d(self) -> int:
        return self.theta_box.dim

    def _theta(self, theta) -> np.ndarray:
        theta = _vec(theta, "theta")
        if theta.shape != (self.d,):
            raise ContractError(f"theta has dimension {theta.size}, expected {self.d}")
        return theta

    def Q(self, theta) -> np.ndarray:
        return self.Q0 + np.tensordot(self._theta(theta), self.Qk, axes=1)

    def c(self, theta) -> np.ndarray:
        return self.c0 + self._theta(theta) @ self.ck

    def A(self, theta) -> np.ndarray:
        return self.A0 + np.tensordot(self._theta(theta), self.Ak, axes=1)

    def b(self, theta) -> np.ndarray:
        return self.b0 + self._theta(theta) @ self.bk

    def snapshot(self, theta) -> Snapshot:
        return Snapshot(self.Q(theta), self.c(theta), self.A(theta), self.b(theta))

    def objective(self, x, theta) -> float:
        x = self._x(x)
        if self.plugin is not None:
            return float(self.plugin.value(x, self._theta(theta)))
        return float(0.5 * x @ self.Q(theta) @ x + self.c(theta) @ x)

    def objective_grad(self, x, theta) -> np.ndarray:
        x = self._x(x)
        if self.plugin is not None:
            return np.asarray(self.plugin.grad(x, self._theta(theta)), dtype=float)
        return self.Q(theta) @ x + self.c(theta)

    def constraints(self, x, theta) -> np.ndarray:
        return self.A(theta) @ self._x(x) + self.b(theta)

    def _x(self, x) -> np.ndarray:
        x = _vec(x, "x")
        if x.shape != (self.n,):
            raise ContractError(f"x has dimension {x.size}, expected {self.n}")
        return x

    def check_psd(self, tol: float = PSD_TOL, samples: int = 0, seed: int = 0) -> bool:
        """Eigenvalue test of Q(theta) at every Theta vertex plus random samples.

        Q is affine in theta, so PSD at the vertices implies PSD on all of Theta.
        """
        if self.plugin is not None:
            return True
        pts = [self.theta_box.vertices()] if self.d <= 12 else []
        if samples:
            pts.append(self.theta_box.sample(np.random.default_rng(seed), samples))
        for theta in np.vstack(pts) if pts else self.theta_box.sample(np.random.default_rng(seed), 64):
            if np.linalg.eigvalsh(self.Q(theta)).min() < -tol:
                return False
        return True

    def with_certificates(self, certificates: Certificates) -> "MisspecifiedProblem":
        return dataclasses.replace(self, certificates=certificates)

    def to_dict(self) -> dict:
        out = {
            "n": self.n, "m": self.m, "d": self.d,
            "Q0": self.Q0.tolist(), "Qk": self.Qk.tolist(),
            "c0": self.c0.tolist(), "ck": self.ck.tolist(),
            "A0": self.A0.tolist(), "Ak": self.Ak.tolist(),
            "b0": self.b0.tolist(), "bk": self.bk.tolist(),
            "set": self.feasible_set.to_dict(),
            "theta_box": self.theta_box.to_dict(),
            "certificates": self.certificates.to_dict(),
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MisspecifiedProblem":
        try:
            n, m, dd = int(d["n"]), int(d["m"]), int(d["d"])

            def arr(key, shape):
                a = np.asarray(d[key], dtype=float)
                return a.reshape(shape) if a.size == int(np.prod(shape)) else a

            fs = dict(d["set"])
            fs.setdefault("dim", n)
            return cls(
                Q0=arr("Q0", (n, n)), Qk=arr("Qk", (dd, n, n)),
                c0=arr("c0", (n,)), ck=arr("ck", (dd, n)),
                A0=arr("A0", (m, n)), Ak=arr("Ak", (dd, m, n)),
                b0=arr("b0", (m,)), bk=arr("bk", (dd, m)),
                feasible_set=SimpleSet.from_dict(fs),
                theta_box=ThetaBox.from_dict(d["theta_box"]),
                certificates=Certificates.from_dict(d["certificates"]),
                meta=dict(d.get("meta", {})),
            )
        except KeyError as exc:
            raise ConfigurationError(f"problem document lacks field {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "MisspecifiedProblem":
        return cls.from_dict(json.loads(text))


def affine_problem(Q0, c0, A0, b0, feasible_set, theta_box, *, Qk=None, ck=None,
                   Ak=None, bk=None, certificates=None, kappa_X=0.0, meta=None):
    """Convenience constructor; missing theta blocks default to zero.

    When ``certificates`` is omitted they are computed with
    :func:`compute_certificates` using the supplied ``kappa_X``.
    """
    Q0 = np.atleast_2d(np.asarray(Q0, dtype=float))
    c0 = np.atleast_1d(np.asarray(c0, dtype=float))
    A0 = np.asarray(A0, dtype=float).reshape(-1, c0.size)
    b0 = np.atleast_1d(np.asarray(b0, dtype=float))
    n, m, d = c0.size, b0.size, theta_box.dim
    Qk = np.zeros((d, n, n)) if Qk is None else np.asarray(Qk, dtype=float)
    ck = np.zeros((d, n)) if ck is None else np.asarray(ck, dtype=float)
    Ak = np.zeros((d, m, n)) if Ak is None else np.asarray(Ak, dtype=float)
    bk = np.zeros((d, m)) if bk is None else np.asarray(bk, dtype=float)
    placeholder = Certificates(0.0, 0.0, 0.0, float(kappa_X))
    p = MisspecifiedProblem(Q0, Qk, c0, ck, A0, Ak, b0, bk, feasible_set, theta_box,
                            certificates or placeholder, meta=dict(meta or {}))
    if certificates is None:
        p = p.with_certificates(compute_certificates(p, kappa_X))
    return p


def compute_certificates(p: MisspecifiedProblem, kappa_X: float) -> Certificates:
    """Lipschitz certificates for the affine/quadratic family.

    The theta-derivatives of f and h do not depend on theta, so the
    uniform constants are maxima over X.  ``L_h`` is the norm of the vector
    of per-row constants (each exact at a vertex of a polytope X), which
    bounds both the componentwise and the Euclidean Lipschitz constants.
    ``sigma_h`` is the largest spectral norm of A(theta) over Theta, attained
    at a vertex because the norm is convex in theta.
    """
    X = p.feasible_set
    if not X.compact:
        raise ConfigurationError("certificates need a compact feasible set")

    # L_f: |1/2 x'Qk x + ck'x| bounded two ways, keep the smaller per component.
    R = X.max_norm()
    u = X.coordinate_bound()
    per = []
    for Qi, ci in zip(p.Qk, p.ck):
        b1 = 0.5 * np.linalg.norm(Qi, 2) * R**2 + np.linalg.norm(ci) * R
        b2 = 0.5 * u @ np.abs(Qi) @ u + np.abs(ci) @ u
        per.append(min(b1, b2))
    L_f = float(np.linalg.norm(per)) if per else 0.0

    # Row j of h has theta-gradient r_j(x) = Ak[:, j, :] x + bk[:, j].
    rows = []
    if X.polyhedral and X.dim <= _MAX_VERTEX_DIM:
        V = X.vertices()
        for j in range(p.m):
            r = V @ p.Ak[:, j, :].T + p.bk[:, j]
            rows.append(np.linalg.norm(r, axis=1).max())
    else:
        if X.kind == "ball":
            center, spread = X.center, X.radius
        else:
            center = 0.5 * (X.lower + X.upper)
            spread = 0.5 * np.linalg.norm(X.upper - X.lower)
        for j in range(p.m):
            Mj = p.Ak[:, j, :]
            rows.append(np.linalg.norm(Mj @ center + p.bk[:, j]) + np.linalg.norm(Mj, 2) * spread)
    L_h = float(np.linalg.norm(rows)) if rows else 0.0

    sigma_h = max(float(np.linalg.norm(p.A(t), 2)) for t in p.theta_box.vertices()) if p.m else 0.0
    return Certificates(L_f=L_f, L_h=L_h, sigma_h=sigma_h, kappa_X=float(kappa_X))


@dataclasses.dataclass(frozen=True)
class PenaltyConfig:
    rho: float

    def __post_init__(self):
        if not np.isfinite(self.rho) or self.rho <= 0:
            raise ConfigurationError(f"rho must be positive and finite, got {self.rho}")


# --------------------------------------------------------------------------
# Augmented Lagrangian primitives
# --------------------------------------------------------------------------


def dist_to_nonpos_orthant(v) -> float:
    """Distance from ``v`` to the nonpositive orthant, ``||max(v, 0)||``."""
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(np.maximum(v, 0.0)))


def _check_dims(p: MisspecifiedProblem, x, lam, theta):
    x = p._x(x)
    lam = _vec(lam, "lambda")
    if lam.shape != (p.m,):
        raise ContractError(f"lambda has dimension {lam.size}, expected {p.m}")
    return x, lam, p._theta(theta)


def eval_aug_lagrangian(p: MisspecifiedProblem, cfg: PenaltyConfig, x, lam, theta) -> float:
    """L_rho = f + rho/2 d^2(lam/rho + h) - ||lam||^2 / (2 rho)."""
    x, lam, theta = _check_dims(p, x, lam, theta)
    rho = cfg.rho
    h = p.constraints(x, theta)
    dist = dist_to_nonpos_orthant(lam / rho + h)
    return p.objective(x, theta) + 0.5 * rho * dist**2 - lam @ lam / (2.0 * rho)


def grad_lambda_aug_lagrangian(p: MisspecifiedProblem, cfg: PenaltyConfig, x, lam, theta) -> np.ndarray:
    """Gradient of L_rho in lambda: ``h + max(-lam/rho - h, 0)``.

    Evaluated as the equivalent ``max(h, -lam/rho)``, which selects one
    operand and so avoids cancellation.
    """
    x, lam, theta = _check_dims(p, x, lam, theta)
    h = p.constraints(x, theta)
    return np.maximum(h, -lam / cfg.rho)


def grad_x_aug_lagrangian(p: MisspecifiedProblem, cfg: PenaltyConfig, x, lam, theta) -> np.ndarray:
    x, lam, theta = _check_dims(p, x, lam, theta)
    h = p.constraints(x, theta)
    return p.objective_grad(x, theta) + p.A(theta).T @ np.maximum(lam + cfg.rho * h, 0.0)


def multiplier_update(lam, cfg: PenaltyConfig, grad) -> np.ndarray:
    """Multiplier step ``lam + rho * grad``.

    Components that cancel to rounding level are snapped to exactly zero so
    that the step applied to the lambda-gradient stays in the nonnegative
    orthant bit-for-bit.
    """
    lam = np.asarray(lam, dtype=float)
    step = cfg.rho * np.asarray(grad, dtype=float)
    out = lam + step
    noise = 4.0 * np.finfo(float).eps * (np.abs(lam) + np.abs(step))
    out[np.abs(out) <= noise] = 0.0
    return out
