"""Model constants, regulation rates and the limit vector fields.

Every formula of the hybrid model lives here: the four regulation rates,
their finite-K versions, the regime-indexed vector field ``g(x, i)``, its
Jacobian, the Lie bracket of the two regime fields, the planar divergence,
the positively invariant box and the generator of the limit process.

Array-valued helpers (``field``, ``jacobian_array``, ``generator``) accept
stacks of states with shape ``(..., 3)`` so that long trajectories can be
processed without Python loops.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import cached_property

import numpy as np

from .errors import ContractError, DomainError, ParameterError

# order of the packed parameter vector consumed by the compiled kernels
PARAM_NAMES = (
    "a", "a_M",
    "q1", "q2", "q3",
    "q1M", "q2M", "q3M",
    "c1", "c2", "c3",
    "c1M", "c2M", "c3M",
    "d", "dM",
    "alpha", "beta",
)

_STRICT = ("a", "a_M", "q1", "q1M", "c1", "c1M", "d", "dM")
_NONNEG = ("q2", "q3", "c2", "c3", "q2M", "q3M", "c2M", "c3M")


@dataclass(frozen=True)
class ModelParams:
    a: float
    a_M: float
    q1: float
    q2: float
    q3: float
    q1M: float
    q2M: float
    q3M: float
    c1: float
    c2: float
    c3: float
    c1M: float
    c2M: float
    c3M: float
    d: float
    dM: float
    alpha: float
    beta: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.floating, np.integer)):
                raise ParameterError(f"{f.name} must be a real number, got {v!r}")
            if not math.isfinite(v):
                raise ParameterError(f"{f.name} must be finite, got {v!r}")
            object.__setattr__(self, f.name, float(v))
        bad = [n for n in _STRICT if not getattr(self, n) > 0]
        if bad:
            raise ParameterError("must be strictly positive: " + ", ".join(bad))
        bad = [n for n in _NONNEG if getattr(self, n) < 0]
        if bad:
            raise ParameterError("must be nonnegative: " + ", ".join(bad))
        if not (self.alpha > 0 and self.beta > 0):
            raise ParameterError("amplification exponents alpha and beta must be > 0")

    @property
    def hypdep(self) -> bool:
        """True when c3 + q3 > 0, i.e. the healthy compartments feel the mutant one."""
        return self.c3 + self.q3 > 0

    @cached_property
    def packed(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=np.float64)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        missing = [n for n in PARAM_NAMES if n not in data]
        unknown = [k for k in data if k not in PARAM_NAMES]
        if missing:
            raise ParameterError("missing model parameters: " + ", ".join(missing))
        if unknown:
            raise ParameterError("unknown model parameters: " + ", ".join(unknown))
        return cls(**{n: data[n] for n in PARAM_NAMES})

    def replace(self, **changes) -> "ModelParams":
        d = self.as_dict()
        d.update(changes)
        return ModelParams(**d)

    @property
    def telegraph_on_fraction(self) -> float:
        """Stationary P(I=1) when q_M is constant (q2M = q3M = 0)."""
        return self.a_M / (self.a_M + self.q1M)


def reference_params() -> ModelParams:
    """Small hand-checkable parameter set used throughout tests and verification.

    Equilibrium (0.5, 1, 0), box [1/3, 1/2] x [2/3, 2] x [0, 1], constant q_M.
    """
    return ModelParams(
        a=1.0, a_M=0.5,
        q1=1.0, q2=0.0, q3=1.0,
        q1M=1.0, q2M=0.0, q3M=0.0,
        c1=2.0, c2=0.0, c3=0.0,
        c1M=1.0, c2M=0.0, c3M=0.0,
        d=1.0, dM=1.0,
        alpha=0.5, beta=0.5,
    )


EQUILIBRIUM_CASES = ("Q2_ZERO", "Q2_NONZERO_C2_ZERO", "GENERAL")


def random_params(rng: np.random.Generator, case: str | None = None, **fixed) -> ModelParams:
    """Draw a valid parameter set; ``case`` forces the q2/c2 pattern of the equilibrium."""
    vals = {}
    for n in _STRICT:
        vals[n] = float(np.exp(rng.uniform(np.log(0.2), np.log(5.0))))
    for n in _NONNEG:
        vals[n] = float(rng.uniform(0.0, 2.0))
    vals["alpha"] = float(rng.uniform(0.2, 1.5))
    vals["beta"] = float(rng.uniform(0.2, 1.5))
    if case == "Q2_ZERO":
        vals["q2"] = 0.0
    elif case == "Q2_NONZERO_C2_ZERO":
        vals["q2"] = float(rng.uniform(0.1, 2.0))
        vals["c2"] = 0.0
    elif case == "GENERAL":
        vals["q2"] = float(rng.uniform(0.1, 2.0))
        vals["c2"] = float(rng.uniform(0.1, 2.0))
    elif case is not None:
        raise ValueError(f"unknown equilibrium case {case!r}")
    vals.update(fixed)
    return ModelParams(**vals)


@dataclass(frozen=True)
class HybridState:
    x1: float
    x2: float
    x3: float
    i: int

    def __post_init__(self):
        if not 0.0 <= self.x1 <= 1.0:
            raise DomainError(f"x1 must lie in [0, 1], got {self.x1}")
        if self.x2 < 0 or self.x3 < 0:
            raise DomainError(f"x2, x3 must be nonnegative, got {self.x2}, {self.x3}")
        if self.i not in (0, 1):
            raise DomainError(f"regime must be 0 or 1, got {self.i}")
        object.__setattr__(self, "i", int(self.i))

    @property
    def x(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3])

    @classmethod
    def from_array(cls, x, i) -> "HybridState":
        return cls(float(x[0]), float(x[1]), float(x[2]), int(i))


@dataclass(frozen=True)
class Box:
    lo1: float
    hi1: float
    lo2: float
    hi2: float
    lo3: float
    hi3: float

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.lo1, self.lo2, self.lo3])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.hi1, self.hi2, self.hi3])

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def excursion(self, x) -> np.ndarray:
        """Sup-norm distance from ``x`` (shape (..., 3)) to the closed box; 0 inside."""
        x = np.asarray(x, dtype=float)
        out = np.maximum(self.lower - x, x - self.upper)
        return np.maximum(out, 0.0).max(axis=-1)

    def contains(self, x, inflate: float = 0.0) -> np.ndarray:
        return self.excursion(x) <= inflate

    def contains_open(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lower) & (x < self.upper), axis=-1)

    def as_list(self) -> list:
        return [[self.lo1, self.hi1], [self.lo2, self.hi2], [self.lo3, self.hi3]]


def _check_nonneg(*arrays):
    for arr in arrays:
        if np.any(np.asarray(arr) < 0):
            raise DomainError("densities x2 and x3 must be nonnegative")


def _rates(p: ModelParams, x2, x3):
    q = p.q1 + p.q2 * x2 + p.q3 * x3
    qM = p.q1M + p.q2M * x2 + p.q3M * x3
    r = p.c1 / (1.0 + p.c2 * x2 + p.c3 * x3)
    rM = p.c1M / (1.0 + p.c2M * x2 + p.c3M * x3)
    return q, qM, r, rM


def rate_functions(p: ModelParams, x2, x3):
    """Return ``(q, q_M, r, r_M)`` at scaled densities ``(x2, x3)``.

    q and q_M are affine and nondecreasing; r and r_M are bounded decreasing
    Hill-type regulations with maxima c1 and c1M.
    """
    if not isinstance(p, ModelParams):
        raise ParameterError("expected a validated ModelParams instance")
    _check_nonneg(x2, x3)
    return _rates(p, x2, x3)


def scaling_factors(p: ModelParams, K: int):
    """``(K^alpha, K^(1+alpha), K^beta)``."""
    if K < 1:
        raise DomainError(f"population scale K must be >= 1, got {K}")
    return K ** p.alpha, K ** (1.0 + p.alpha), K ** p.beta


def scaled_rate_functions(p: ModelParams, K: int, n2, n3):
    """Rates of the finite-K process at integer counts ``(n2, n3)``."""
    _, s2, s3 = scaling_factors(p, K)
    _check_nonneg(n2, n3)
    return rate_functions(p, np.asarray(n2, dtype=float) / s2, np.asarray(n3, dtype=float) / s3)


def field(p: ModelParams, x, i) -> np.ndarray:
    """Vectorized ``g(x, i)`` for x of shape (..., 3) and i broadcastable to x[..., 0]."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    q, _, r, rM = _rates(p, x2, x3)
    out = np.empty(np.broadcast_shapes(x.shape, np.shape(i) + (3,)))
    out[..., 0] = p.a - (p.a + q) * x1
    out[..., 1] = r * x1 - p.d * x2
    out[..., 2] = rM * i - p.dM * x3
    return out


def vector_field(p: ModelParams, s: HybridState) -> np.ndarray:
    return field(p, s.x, s.i)


def jacobian_array(p: ModelParams, x, i) -> np.ndarray:
    """Analytic Dg(., i)(x), shape (..., 3, 3)."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    i = np.asarray(i, dtype=float)
    T = 1.0 + p.c2 * x2 + p.c3 * x3
    TM = 1.0 + p.c2M * x2 + p.c3M * x3
    q = p.q1 + p.q2 * x2 + p.q3 * x3
    J = np.zeros(np.broadcast_shapes(x.shape[:-1], i.shape) + (3, 3))
    J[..., 0, 0] = -p.a - q
    J[..., 0, 1] = -p.q2 * x1
    J[..., 0, 2] = -p.q3 * x1
    J[..., 1, 0] = p.c1 / T
    J[..., 1, 1] = -p.c2 * p.c1 * x1 / T**2 - p.d
    J[..., 1, 2] = -p.c3 * p.c1 * x1 / T**2
    J[..., 2, 1] = -p.c1M * p.c2M * i / TM**2
    J[..., 2, 2] = -p.c1M * p.c3M * i / TM**2 - p.dM
    return J


def jacobian(p: ModelParams, s: HybridState) -> np.ndarray:
    return jacobian_array(p, s.x, s.i)


def lie_bracket_01(p: ModelParams, x) -> np.ndarray:
    """Dg(.,0)(x) g(x,1) - Dg(.,1)(x) g(x,0), vectorized over leading axes.

    Computed from the matrix product, so it is regime free by construction.
    Its first two components reduce to -q3 x1 r_M and -c3 c1 x1 r_M / T^2.
    """
    x = np.asarray(x, dtype=float)
    g0, g1 = field(p, x, 0), field(p, x, 1)
    J0, J1 = jacobian_array(p, x, 0), jacobian_array(p, x, 1)
    return np.einsum("...jk,...k->...j", J0, g1) - np.einsum("...jk,...k->...j", J1, g0)


def hormander_matrix(p: ModelParams, x) -> np.ndarray:
    """3x3 matrix with columns g(x,0), g(x,1) and their bracket."""
    x = np.asarray(x, dtype=float)
    return np.stack([field(p, x, 0), field(p, x, 1), lie_bracket_01(p, x)], axis=-1)


def hormander_rank(p: ModelParams, x, tol: float = 1e-8):
    """Numerical rank of ``hormander_matrix``; singular values are compared
    to ``tol`` times the largest one. Vectorized over leading axes of x."""
    if tol <= 0:
        raise DomainError("rank tolerance must be positive")
    sv = np.linalg.svd(hormander_matrix(p, x), compute_uv=False)
    top = sv[..., :1]
    rank = np.sum(sv > tol * top, axis=-1)
    rank = np.where(top[..., 0] > 0, rank, 0)
    return int(rank) if rank.ndim == 0 else rank


def divergence_2d(p: ModelParams, x1, x2):
    """d g1/d x1 + d g2/d x2 of the planar regime-0 field on the x3 = 0 face."""
    T = 1.0 + p.c2 * x2
    return -(p.a + p.q1 + p.q2 * x2) - p.c1 * p.c2 * x1 / T**2 - p.d


def invariant_box(p: ModelParams) -> Box:
    """Compact box mapped into itself by both regime flows.

    The lower x2 bound uses the denominator 1 + c2 c1/d + c3 c1M/dM, the
    maximum of 1 + c2 x2 + c3 x3 over the box, which keeps it finite when
    c2 = c3 = 0.
    """
    hi2 = p.c1 / p.d
    hi3 = p.c1M / p.dM
    lo1 = p.a / (p.a + p.q1 + p.q2 * hi2 + p.q3 * hi3)
    hi1 = p.a / (p.a + p.q1)
    lo2 = p.c1 * lo1 / (p.d * (1.0 + p.c2 * hi2 + p.c3 * hi3))
    return Box(lo1, hi1, lo2, hi2, 0.0, hi3)


def _require_test_function(f):
    if not (callable(getattr(f, "value", None)) and callable(getattr(f, "grad", None))):
        raise ContractError("test function must provide value(x, i) and grad(x, i)")


def generator(p: ModelParams, f, x, i) -> np.ndarray:
    """Vectorized generator ``L f(x, i)`` of the limit process.

    Transport along g(., i) plus switching 0 -> 1 at rate a_M and
    1 -> 0 at rate q_M(x2, x3).
    """
    _require_test_function(f)
    x = np.asarray(x, dtype=float)
    i = np.broadcast_to(np.asarray(i, dtype=np.int64), x.shape[:-1])
    transport = np.sum(f.grad(x, i) * field(p, x, i), axis=-1)
    f0 = f.value(x, np.zeros_like(i))
    f1 = f.value(x, np.ones_like(i))
    qM = p.q1M + p.q2M * x[..., 1] + p.q3M * x[..., 2]
    jump = p.a_M * (1 - i) * (f1 - f0) + qM * i * (f0 - f1)
    return transport + jump


def generator_apply(p: ModelParams, f, s: HybridState) -> float:
    return float(generator(p, f, s.x, s.i))
