"""Equilibrium of the quiescent-regime field, regime flows and accessible points."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, DomainError, StiffnessError
from .model import ModelParams, field, invariant_box

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12


@dataclass(frozen=True)
class EquilibriumPoint:
    p1: float
    p2: float
    p3: float
    case_tag: str
    residual: float

    @property
    def x(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])


@dataclass(frozen=True)
class FlowSegment:
    regime: int
    duration: float

    def __post_init__(self):
        if self.regime not in (0, 1):
            raise DomainError(f"regime must be 0 or 1, got {self.regime}")
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise DomainError(f"segment duration must be finite and >= 0, got {self.duration}")


def _p2_of_p1(p: ModelParams, p1: float) -> float:
    # positive root of d c2 x^2 + d x - c1 p1, written without cancellation
    if p.c2 == 0:
        return p.c1 * p1 / p.d
    return 2.0 * p.c1 * p1 / (p.d + math.sqrt(p.d * (p.d + 4.0 * p.c1 * p.c2 * p1)))


def fixed_point_map(p: ModelParams, p1):
    """p1 -> a / (a + q1 + q2 p2(p1)); strictly decreasing when q2 > 0."""
    p1 = np.asarray(p1, dtype=float)
    if p.c2 == 0:
        p2 = p.c1 * p1 / p.d
    else:
        p2 = 2.0 * p.c1 * p1 / (p.d + np.sqrt(p.d * (p.d + 4.0 * p.c1 * p.c2 * p1)))
    return p.a / (p.a + p.q1 + p.q2 * p2)


def solve_equilibrium(p: ModelParams, tol: float = 1e-14, max_iter: int = 200) -> EquilibriumPoint:
    """Unique zero of g(., 0) in the invariant box.

    Closed forms when q2 = 0 or c2 = 0; otherwise bisection on [0, 1] for the
    fixed point of the decreasing map ``fixed_point_map``.
    """
    if tol <= 0:
        raise DomainError("tolerance must be positive")
    if p.q2 == 0:
        tag = "Q2_ZERO"
        p1 = p.a / (p.a + p.q1)
    elif p.c2 == 0:
        tag = "Q2_NONZERO_C2_ZERO"
        s = p.a + p.q1
        p1 = 2.0 * p.a / (s + math.sqrt(s * s + 4.0 * p.a * p.q2 * p.c1 / p.d))
    else:
        tag = "GENERAL"
        lo, hi = 0.0, 1.0
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if float(fixed_point_map(p, mid)) > mid:
                lo = mid
            else:
                hi = mid
            if hi - lo <= tol:
                break
        else:
            raise ConvergenceError(f"bisection did not reach {tol} in {max_iter} iterations")
        p1 = 0.5 * (lo + hi)
    p2 = _p2_of_p1(p, p1)
    x = np.array([p1, p2, 0.0])
    residual = float(np.max(np.abs(field(p, x, 0))))
    return EquilibriumPoint(p1, p2, 0.0, tag, residual)


def _check_status(status):
    if status == _kernels.STEP_UNDERFLOW:
        raise StiffnessError("adaptive step size underflow")


def _check_start(x0):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3,):
        raise DomainError("state must be a 3-vector")
    if not (0.0 <= x0[0] <= 1.0 and x0[1] >= 0.0 and x0[2] >= 0.0):
        raise DomainError(f"start {x0.tolist()} is outside E = [0,1] x R+ x R+")
    return x0


def flow(p: ModelParams, x0, i: int, t: float, tol: float = DEFAULT_RTOL,
         atol: float | None = None) -> np.ndarray:
    """phi^i_t(x0): solution of dx/dt = g(x, i) at time t (adaptive DP5(4))."""
    x0 = _check_start(x0)
    if t < 0:
        raise DomainError("flow time must be nonnegative")
    if i not in (0, 1):
        raise DomainError("regime must be 0 or 1")
    atol = tol * 1e-3 if atol is None else atol
    x, status, *_ = _kernels.flow_kernel(p.packed, x0, int(i), float(t), tol, atol, False)
    _check_status(status)
    return x


def flow_path(p: ModelParams, x0, i: int, t: float, tol: float = DEFAULT_RTOL,
              atol: float | None = None):
    """Like ``flow`` but returns (times, states) at every accepted step."""
    x0 = _check_start(x0)
    atol = tol * 1e-3 if atol is None else atol
    _, status, _, ts, xs = _kernels.flow_kernel(p.packed, x0, int(i), float(t), tol, atol, True)
    _check_status(status)
    return ts, xs


def orbit_compose(p: ModelParams, x0, segs, tol: float = DEFAULT_RTOL) -> np.ndarray:
    x = _check_start(x0).copy()
    for seg in segs:
        if not isinstance(seg, FlowSegment):
            seg = FlowSegment(*seg)
        if seg.duration > 0:
            x = flow(p, x, seg.regime, seg.duration, tol)
    return x


def sample_accessible(p: ModelParams, n: int, horizon: float = 10.0, rng_seed=0,
                      n_segments: int = 6, tol: float = DEFAULT_RTOL) -> np.ndarray:
    """Points phi^{i_k}_{u_k} o ... o phi^{i_1}_{u_1}(p) with random regimes and
    durations uniform on [0, horizon]; returns an (n, 3) array."""
    if n < 1:
        raise DomainError("need at least one sample")
    rng = np.random.default_rng(rng_seed)
    eq = solve_equilibrium(p).x
    out = np.empty((n, 3))
    for k in range(n):
        regimes = rng.integers(0, 2, size=n_segments)
        durations = rng.uniform(0.0, horizon, size=n_segments)
        out[k] = orbit_compose(p, eq, [FlowSegment(int(r), float(u)) for r, u in zip(regimes, durations)], tol)
    box = invariant_box(p)
    if not np.all(box.contains(out, inflate=1e-9)):
        raise ConvergenceError("accessible sample left the invariant box")
    return out
