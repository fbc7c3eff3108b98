"""Simulation of the limit switching process (X, I).

Between switches X follows dx/dt = g(x, i). The quiescent regime ends after
an exponential sojourn of rate a_M; the active regime ends when the
cumulative hazard of q_M(X2, X3), integrated alongside the flow, crosses an
independent Exp(1) threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .equilibrium import DEFAULT_ATOL, DEFAULT_RTOL
from .errors import DomainError, SimulationError, StiffnessError
from .model import HybridState, ModelParams
from .parallel import map_replicates, replicate_seeds


@dataclass(frozen=True)
class DenseOutput:
    """Per accepted step: start time, length, regime, 5 x 3 interpolation coefficients."""
    t0: np.ndarray
    h: np.ndarray
    regime: np.ndarray
    coef: np.ndarray

    def __call__(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.t0, t, side="right")) - 1
        k = min(max(k, 0), len(self.t0) - 1)
        h = self.h[k]
        theta = 0.0 if h == 0 else min(max((t - self.t0[k]) / h, 0.0), 1.0)
        c = self.coef[k]
        t1 = 1.0 - theta
        return c[0] + theta * (c[1] + t1 * (c[2] + theta * (c[3] + t1 * c[4])))


@dataclass(frozen=True)
class PdmpTrajectory:
    s0: HybridState
    T: float
    times: np.ndarray
    states: np.ndarray
    regimes: np.ndarray
    switch_times: np.ndarray
    switch_regimes: np.ndarray
    rtol: float
    atol: float
    seed: int
    n_steps: int = 0
    n_rejected: int = 0
    dense: DenseOutput | None = None

    @property
    def samples(self):
        return [(float(t), HybridState.from_array(x, i))
                for t, x, i in zip(self.times, self.states, self.regimes)]

    @property
    def terminal(self) -> HybridState:
        return HybridState.from_array(np.clip(self.states[-1], [0, 0, 0], [1, np.inf, np.inf]),
                                      self.regimes[-1])

    def regime_at(self, t: float) -> int:
        k = int(np.searchsorted(self.switch_times, t, side="right"))
        return int(self.s0.i if k == 0 else self.switch_regimes[k - 1])


def _as_state(s0) -> HybridState:
    if isinstance(s0, HybridState):
        return s0
    x, i = s0
    return HybridState.from_array(x, i)


def _raise_status(status):
    if status == _kernels.STEP_UNDERFLOW:
        raise StiffnessError("adaptive step size underflow during PDMP simulation")
    if status == _kernels.LOCALIZATION_FAILED:
        raise SimulationError("switch time localization lost its bracket")
    if status != _kernels.OK:
        raise SimulationError(f"PDMP kernel failed with status {status}")


def _run(p: ModelParams, x0, i0, T, tol, atol, out_times, dense, seed):
    res = _kernels.pdmp_kernel(p.packed, np.asarray(x0, dtype=float), int(i0), float(T),
                               float(tol), float(atol), out_times, bool(dense), int(seed))
    _raise_status(res[10])
    return res


def _output_grid(T, grid_dt, out_times):
    if out_times is not None:
        out_times = np.asarray(out_times, dtype=float)
        if np.any(np.diff(out_times) < 0) or (out_times.size and (out_times[0] < 0 or out_times[-1] > T)):
            raise DomainError("output times must be sorted and lie in [0, T]")
        return out_times
    grid_dt = T / 1000.0 if grid_dt is None else grid_dt
    if grid_dt <= 0:
        raise DomainError("grid_dt must be positive")
    n = int(np.floor(T / grid_dt + 1e-9))
    return np.arange(n + 1) * grid_dt


def simulate_pdmp(p: ModelParams, s0, T: float, tol: float = DEFAULT_RTOL, rng_seed=0, *,
                  grid_dt: float | None = None, out_times=None, dense: bool = True,
                  atol: float | None = None) -> PdmpTrajectory:
    """One trajectory on [0, T], sampled on a uniform grid (default T/1000).

    With ``dense=False`` only the grid samples and switch times are kept, which
    is what long ergodic runs need.
    """
    s0 = _as_state(s0)
    if T <= 0:
        raise DomainError("horizon must be positive")
    atol = tol * 1e-3 if atol is None else atol
    times = _output_grid(T, grid_dt, out_times)
    seed = int(replicate_seeds(rng_seed, 1)[0])
    res = _run(p, s0.x, s0.i, T, tol, atol, times, dense, seed)
    out_x, out_i, sw_t, sw_r, d_t, d_h, d_r, d_c = res[:8]
    dense_out = DenseOutput(d_t, d_h, d_r, d_c) if dense else None
    return PdmpTrajectory(s0=s0, T=float(T), times=times, states=out_x, regimes=out_i,
                          switch_times=sw_t, switch_regimes=sw_r, rtol=tol, atol=atol,
                          seed=int(rng_seed), n_steps=int(res[11]), n_rejected=int(res[12]),
                          dense=dense_out)


def sample_at(traj: PdmpTrajectory, t: float) -> HybridState:
    """State at time t: x from the stored continuous extension, regime right-continuous."""
    if not 0.0 <= t <= traj.T:
        raise DomainError(f"t={t} outside [0, {traj.T}]")
    k = int(np.searchsorted(traj.times, t))
    if k < len(traj.times) and traj.times[k] == t:
        x = traj.states[k]
    elif traj.dense is None:
        raise DomainError("trajectory was simulated without dense output")
    else:
        x = traj.dense(t)
    x = np.array(x, dtype=float)
    x[1:] = np.maximum(x[1:], 0.0)
    x[0] = min(max(x[0], 0.0), 1.0)
    return HybridState.from_array(x, traj.regime_at(t))


@dataclass(frozen=True)
class EnsembleResult:
    """Replicate outputs: ``x`` (n, m, 3) and ``i`` (n, m) at ``times`` (m,)."""
    times: np.ndarray
    x: np.ndarray
    i: np.ndarray
    seed: int

    @property
    def terminal_x(self) -> np.ndarray:
        return self.x[:, -1, :]

    @property
    def terminal_i(self) -> np.ndarray:
        return self.i[:, -1]

    def terminal_states(self) -> list:
        return [HybridState.from_array(np.maximum(x, 0.0), i)
                for x, i in zip(self.terminal_x, self.terminal_i)]

    def marginal(self, k: int) -> np.ndarray:
        """(n, 4) array of (x1, x2, x3, i) at the k-th output time."""
        return np.column_stack([self.x[:, k, :], self.i[:, k]])


def _initial_conditions(s0, n):
    if isinstance(s0, HybridState):
        return np.tile(s0.x, (n, 1)), np.full(n, s0.i, dtype=np.int64)
    x0, i0 = s0
    x0 = np.asarray(x0, dtype=float)
    i0 = np.asarray(i0, dtype=np.int64)
    if x0.ndim == 1:
        x0 = np.tile(x0, (n, 1))
    if i0.ndim == 0:
        i0 = np.full(n, int(i0), dtype=np.int64)
    if x0.shape != (n, 3) or i0.shape != (n,):
        raise DomainError("per-replicate initial conditions must have shapes (n, 3) and (n,)")
    return x0, i0


def ensemble_pdmp(p: ModelParams, s0, T: float, n: int, tol: float = DEFAULT_RTOL, rng_seed=0, *,
                  out_times=None, threads: int | None = None) -> EnsembleResult:
    """``n`` independent trajectories; by default only the terminal state is kept.

    ``s0`` is a HybridState or a pair (x0 of shape (n, 3), i0 of shape (n,)).
    Replicate r uses the r-th seed of ``replicate_seeds(rng_seed, n)``, so the
    one-replicate ensemble coincides with ``simulate_pdmp`` for the same seed.
    """
    if n < 1:
        raise DomainError("need at least one replicate")
    times = np.array([float(T)]) if out_times is None else _output_grid(T, None, out_times)
    x0, i0 = _initial_conditions(s0, n)
    seeds = replicate_seeds(rng_seed, n)
    atol = tol * 1e-3

    def one(r):
        res = _run(p, x0[r], i0[r], T, tol, atol, times, False, seeds[r])
        return res[0], res[1]

    results = map_replicates(one, range(n), threads)
    xs = np.stack([r[0] for r in results])
    iis = np.stack([r[1] for r in results])
    return EnsembleResult(times=times, x=xs, i=iis, seed=int(rng_seed))
