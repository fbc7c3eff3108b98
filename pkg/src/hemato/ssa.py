"""Finite-K jump process (N1, N2, N3, I): exact direct-method simulation and
an approximate Poisson-leaping stepper, both reporting the scaled process
X^K = (N1/K, N2/K^(1+alpha), N3/K^beta)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import _kernels
from .equilibrium import solve_equilibrium
from .errors import AccuracyWarning, DomainError, SimulationError
from .model import ModelParams, scaled_rate_functions, scaling_factors
from .parallel import map_replicates, replicate_seeds

CHANNELS = ("hsc_activate", "hsc_deactivate", "rbc_birth", "rbc_death",
            "mut_birth", "mut_death", "cancer_activate", "cancer_deactivate")

CLAMP_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class JumpState:
    K: int
    N1: int
    N2: int
    N3: int
    I: int

    def __post_init__(self):
        if self.K < 1:
            raise DomainError(f"K must be a positive integer, got {self.K}")
        if not 0 <= self.N1 <= self.K:
            raise DomainError(f"N1 must lie in [0, K], got {self.N1}")
        if self.N2 < 0 or self.N3 < 0:
            raise DomainError("red blood cell counts must be nonnegative")
        if self.I not in (0, 1):
            raise DomainError(f"I must be 0 or 1, got {self.I}")

    @property
    def counts(self) -> np.ndarray:
        return np.array([self.N1, self.N2, self.N3, self.I], dtype=np.int64)

    def scaled(self, p: ModelParams) -> np.ndarray:
        _, s2, s3 = scaling_factors(p, self.K)
        return np.array([self.N1 / self.K, self.N2 / s2, self.N3 / s3])


@dataclass(frozen=True)
class EventRates:
    hsc_activate: float
    hsc_deactivate: float
    rbc_birth: float
    rbc_death: float
    mut_birth: float
    mut_death: float
    cancer_activate: float
    cancer_deactivate: float

    @property
    def total(self) -> float:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class ScaledSample:
    t: float
    x1: float
    x2: float
    x3: float
    i: int


def event_rates(p: ModelParams, s: JumpState) -> EventRates:
    Ka, _, Kb = scaling_factors(p, s.K)
    q, qM, r, rM = scaled_rate_functions(p, s.K, s.N2, s.N3)
    return EventRates(
        hsc_activate=p.a * (s.K - s.N1),
        hsc_deactivate=float(q) * s.N1,
        rbc_birth=Ka * float(r) * s.N1,
        rbc_death=p.d * s.N2,
        mut_birth=Kb * float(rM) * s.I,
        mut_death=p.dM * s.N3,
        cancer_activate=p.a_M * (1 - s.I),
        cancer_deactivate=float(qM) * s.I,
    )


def state_from_scaled(p: ModelParams, K: int, x, i: int) -> JumpState:
    """Round a scaled state to the nearest integer counts."""
    _, s2, s3 = scaling_factors(p, K)
    n1 = int(min(max(round(x[0] * K), 0), K))
    return JumpState(K, n1, int(round(x[1] * s2)), int(round(x[2] * s3)), int(i))


def equilibrium_initial_state(p: ModelParams, K: int, rng: np.random.Generator) -> JumpState:
    """Counts at the rounded scaled equilibrium, I ~ Bernoulli(a_M / (a_M + q1M))."""
    eq = solve_equilibrium(p)
    i0 = int(rng.random() < p.telegraph_on_fraction)
    return state_from_scaled(p, K, eq.x, i0)


@dataclass(frozen=True)
class JumpTrajectory:
    K: int
    times: np.ndarray
    counts: np.ndarray
    x: np.ndarray
    i: np.ndarray
    switch_times: np.ndarray
    switch_regimes: np.ndarray
    n_events: int
    seed: int
    event_times: np.ndarray | None = None
    event_channels: np.ndarray | None = None
    n_steps: int = 0
    n_clamped: int = 0

    @property
    def samples(self) -> list:
        return [ScaledSample(float(t), *map(float, xx), int(ii))
                for t, xx, ii in zip(self.times, self.x, self.i)]

    @property
    def clamp_fraction(self) -> float:
        return self.n_clamped / self.n_steps if self.n_steps else 0.0


def _grid(T, grid_dt):
    if T <= 0 or grid_dt <= 0:
        raise DomainError("T and grid_dt must be positive")
    n = int(np.floor(T / grid_dt + 1e-9))
    return np.arange(n + 1) * grid_dt


def _scale_counts(p, K, counts):
    _, s2, s3 = scaling_factors(p, K)
    return np.column_stack([counts[:, 0] / K, counts[:, 1] / s2, counts[:, 2] / s3])


def _check(status):
    if status == _kernels.RATE_OVERFLOW:
        raise SimulationError("total event rate is not finite")
    if status == _kernels.INVALID_STATE:
        raise SimulationError("jump process left its state space")
    if status != _kernels.OK:
        raise SimulationError(f"jump kernel failed with status {status}")


def _ssa_raw(p, init: JumpState, T, out_times, seed, log_events=False):
    res = _kernels.ssa_kernel(p.packed, int(init.K), init.counts, float(T), out_times,
                              int(seed), bool(log_events))
    _check(res[7])
    return res


def simulate_ssa(p: ModelParams, init: JumpState, T: float, grid_dt: float, rng_seed=0, *,
                 log_events: bool = False) -> JumpTrajectory:
    """Exact simulation, sampled right-continuously on a uniform grid.

    With ``log_events`` every event time and channel index (see ``CHANNELS``)
    is kept as well.
    """
    times = _grid(T, grid_dt)
    seed = int(replicate_seeds(rng_seed, 1)[0])
    out, sw_t, sw_r, ev_t, ev_c, _, nev, _ = _ssa_raw(p, init, T, times, seed, log_events)
    return JumpTrajectory(K=init.K, times=times, counts=out, x=_scale_counts(p, init.K, out),
                          i=out[:, 3].copy(), switch_times=sw_t, switch_regimes=sw_r,
                          n_events=int(nev), seed=int(rng_seed),
                          event_times=ev_t if log_events else None,
                          event_channels=ev_c if log_events else None)


def simulate_tau_leap(p: ModelParams, init: JumpState, T: float, leap_dt: float, rng_seed=0, *,
                      grid_dt: float | None = None) -> JumpTrajectory:
    """Approximate leaping with all rates frozen over each step of ``leap_dt``.

    Negative counts (and N1 > K) are clamped; the number of steps needing a
    clamp is reported, and an AccuracyWarning is issued above 1% of steps.
    """
    if leap_dt <= 0:
        raise DomainError("leap_dt must be positive")
    times = _grid(T, leap_dt if grid_dt is None else grid_dt)
    seed = int(replicate_seeds(rng_seed, 1)[0])
    out, sw_t, sw_r, _, nsteps, nclamp, status = _kernels.tau_leap_kernel(
        p.packed, int(init.K), init.counts, float(T), float(leap_dt), times, seed)
    _check(status)
    traj = JumpTrajectory(K=init.K, times=times, counts=out, x=_scale_counts(p, init.K, out),
                          i=out[:, 3].copy(), switch_times=sw_t, switch_regimes=sw_r,
                          n_events=0, seed=int(rng_seed), n_steps=int(nsteps),
                          n_clamped=int(nclamp))
    if traj.clamp_fraction > CLAMP_WARN_FRACTION:
        warnings.warn(f"tau-leap clamped counts in {traj.clamp_fraction:.2%} of steps; "
                      f"reduce leap_dt", AccuracyWarning, stacklevel=2)
    return traj


@dataclass(frozen=True)
class JumpEnsemble:
    """Terminal scaled states of n replicates plus each replicate's regime path."""
    K: int
    T: float
    initial: np.ndarray  # (n, 4) counts
    counts: np.ndarray   # (n, 4) terminal counts
    x: np.ndarray        # (n, 3) terminal scaled state
    i: np.ndarray
    switch_times: list
    switch_regimes: list
    n_events: np.ndarray
    seed: int


def ensemble_ssa(p: ModelParams, K: int, T: float, n: int, rng_seed=0, *, init=None,
                 threads: int | None = None) -> JumpEnsemble:
    """``n`` exact replicates to time T.

    ``init`` is a JumpState shared by all replicates, a list of JumpStates,
    or None for the default equilibrium initializer (rounded equilibrium,
    stationary telegraph regime) drawn per replicate.
    """
    if n < 1:
        raise DomainError("need at least one replicate")
    seeds = replicate_seeds(rng_seed, n)
    if init is None:
        rng = np.random.default_rng(np.random.SeedSequence(int(rng_seed)).spawn(1)[0])
        inits = [equilibrium_initial_state(p, K, rng) for _ in range(n)]
    elif isinstance(init, JumpState):
        inits = [init] * n
    else:
        inits = list(init)
        if len(inits) != n:
            raise DomainError("need one initial state per replicate")
    out_times = np.array([float(T)])

    def one(r):
        res = _ssa_raw(p, inits[r], T, out_times, seeds[r])
        return res[0][0], res[1], res[2], res[6]

    results = map_replicates(one, range(n), threads)
    counts = np.stack([r[0] for r in results])
    return JumpEnsemble(K=K, T=float(T), initial=np.stack([s.counts for s in inits]),
                        counts=counts, x=_scale_counts(p, K, counts), i=counts[:, 3].copy(),
                        switch_times=[r[1] for r in results],
                        switch_regimes=[r[2] for r in results],
                        n_events=np.array([r[3] for r in results]), seed=int(rng_seed))


def moment_diagnostic(p: ModelParams, Ks, T: float, n: int, rng_seed=0, *, leap_dt: float = 1e-3,
                      grid_dt: float = 0.05, threads: int | None = None) -> dict:
    """Monte-Carlo mean of sup_t |X^K(t)|^2 on a time grid, for each K.

    A boundedness diagnostic: the values should stay of order one and not
    grow with K.
    """
    out = {}
    for K in Ks:
        seeds = np.random.SeedSequence([int(rng_seed), int(K)]).generate_state(n)
        rng = np.random.default_rng(int(seeds[0]))
        inits = [equilibrium_initial_state(p, K, rng) for _ in range(n)]
        times = _grid(T, grid_dt)

        def one(r, K=K):
            res = _kernels.tau_leap_kernel(p.packed, int(K), inits[r].counts, float(T),
                                           float(leap_dt), times, int(seeds[r]))
            _check(res[6])
            x = _scale_counts(p, K, res[0])
            return float(np.max(np.sum(x * x, axis=1)))

        sups = np.array(map_replicates(one, range(n), threads))
        out[int(K)] = (float(sups.mean()), float(sups.std(ddof=1) / np.sqrt(n)))
    return out
