"""Estimators that turn simulations into verdicts.

Occupation histograms of the invariant measure, two-sample distances,
finite-K convergence and fluctuation scaling, ergodic generator averages,
weak-form residuals of the stationary transport-switching system and
stationarity diagnostics between ensemble marginals.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import stats as sps

from .equilibrium import DEFAULT_RTOL, FlowSegment, orbit_compose
from .errors import ContractError, DomainError
from .model import Box, HybridState, ModelParams, generator
from .pdmp import PdmpTrajectory, ensemble_pdmp
from .parallel import map_replicates, replicate_seeds
from .ssa import ensemble_ssa, equilibrium_initial_state

DEFAULT_BINS = (32, 32, 32)
DEFAULT_BATCHES = 50


def _window(times: np.ndarray, burn_in: float, n_batches: int):
    """Trapezoid weights and batch labels for grid samples with t >= burn_in."""
    mask = times >= burn_in
    t = times[mask]
    if t.size < 2:
        raise DomainError(f"no time window after burn-in {burn_in}")
    dt = np.diff(t)
    w = np.zeros(t.size)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    span = t[-1] - t[0]
    batch = np.minimum(((t - t[0]) / span * n_batches).astype(np.int64), n_batches - 1)
    return mask, w, batch


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Occupation measure on box x {0, 1}.

    ``mass[i]`` is the per-cell probability of regime i; ``batch_mass[b]``
    is the same histogram restricted to the b-th time batch and normalized
    to one, used for standard errors. Weighted samples are kept when
    available.
    """
    box: Box
    bins: tuple
    mass: np.ndarray
    batch_mass: np.ndarray
    outside_mass: float = 0.0
    x: np.ndarray | None = None
    i: np.ndarray | None = None
    w: np.ndarray | None = None
    batch: np.ndarray | None = None

    @property
    def edges(self) -> list:
        return [np.linspace(lo, hi, b + 1) for lo, hi, b in
                zip(self.box.lower, self.box.upper, self.bins)]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.box.widths / np.asarray(self.bins)))

    @property
    def density(self) -> np.ndarray:
        """Piecewise-constant estimates (h0, h1) per cell."""
        return self.mass / self.cell_volume

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum() + self.outside_mass)

    def regime_mass(self, i: int) -> float:
        return float(self.mass[i].sum())

    @property
    def n_batches(self) -> int:
        return self.batch_mass.shape[0]


def _cell_index(box: Box, bins, x, slack=1e-9):
    lo, wid = box.lower, box.widths
    u = (x - lo) / wid
    inside = np.all((u >= -slack) & (u <= 1 + slack), axis=1)
    b = np.asarray(bins)
    idx = np.clip(np.floor(u * b).astype(np.int64), 0, b - 1)
    return idx, inside


def histogram_measure(box: Box, x, i, w, batch, bins=DEFAULT_BINS, n_batches=DEFAULT_BATCHES,
                      keep_samples=True) -> EmpiricalMeasure:
    """Build an EmpiricalMeasure from weighted samples (weights need not sum to one)."""
    x = np.asarray(x, dtype=float)
    i = np.asarray(i, dtype=np.int64)
    w = np.asarray(w, dtype=float)
    batch = np.asarray(batch, dtype=np.int64)
    bins = tuple(int(b) for b in bins)
    idx, inside = _cell_index(box, bins, x)
    flat = np.ravel_multi_index((i, idx[:, 0], idx[:, 1], idx[:, 2]), (2,) + bins)
    total = w.sum()
    size = 2 * int(np.prod(bins))
    mass = np.bincount(flat[inside], weights=w[inside], minlength=size).reshape((2,) + bins) / total
    outside = float(w[~inside].sum() / total)
    bm = np.zeros((n_batches,) + (2,) + bins)
    for b in range(n_batches):
        sel = batch == b
        wb = w[sel].sum()
        if wb > 0:
            ins = sel & inside
            bm[b] = np.bincount(flat[ins], weights=w[ins], minlength=size).reshape((2,) + bins) / wb
    if keep_samples:
        return EmpiricalMeasure(box, bins, mass, bm, outside, x, i, w / total, batch)
    return EmpiricalMeasure(box, bins, mass, bm, outside)


def occupation_measure(traj: PdmpTrajectory, box: Box, bins=DEFAULT_BINS, burn_in: float = 0.0,
                       n_batches: int = DEFAULT_BATCHES, keep_samples: bool = True) -> EmpiricalMeasure:
    """Time-weighted occupation histogram over [burn_in, T] (trapezoid rule on the
    trajectory's sample grid), normalized to total mass one."""
    if not traj.T > burn_in:
        raise DomainError("trajectory horizon must exceed the burn-in")
    mask, w, batch = _window(traj.times, burn_in, n_batches)
    return histogram_measure(box, traj.states[mask], traj.regimes[mask], w, batch, bins,
                             n_batches, keep_samples)


def perturb_measure(m: EmpiricalMeasure, shift_cells=(0, 0, 0)) -> EmpiricalMeasure:
    """Translate all mass by whole cells; mass pushed past the box is lost.

    Negative control for the weak stationarity residual.
    """
    shift = tuple(int(s) for s in shift_cells)

    def roll(arr, lead):
        out = arr
        for ax, s in enumerate(shift):
            if s == 0:
                continue
            axis = lead + ax
            out = np.roll(out, s, axis=axis)
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(0, s) if s > 0 else slice(s, None)
            out[tuple(sl)] = 0.0
        return out

    mass = roll(m.mass.copy(), 1)
    bm = roll(m.batch_mass.copy(), 2)
    lost = float(m.mass.sum() - mass.sum())
    x = None
    if m.x is not None:
        x = m.x + np.asarray(shift) * m.box.widths / np.asarray(m.bins)
    return EmpiricalMeasure(m.box, m.bins, mass, bm, m.outside_mass + lost, x, m.i, m.w, m.batch)


def _marginal(a, marginal):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        if marginal is None:
            raise DomainError("select a marginal for multi-column samples")
        a = a[:, marginal]
    if a.size == 0:
        raise DomainError("empty sample")
    return a


def ks_distance(a, b, marginal: int | None = None) -> float:
    """Two-sample Kolmogorov-Smirnov statistic on one marginal."""
    a, b = _marginal(a, marginal), _marginal(b, marginal)
    return float(sps.ks_2samp(a, b).statistic)


def _matched_sorted(a, b):
    a, b = np.sort(a), np.sort(b)
    if a.size != b.size:
        big, small = (a, b) if a.size > b.size else (b, a)
        idx = np.round(np.linspace(0, big.size - 1, small.size)).astype(np.int64)
        big = big[idx]
        a, b = (big, small) if a.size > b.size else (small, big)
    return a, b


def wasserstein1(a, b, marginal: int | None = None) -> float:
    """Mean absolute difference of order statistics (sorted coupling).

    Unequal sample sizes are reduced by taking evenly spaced order statistics
    of the larger sample.
    """
    a, b = _matched_sorted(_marginal(a, marginal), _marginal(b, marginal))
    return float(np.mean(np.abs(a - b)))


def wasserstein1_se(a, b, marginal: int | None = None, n_boot: int = 200, rng_seed=0) -> float:
    """Bootstrap standard error of ``wasserstein1``."""
    a, b = _marginal(a, marginal), _marginal(b, marginal)
    rng = np.random.default_rng(rng_seed)
    vals = np.empty(n_boot)
    for k in range(n_boot):
        vals[k] = wasserstein1(a[rng.integers(a.size, size=a.size)],
                               b[rng.integers(b.size, size=b.size)])
    return float(vals.std(ddof=1))


@dataclass
class ConvergenceReport:
    Ks: list
    T: float
    n: int
    seed: int
    w1: np.ndarray          # (nK, 3)
    w1_se: np.ndarray
    ks: np.ndarray
    fluct_var: np.ndarray   # (nK, 3) variance of X^K(T) minus the coupled limit path
    fluct_var_se: np.ndarray
    mean_events: np.ndarray
    expected_exponents: tuple = (1.0, 1.5, 0.5)
    notes: list = dc_field(default_factory=list)

    @property
    def variance_ratios(self) -> np.ndarray:
        """Var at K[k+1] over Var at K[k], shape (nK - 1, 3)."""
        return self.fluct_var[1:] / self.fluct_var[:-1]

    @property
    def expected_ratios(self) -> np.ndarray:
        Ks = np.asarray(self.Ks, dtype=float)
        e = np.asarray(self.expected_exponents)
        return (Ks[:-1, None] / Ks[1:, None]) ** e[None, :]

    def w1_nonincreasing(self, n_se: float = 2.0) -> np.ndarray:
        """Per marginal: W1 never increases from one K to the next by more than n_se SE."""
        se = np.sqrt(self.w1_se[1:] ** 2 + self.w1_se[:-1] ** 2)
        return np.all(self.w1[1:] <= self.w1[:-1] + n_se * se, axis=0)

    def as_dict(self) -> dict:
        return {
            "Ks": list(self.Ks), "T": self.T, "n": self.n, "seed": self.seed,
            "w1": self.w1.tolist(), "w1_se": self.w1_se.tolist(), "ks": self.ks.tolist(),
            "fluct_var": self.fluct_var.tolist(), "fluct_var_se": self.fluct_var_se.tolist(),
            "variance_ratios": self.variance_ratios.tolist(),
            "expected_ratios": self.expected_ratios.tolist(),
            "w1_nonincreasing": self.w1_nonincreasing().tolist(),
            "mean_events": self.mean_events.tolist(),
        }


def coupled_limit(p: ModelParams, x0, switch_times, switch_regimes, i0: int, T: float,
                  tol: float = DEFAULT_RTOL) -> np.ndarray:
    """Limit flow driven by a given regime path: phi along the regime segments up to T."""
    segs = []
    t, i = 0.0, int(i0)
    for ts, r in zip(switch_times, switch_regimes):
        if ts > T:
            break
        segs.append(FlowSegment(i, float(ts - t)))
        t, i = float(ts), int(r)
    segs.append(FlowSegment(i, float(T - t)))
    return orbit_compose(p, x0, segs, tol)


def convergence_report(p: ModelParams, Ks, T: float, n: int, rng_seed=0, *, tol: float = DEFAULT_RTOL,
                       threads: int | None = None) -> ConvergenceReport:
    """Compare finite-K and limit laws at time T for each K.

    Both ensembles start from matched initial conditions: the rounded scaled
    equilibrium with a stationary telegraph regime. Fluctuations are measured
    pathwise, as X^K(T) minus the limit flow driven by the same replicate's
    regime path, so their variance isolates the martingale part that vanishes
    as K grows.
    """
    Ks = [int(K) for K in Ks]
    if not Ks:
        raise DomainError("need at least one K")
    if T <= 0 or n < 100:
        raise DomainError("need T > 0 and n >= 100")
    nK = len(Ks)
    w1 = np.zeros((nK, 3))
    w1_se = np.zeros((nK, 3))
    ks = np.zeros((nK, 3))
    fv = np.zeros((nK, 3))
    fv_se = np.zeros((nK, 3))
    mean_events = np.zeros(nK)
    for k, K in enumerate(Ks):
        ss = np.random.SeedSequence([int(rng_seed), K])
        init_seed, ssa_seed, pdmp_seed, boot_seed = ss.generate_state(4)
        rng = np.random.default_rng(int(init_seed))
        inits = [equilibrium_initial_state(p, K, rng) for _ in range(n)]
        jump = ensemble_ssa(p, K, T, n, int(ssa_seed), init=inits, threads=threads)
        x0 = np.stack([s.scaled(p) for s in inits])
        i0 = np.array([s.I for s in inits], dtype=np.int64)
        lim = ensemble_pdmp(p, (x0, i0), T, n, tol, int(pdmp_seed), threads=threads)
        for j in range(3):
            w1[k, j] = wasserstein1(jump.x[:, j], lim.terminal_x[:, j])
            w1_se[k, j] = wasserstein1_se(jump.x[:, j], lim.terminal_x[:, j],
                                          rng_seed=int(boot_seed) + j)
            ks[k, j] = ks_distance(jump.x[:, j], lim.terminal_x[:, j])

        def couple(r):
            return coupled_limit(p, x0[r], jump.switch_times[r], jump.switch_regimes[r],
                                 i0[r], T, tol)

        phi = np.stack(map_replicates(couple, range(n), threads))
        delta = jump.x - phi
        fv[k] = delta.var(axis=0, ddof=1)
        fv_se[k] = fv[k] * np.sqrt(2.0 / (n - 1))
        mean_events[k] = jump.n_events.mean()
    return ConvergenceReport(Ks=Ks, T=float(T), n=int(n), seed=int(rng_seed), w1=w1, w1_se=w1_se,
                             ks=ks, fluct_var=fv, fluct_var_se=fv_se, mean_events=mean_events,
                             expected_exponents=(1.0, 1.0 + p.alpha, p.beta))


def _batch_stats(values, w, batch, n_batches):
    total = np.sum(w * values) / np.sum(w)
    wb = np.bincount(batch, weights=w, minlength=n_batches)
    vb = np.bincount(batch, weights=w * values, minlength=n_batches)
    means = vb[wb > 0] / wb[wb > 0]
    se = float(means.std(ddof=1) / np.sqrt(means.size)) if means.size > 1 else float("nan")
    return float(total), se


def ergodic_residual(p: ModelParams, traj: PdmpTrajectory, f, burn_in: float = 0.0,
                     n_batches: int = DEFAULT_BATCHES):
    """Time average of L f along the trajectory after burn-in, with a batch-means SE."""
    mask, w, batch = _window(traj.times, burn_in, n_batches)
    lf = generator(p, f, traj.states[mask], traj.regimes[mask])
    return _batch_stats(lf, w, batch, n_batches)


def _check_support(f, box: Box):
    sup = getattr(f, "support", None)
    if sup is None:
        raise ContractError("weak residual needs a test function with compact support")
    lo, hi = (np.asarray(s, dtype=float) for s in sup)
    if not (np.all(lo > box.lower) and np.all(hi < box.upper)):
        raise ContractError("test function support must lie inside the open box")
    return lo, hi


_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _cell_averages(p: ModelParams, m: EmpiricalMeasure, f, lo, hi):
    """Cell averages of L f(., i) by 2-point Gauss per axis, over the cells meeting
    the support of f. Returns the index slices and an array (2, n1, n2, n3)."""
    slices = []
    nodes = []
    for ax, e in enumerate(m.edges):
        k0 = max(int(np.searchsorted(e, lo[ax], side="right")) - 1, 0)
        k1 = min(int(np.searchsorted(e, hi[ax], side="left")), len(e) - 1)
        slices.append(slice(k0, k1))
        c = 0.5 * (e[k0:k1] + e[k0 + 1:k1 + 1])
        hw = 0.5 * (e[k0 + 1:k1 + 1] - e[k0:k1])
        nodes.append((c[:, None] + hw[:, None] * _GAUSS2[None, :]).ravel())
    g = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1)
    shape = tuple(len(nd) // 2 for nd in nodes)
    avg = np.empty((2,) + shape)
    for i in (0, 1):
        lf = generator(p, f, g, i)
        lf = lf.reshape(shape[0], 2, shape[1], 2, shape[2], 2)
        avg[i] = lf.mean(axis=(1, 3, 5))
    return tuple(slices), avg


def weak_pde_residual(p: ModelParams, m: EmpiricalMeasure, f, method: str = "histogram"):
    """sum_i int h_i(x) [g(x,i).grad f(x,i) + jump part of L f(x,i)] dx and its batch SE.

    ``histogram`` integrates the piecewise-constant densities against cell
    averages of the integrand; ``samples`` uses the weighted samples directly.
    """
    lo, hi = _check_support(f, m.box)
    if method == "histogram":
        sl, avg = _cell_averages(p, m, f, lo, hi)
        full = (slice(None),) + sl
        res = float(np.sum(m.mass[full] * avg))
        per = np.tensordot(m.batch_mass[(slice(None),) + full], avg, axes=4)
    elif method == "samples":
        if m.x is None:
            raise DomainError("measure carries no samples")
        lf = generator(p, f, m.x, m.i)
        res = float(np.sum(m.w * lf))
        wb = np.bincount(m.batch, weights=m.w, minlength=m.n_batches)
        vb = np.bincount(m.batch, weights=m.w * lf, minlength=m.n_batches)
        per = vb[wb > 0] / wb[wb > 0]
    else:
        raise ValueError(f"unknown method {method!r}")
    se = float(np.std(per, ddof=1) / np.sqrt(len(per)))
    return res, se


@dataclass
class TVReport:
    times: np.ndarray
    distances: np.ndarray   # (len(times) - 1, 4): KS on x1, x2, x3, i
    slope: float | None
    n: int
    seed: int

    def as_dict(self) -> dict:
        return {"times": self.times.tolist(), "ks": self.distances.tolist(),
                "decay_slope": self.slope, "n": self.n, "seed": self.seed}


def tv_stationarity(p: ModelParams, s0: HybridState, times, n: int, rng_seed=0, *,
                    tol: float = DEFAULT_RTOL, threads: int | None = None) -> TVReport:
    """Per-marginal KS distances between ensemble marginals at consecutive times.

    A least-squares slope of log(max KS) against time is reported when at
    least two pairs are available; it is a diagnostic, nothing is asserted.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2 or np.any(np.diff(times) <= 0):
        raise DomainError("need at least two increasing times")
    if n < 1000:
        raise DomainError("stationarity diagnostics need n >= 1000")
    ens = ensemble_pdmp(p, s0, float(times[-1]), n, tol, rng_seed, out_times=times, threads=threads)
    dist = np.zeros((times.size - 1, 4))
    for k in range(times.size - 1):
        a, b = ens.marginal(k), ens.marginal(k + 1)
        for j in range(4):
            dist[k, j] = ks_distance(a[:, j], b[:, j])
    slope = None
    mx = dist.max(axis=1)
    if mx.size >= 2 and np.all(mx > 0):
        slope = float(np.polyfit(times[1:], np.log(mx), 1)[0])
    return TVReport(times=times, distances=dist, slope=slope, n=int(n), seed=int(rng_seed))


def replicate_ensemble_distance(p: ModelParams, s0: HybridState, t: float, n: int, rng_seed=0,
                                tol: float = DEFAULT_RTOL, threads: int | None = None) -> np.ndarray:
    """KS per marginal between two independent ensembles at the same time (noise floor)."""
    s1, s2 = replicate_seeds(rng_seed, 2)
    a = ensemble_pdmp(p, s0, t, n, tol, int(s1), threads=threads)
    b = ensemble_pdmp(p, s0, t, n, tol, int(s2), threads=threads)
    return np.array([ks_distance(a.marginal(0)[:, j], b.marginal(0)[:, j]) for j in range(4)])
