"""Acceptance suites: each check runs a numerical experiment and returns a
verdict together with every measured number.

Suites group the checks by subject: ``equilibrium``, ``box`` (invariance
and absorption), ``calculus`` (derivative oracles), ``hormander``,
``convergence`` (finite K against the limit), ``stationary`` (telegraph
marginal, ergodic generator identity, stationarity proxy) and ``pde``
(weak stationary system).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .equilibrium import (DEFAULT_RTOL, flow_path, sample_accessible,
                          solve_equilibrium)
from .model import (EQUILIBRIUM_CASES, HybridState, ModelParams, divergence_2d, field,
                    hormander_rank, invariant_box, jacobian_array, lie_bracket_01,
                    random_params)
from .parallel import map_replicates, replicate_seeds
from .pdmp import simulate_pdmp
from .stats import (convergence_report, ergodic_residual, occupation_measure,
                    perturb_measure, tv_stationarity, weak_pde_residual)
from .testfunctions import monomial_family, random_bumps


@dataclass
class VerifySettings:
    seed: int = 0
    tol: float = DEFAULT_RTOL
    threads: int | None = None
    n_random: int = 100
    box_T: float = 50.0
    box_inflate: float = 1e-6
    n_face: int = 100
    n_absorb: int = 50
    absorb_T: float = 200.0
    absorb_scale: float = 5.0
    n_calculus: int = 1000
    fd_step: float = 1e-6
    calculus_rtol: float = 1e-5
    div_grid: int = 100
    n_accessible: int = 200
    rank_tol: float = 1e-8
    Ks: tuple = (20, 80, 320)
    conv_T: float = 10.0
    conv_n: int = 2000
    long_T: float = 1e5
    long_grid_dt: float = 0.05
    burn_in: float = 1e3
    telegraph_tol: float = 0.01
    ergodic_T: float = 1e4
    ergodic_grid_dt: float = 0.01
    ergodic_burn_in: float = 100.0
    n_bumps: int = 10
    bins: tuple = (32, 32, 32)
    control_shift: tuple = (3, 3, 3)
    tv_n: int = 5000
    tv_times: tuple = (50.0, 100.0)
    tv_control_times: tuple = (0.1, 0.2)
    tv_threshold: float = 0.05


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    metrics: dict
    runtime: float = 0.0
    verdict: str = ""

    def as_dict(self, timings: bool = True) -> dict:
        d = {"id": self.id, "name": self.name, "passed": bool(self.passed),
             "verdict": self.verdict or ("pass" if self.passed else "fail"),
             "metrics": _jsonable(self.metrics)}
        if timings:
            d["runtime_s"] = self.runtime
        return d


@dataclass
class SuiteResult:
    suite: str
    criteria: list = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    @property
    def failing(self) -> list:
        return [c.name for c in self.criteria if not c.passed]

    def as_dict(self, timings: bool = True) -> dict:
        return {"suite": self.suite, "passed": self.passed, "failing": self.failing,
                "criteria": [c.as_dict(timings) for c in self.criteria]}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def _timed(cid, name, fn):
    t0 = time.perf_counter()
    passed, metrics, verdict = fn()
    return CriterionResult(cid, name, bool(passed), metrics, time.perf_counter() - t0, verdict)


# ---------------------------------------------------------------- equilibrium

def check_equilibrium(p: ModelParams, s: VerifySettings) -> CriterionResult:
    def run():
        rng = np.random.default_rng(s.seed)
        worst = {}
        for case in EQUILIBRIUM_CASES:
            res = [solve_equilibrium(random_params(rng, case)) for _ in range(s.n_random)]
            assert all(r.case_tag == case for r in res)
            worst[case] = max(r.residual for r in res)
        eq = solve_equilibrium(p)
        ok = max(worst.values()) < 1e-10 and eq.residual < 1e-10
        return ok, {"max_residual_per_case": worst, "config_equilibrium": eq.x,
                    "config_case": eq.case_tag, "config_residual": eq.residual}, \
            f"max |g(p,0)| {max(max(worst.values()), eq.residual):.1e} (< 1e-10)"
    return _timed(1, "equilibrium_residual", run)


# ------------------------------------------------------------------------ box

def _uniform_in_box(rng, box, n):
    return rng.uniform(box.lower, box.upper, size=(n, 3))


def check_box_invariance(p: ModelParams, s: VerifySettings) -> CriterionResult:
    """Flows from random starts in B stay in B (inflated), and g points inward on the faces."""
    def run():
        box = invariant_box(p)
        rng = np.random.default_rng(s.seed)
        starts = _uniform_in_box(rng, box, s.n_random)
        jobs = [(x, i) for x in starts for i in (0, 1)]

        def one(job):
            _, xs = flow_path(p, job[0], job[1], s.box_T, s.tol)
            return float(box.excursion(xs).max())

        exc = float(max(map_replicates(one, jobs, s.threads)))
        # face samples: 6 faces x n_face points, both regimes
        worst_out = -np.inf
        scale = 0.0
        for axis in range(3):
            for side, sign in ((0, -1.0), (1, 1.0)):
                pts = _uniform_in_box(rng, box, s.n_face)
                pts[:, axis] = box.lower[axis] if side == 0 else box.upper[axis]
                for i in (0, 1):
                    g = field(p, pts, i)
                    worst_out = max(worst_out, float(np.max(sign * g[:, axis])))
                    scale = max(scale, float(np.max(np.abs(g))))
        face_ok = worst_out <= 1e-12 * max(scale, 1.0)
        ok = exc <= s.box_inflate and face_ok
        return ok, {"n_flows": len(jobs), "max_excursion": exc, "inflate": s.box_inflate,
                    "n_face_samples": 6 * s.n_face, "max_outward_component": worst_out}, \
            f"max excursion {exc:.1e} (<= {s.box_inflate:g}), faces {'inward' if face_ok else 'OUTWARD'}"
    return _timed(2, "box_invariance", run)


def check_box_absorption(p: ModelParams, s: VerifySettings) -> CriterionResult:
    """Switching trajectories from starts outside B enter B and stay there."""
    def run():
        box = invariant_box(p)
        rng = np.random.default_rng(s.seed + 1)
        hi = np.minimum(s.absorb_scale * box.upper, [1.0, np.inf, np.inf])
        starts = []
        while len(starts) < s.n_absorb:
            x = rng.uniform(0.0, hi)
            if not box.contains(x):
                starts.append(x)
        seeds = replicate_seeds(s.seed + 1, s.n_absorb)
        i0 = rng.integers(0, 2, size=s.n_absorb)

        def one(r):
            tr = simulate_pdmp(p, HybridState.from_array(starts[r], i0[r]), s.absorb_T, s.tol,
                               int(seeds[r]), grid_dt=0.01, dense=False)
            inside = box.contains(tr.states)
            if not inside.any():
                return np.inf, np.inf
            k = int(np.argmax(inside))
            return float(tr.times[k]), float(box.excursion(tr.states[k:]).max())

        res = map_replicates(one, range(s.n_absorb), s.threads)
        entry = np.array([r[0] for r in res])
        after = np.array([r[1] for r in res])
        ok = bool(np.all(np.isfinite(entry)) and after.max() <= s.box_inflate)
        return ok, {"n_starts": s.n_absorb, "horizon": s.absorb_T,
                    "max_entry_time": float(entry.max()), "n_entered": int(np.isfinite(entry).sum()),
                    "max_excursion_after_entry": float(after.max())}, \
            f"{int(np.isfinite(entry).sum())}/{s.n_absorb} entered, latest at t={entry.max():.2f}"
    return _timed(3, "box_absorption", run)


# ------------------------------------------------------------------- calculus

def fd_jacobian(p: ModelParams, x, i, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of g(., i), vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        cols.append((field(p, x + e, i) - field(p, x - e, i)) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    num = np.abs(a - b).reshape(len(a), -1).max(axis=1)
    den = np.maximum(np.abs(b).reshape(len(b), -1).max(axis=1), 1e-300)
    return np.where(num == 0, 0.0, num / den)


def check_calculus(p: ModelParams, s: VerifySettings) -> CriterionResult:
    def run():
        rng = np.random.default_rng(s.seed + 2)
        box = invariant_box(p)
        h = s.fd_step
        # random states in E around the box, kept away from x1 = 0 and x1 = 1 by h
        hi = np.array([1.0 - 2 * h, 2 * box.hi2, 2 * box.hi3 + 1.0])
        x = rng.uniform([2 * h, 2 * h, 2 * h], hi, size=(s.n_calculus, 3))
        i = rng.integers(0, 2, size=s.n_calculus)
        jac_err = _rel_err(jacobian_array(p, x, i), fd_jacobian(p, x, i, h))
        J0, J1 = fd_jacobian(p, x, 0, h), fd_jacobian(p, x, 1, h)
        fd_br = np.einsum("njk,nk->nj", J0, field(p, x, 1)) - np.einsum("njk,nk->nj", J1, field(p, x, 0))
        br_err = _rel_err(lie_bracket_01(p, x), fd_br)
        x2d = np.column_stack([x[:, 0], x[:, 1], np.zeros(len(x))])
        Jp = fd_jacobian(p, x2d, 0, h)
        div_err = _rel_err(divergence_2d(p, x[:, 0], x[:, 1])[:, None],
                           (Jp[:, 0, 0] + Jp[:, 1, 1])[:, None])
        g1, g2 = np.meshgrid(np.linspace(box.lo1, box.hi1, s.div_grid),
                             np.linspace(box.lo2, box.hi2, s.div_grid), indexing="ij")
        div_max = float(np.max(divergence_2d(p, g1, g2)))
        tol = s.calculus_rtol
        ok = jac_err.max() < tol and br_err.max() < tol and div_err.max() < tol and div_max < 0
        return ok, {"n_states": s.n_calculus, "max_rel_err_jacobian": float(jac_err.max()),
                    "max_rel_err_bracket": float(br_err.max()),
                    "max_rel_err_divergence": float(div_err.max()),
                    "max_divergence_on_grid": div_max, "grid": [s.div_grid, s.div_grid]}, \
            (f"max rel err {max(jac_err.max(), br_err.max(), div_err.max()):.1e} (< {tol:g}), "
             f"max divergence {div_max:.3g}")
    return _timed(4, "calculus_oracles", run)


# ------------------------------------------------------------------ hormander

def _rank_scan(p: ModelParams, s: VerifySettings):
    pts = sample_accessible(p, s.n_accessible, rng_seed=s.seed + 3, tol=s.tol)
    ranks = hormander_rank(p, pts, s.rank_tol)
    return pts, np.atleast_1d(ranks)


def check_hormander(p: ModelParams, s: VerifySettings) -> CriterionResult:
    """Rank 3 somewhere on the accessible set when c3 + q3 > 0; rank <= 2
    everywhere for the same parameters with q3 = c3 = 0."""
    def run():
        control = p.replace(q3=0.0, c3=0.0)
        cpts, cranks = _rank_scan(control, s)
        control_ok = bool(np.all(cranks <= 2))
        metrics = {"n_points": s.n_accessible, "rank_tol": s.rank_tol,
                   "control_max_rank": int(cranks.max()), "control_all_rank_le_2": control_ok}
        if not p.hypdep:
            _, ranks = _rank_scan(p, s)
            metrics["max_rank"] = int(ranks.max())
            return control_ok and bool(np.all(ranks <= 2)), metrics, "hypothesis not satisfied"
        pts, ranks = _rank_scan(p, s)
        hits = np.flatnonzero(ranks == 3)
        metrics.update({"max_rank": int(ranks.max()), "n_rank3": int(hits.size),
                        "rank3_witness": pts[hits[0]] if hits.size else None})
        return bool(hits.size > 0) and control_ok, metrics, \
            f"{hits.size}/{s.n_accessible} points of rank 3, control max rank {int(cranks.max())}"
    return _timed(5, "hormander_rank", run)


# ---------------------------------------------------------------- convergence

X1_WINDOW = (0.6, 1.6)
X3_WINDOW = (0.7, 1.4)


def check_convergence(p: ModelParams, s: VerifySettings) -> CriterionResult:
    """W1 nonincreasing in K (2 SE) and fluctuation-variance ratios within
    windows around (K / K')^1 for x1 and (K / K')^beta for x3."""
    def run():
        rep = convergence_report(p, s.Ks, s.conv_T, s.conv_n, s.seed, tol=s.tol, threads=s.threads)
        ratios, expected = rep.variance_ratios, rep.expected_ratios
        x1_ok = np.all((ratios[:, 0] >= X1_WINDOW[0] * expected[:, 0])
                       & (ratios[:, 0] <= X1_WINDOW[1] * expected[:, 0]))
        x3_ok = np.all((ratios[:, 2] >= X3_WINDOW[0] * expected[:, 2])
                       & (ratios[:, 2] <= X3_WINDOW[1] * expected[:, 2]))
        mono = rep.w1_nonincreasing()
        metrics = rep.as_dict()
        metrics.update({"x1_ratio_window": [X1_WINDOW[0] * expected[:, 0], X1_WINDOW[1] * expected[:, 0]],
                        "x3_ratio_window": [X3_WINDOW[0] * expected[:, 2], X3_WINDOW[1] * expected[:, 2]],
                        "x1_ratio_ok": bool(x1_ok), "x3_ratio_ok": bool(x3_ok)})
        verdict = (f"W1 nonincreasing {bool(np.all(mono))}, x1 ratios {np.round(ratios[:, 0], 3).tolist()}, "
                   f"x3 ratios {np.round(ratios[:, 2], 3).tolist()}")
        return bool(np.all(mono) and x1_ok and x3_ok), metrics, verdict
    return _timed(6, "convergence_in_K", run)


# ----------------------------------------------------------------- stationary

def _stationary_run(p, s, T, grid_dt, seed):
    eq = solve_equilibrium(p).x
    return simulate_pdmp(p, HybridState.from_array(eq, 0), T, s.tol, seed,
                         grid_dt=grid_dt, dense=False)


def check_telegraph(p: ModelParams, s: VerifySettings, traj=None) -> CriterionResult:
    def run():
        tr = traj if traj is not None else _stationary_run(p, s, s.long_T, s.long_grid_dt, s.seed + 4)
        m = occupation_measure(tr, invariant_box(p), s.bins, s.burn_in)
        frac = m.regime_mass(1)
        per_batch = m.batch_mass[:, 1].reshape(m.n_batches, -1).sum(axis=1)
        se = float(per_batch.std(ddof=1) / np.sqrt(m.n_batches))
        metrics = {"occupation_regime1": frac, "batch_se": se, "outside_mass": m.outside_mass,
                   "T": tr.T, "burn_in": s.burn_in}
        if p.q2M != 0 or p.q3M != 0:
            return True, metrics, "telegraph oracle not applicable (state-dependent q_M)"
        target = p.telegraph_on_fraction
        metrics.update({"target": target, "abs_error": abs(frac - target), "tolerance": s.telegraph_tol})
        return abs(frac - target) <= s.telegraph_tol, metrics, \
            f"regime-1 occupation {frac:.4f} (target {target:.4f} +- {s.telegraph_tol:g}, SE {se:.4f})"
    return _timed(7, "telegraph_marginal", run)


def check_ergodic(p: ModelParams, s: VerifySettings) -> CriterionResult:
    def run():
        tr = _stationary_run(p, s, s.ergodic_T, s.ergodic_grid_dt, s.seed + 5)
        rows = []
        # each monomial both regime-blind and multiplied by the indicator of i = 1;
        # a zero mean with zero SE (constants) counts as a pass
        family = monomial_family(3) + monomial_family(3, weights=(0.0, 1.0))
        for f in family:
            mean, se = ergodic_residual(p, tr, f, s.ergodic_burn_in)
            rows.append({"f": repr(f), "mean": mean, "se": se, "pass": abs(mean) <= 3 * se})
        ok = all(r["pass"] for r in rows)
        zmax = max(abs(r["mean"]) / r["se"] if r["se"] > 0 else 0.0 for r in rows)
        return ok, {"T": s.ergodic_T, "burn_in": s.ergodic_burn_in, "n_functions": len(rows),
                    "max_abs_z": zmax,
                    "functions": rows}, \
            f"{sum(r['pass'] for r in rows)}/{len(rows)} within 3 SE, max |z| {zmax:.2f}"
    return _timed(8, "ergodic_generator_identity", run)


def check_tv(p: ModelParams, s: VerifySettings) -> CriterionResult:
    def run():
        eq = solve_equilibrium(p).x
        rep = tv_stationarity(p, HybridState.from_array(eq, 0), s.tv_times, s.tv_n, s.seed + 6,
                              tol=s.tol, threads=s.threads)
        corner = invariant_box(p).upper
        ctl = tv_stationarity(p, HybridState.from_array(corner, 0), s.tv_control_times, s.tv_n,
                              s.seed + 7, tol=s.tol, threads=s.threads)
        late = float(rep.distances.max())
        early = float(ctl.distances.max())
        ok = late < s.tv_threshold and early > s.tv_threshold
        return ok, {"n": s.tv_n, "times": s.tv_times, "ks_per_marginal": rep.distances[0],
                    "control_times": s.tv_control_times, "control_start": corner,
                    "control_ks_per_marginal": ctl.distances[0], "threshold": s.tv_threshold,
                    "max_ks": late, "control_max_ks": early}, \
            f"max KS {late:.3f} (< {s.tv_threshold:g}), control {early:.3f} (> {s.tv_threshold:g})"
    return _timed(10, "stationarity_ks_proxy", run)


# ------------------------------------------------------------------------ pde

def check_weak_pde(p: ModelParams, s: VerifySettings, traj=None) -> CriterionResult:
    """Weak residuals of the stationary system against random bumps anchored
    on visited states, plus a shifted-measure negative control."""
    def run():
        tr = traj if traj is not None else _stationary_run(p, s, s.long_T, s.long_grid_dt, s.seed + 8)
        box = invariant_box(p)
        m = occupation_measure(tr, box, s.bins, s.burn_in)
        rng = np.random.default_rng(s.seed + 9)
        anchors = m.x[rng.integers(0, len(m.x), size=1000)]
        bumps = random_bumps(box, s.n_bumps, rng, anchors=anchors)
        shifted = perturb_measure(m, s.control_shift)
        rows, control = [], []
        for f in bumps:
            r, se = weak_pde_residual(p, m, f, "samples")
            rh, seh = weak_pde_residual(p, m, f, "histogram")
            rows.append({"center": f.center, "halfwidth": f.halfwidth, "residual": r, "se": se,
                         "histogram_residual": rh, "histogram_se": seh, "pass": abs(r) <= 3 * se})
            rc, sec = weak_pde_residual(p, shifted, f, "samples")
            control.append({"residual": rc, "se": sec, "detected": abs(rc) > 3 * sec})
        ok = all(r["pass"] for r in rows) and any(c["detected"] for c in control)
        return ok, {"T": tr.T, "burn_in": s.burn_in, "n_bumps": s.n_bumps, "bumps": rows,
                    "control_shift_cells": s.control_shift, "control": control,
                    "control_detections": sum(c["detected"] for c in control)}, \
            (f"{sum(r['pass'] for r in rows)}/{len(rows)} within 3 SE, "
             f"control detected by {sum(c['detected'] for c in control)}/{len(control)}")
    return _timed(9, "weak_stationary_pde", run)


SUITES = {
    "equilibrium": (check_equilibrium,),
    "box": (check_box_invariance, check_box_absorption),
    "calculus": (check_calculus,),
    "hormander": (check_hormander,),
    "convergence": (check_convergence,),
    "stationary": (check_telegraph, check_ergodic, check_tv),
    "pde": (check_weak_pde,),
}


def run_suite(name: str, p: ModelParams, settings: VerifySettings | None = None) -> SuiteResult:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    settings = settings or VerifySettings()
    return SuiteResult(name, [check(p, settings) for check in SUITES[name]])
