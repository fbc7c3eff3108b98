import math

import numpy as np
import pytest
from scipy import stats as sps

from hemato.errors import DomainError
from hemato.model import HybridState, invariant_box
from hemato.pdmp import ensemble_pdmp, sample_at, simulate_pdmp

P_EQ = HybridState(0.5, 1.0, 0.0, 0)


def sojourns(traj, regime):
    """Completed sojourn lengths in ``regime``."""
    t = np.concatenate([[0.0], traj.switch_times])
    reg = np.concatenate([[traj.s0.i], traj.switch_regimes])
    out = np.diff(t)
    return out[reg[:-1] == regime]


@pytest.fixture(scope="module")
def long_traj(pset_a):
    return simulate_pdmp(pset_a, P_EQ, 4e4, rng_seed=21, grid_dt=0.1, dense=False)


def test_deterministic_under_seed(pset_a):
    a = simulate_pdmp(pset_a, P_EQ, 50.0, rng_seed=4)
    b = simulate_pdmp(pset_a, P_EQ, 50.0, rng_seed=4)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.switch_times, b.switch_times)
    c = simulate_pdmp(pset_a, P_EQ, 50.0, rng_seed=5)
    assert not np.array_equal(a.switch_times, c.switch_times)


def test_state_stays_at_equilibrium_until_first_switch(pset_a):
    tr = simulate_pdmp(pset_a, P_EQ, 20.0, rng_seed=3, grid_dt=0.01)
    t1 = tr.switch_times[0] if len(tr.switch_times) else 20.0
    before = tr.times < t1
    assert np.all(tr.states[before] == [0.5, 1.0, 0.0])


def test_first_switch_exponential(pset_a):
    ens_first = []
    for seed in range(10_000):
        tr = simulate_pdmp(pset_a, P_EQ, 60.0, rng_seed=seed, grid_dt=60.0, dense=False)
        ens_first.append(tr.switch_times[0])
    m = float(np.mean(ens_first))
    assert 1.94 <= m <= 2.06
    assert sps.kstest(ens_first, "expon", args=(0, 2.0)).pvalue > 0.01


def test_active_sojourns_exponential(long_traj):
    s1 = sojourns(long_traj, 1)[:10_000]
    assert len(s1) == 10_000
    assert 0.97 <= s1.mean() <= 1.03
    assert sps.kstest(s1, "expon", args=(0, 1.0)).pvalue > 0.01
    s0 = sojourns(long_traj, 0)[:10_000]
    assert sps.kstest(s0, "expon", args=(0, 2.0)).pvalue > 0.01


def test_state_dependent_hazard_inversion(pset_a):
    # q_M = 1 + x3 while x3 follows x3' = 1 - x3 from x3 = 0 (c2M = c3M = 0), so
    # Lambda(t) = 2t - (1 - e^-t) until the first active-to-quiescent switch
    p = pset_a.replace(q3M=1.0)
    first = []
    s0 = HybridState(0.5, 1.0, 0.0, 1)
    for seed in range(10_000):
        tr = simulate_pdmp(p, s0, 30.0, rng_seed=seed, grid_dt=30.0, dense=False)
        first.append(tr.switch_times[0])

    def cdf(t):
        return 1.0 - np.exp(-(2 * t - (1 - np.exp(-t))))

    res = sps.kstest(first, cdf)
    assert res.statistic < 0.02 and res.pvalue > 0.01


def test_single_regime_segment(pset_a):
    s0 = HybridState(0.5, 1.0, 0.0, 1)
    for seed in range(200):
        tr = simulate_pdmp(pset_a, s0, 1.0, rng_seed=seed, grid_dt=0.5)
        if len(tr.switch_times) == 0:
            assert tr.states[-1, 2] == pytest.approx(1 - math.exp(-1), abs=1e-8)
            return
    pytest.fail("no switch-free path found")


def test_sample_at(pset_a):
    tr = simulate_pdmp(pset_a, HybridState(0.4, 1.5, 0.5, 1), 30.0, rng_seed=8, grid_dt=0.5)
    assert sample_at(tr, 0.0) == tr.s0
    k = 17
    np.testing.assert_array_equal(sample_at(tr, tr.times[k]).x, tr.states[k])
    assert len(tr.switch_times) > 0
    ts = tr.switch_times[0]
    before, at = sample_at(tr, ts - 1e-9), sample_at(tr, ts)
    assert np.max(np.abs(before.x - at.x)) < 1e-7
    assert at.i == tr.switch_regimes[0] != before.i
    with pytest.raises(DomainError):
        sample_at(tr, 31.0)
    with pytest.raises(DomainError):
        sample_at(simulate_pdmp(pset_a, tr.s0, 1.0, dense=False, grid_dt=0.3), 0.1)


def test_dense_output_accuracy(pset_a):
    from hemato.equilibrium import flow
    tr = simulate_pdmp(pset_a, HybridState(0.4, 1.5, 0.5, 0), 1.0, rng_seed=0, grid_dt=1.0)
    t_end = tr.switch_times[0] if len(tr.switch_times) else 1.0
    for t in np.linspace(0, t_end, 7):
        np.testing.assert_allclose(sample_at(tr, t).x, flow(pset_a, [0.4, 1.5, 0.5], 0, t), atol=1e-7)


def test_path_continuity_and_regimes(pset_a):
    tr = simulate_pdmp(pset_a, HybridState(0.35, 0.9, 0.6, 0), 200.0, rng_seed=2, grid_dt=0.05)
    # regimes alternate and are constant between switches
    assert np.all(np.diff(tr.switch_regimes) != 0)
    for t, r in zip(tr.switch_times[:20], tr.switch_regimes[:20]):
        left, right = sample_at(tr, t - 1e-12), sample_at(tr, t)
        assert np.max(np.abs(left.x - right.x)) < 1e-8
        assert right.i == r
    regs = np.array([tr.regime_at(t) for t in tr.times])
    np.testing.assert_array_equal(regs, tr.regimes)


def test_box_invariance_along_paths(pset_a):
    box = invariant_box(pset_a)
    rng = np.random.default_rng(0)
    for seed in range(20):
        x0 = rng.uniform(box.lower, box.upper)
        tr = simulate_pdmp(pset_a, HybridState.from_array(x0, seed % 2), 100.0, rng_seed=seed,
                           grid_dt=0.01, dense=False)
        assert box.excursion(tr.states).max() <= 1e-6


def test_invalid_inputs(pset_a):
    with pytest.raises(DomainError):
        simulate_pdmp(pset_a, P_EQ, 0.0)
    with pytest.raises(DomainError):
        simulate_pdmp(pset_a, P_EQ, 1.0, out_times=[0.5, 0.2])
    with pytest.raises(DomainError):
        simulate_pdmp(pset_a, P_EQ, 1.0, grid_dt=-1)


class TestEnsemble:
    def test_single_replicate_matches_simulate(self, pset_a):
        ens = ensemble_pdmp(pset_a, P_EQ, 10.0, 1, rng_seed=77)
        tr = simulate_pdmp(pset_a, P_EQ, 10.0, rng_seed=77)
        np.testing.assert_array_equal(ens.terminal_x[0], tr.states[-1])
        assert ens.terminal_i[0] == tr.regimes[-1]

    def test_thread_count_does_not_change_results(self, pset_a):
        a = ensemble_pdmp(pset_a, P_EQ, 5.0, 40, rng_seed=1, threads=1)
        b = ensemble_pdmp(pset_a, P_EQ, 5.0, 40, rng_seed=1, threads=4)
        np.testing.assert_array_equal(a.x, b.x)

    def test_telegraph_fraction_and_containment(self, pset_a):
        ens = ensemble_pdmp(pset_a, P_EQ, 100.0, 10_000, rng_seed=5)
        assert abs(ens.terminal_i.mean() - 1 / 3) <= 0.015
        assert np.all(invariant_box(pset_a).contains(ens.terminal_x, inflate=1e-9))
        assert len(ens.terminal_states()) == 10_000

    def test_per_replicate_initial_conditions(self, pset_a):
        x0 = np.array([[0.4, 1.0, 0.2], [0.45, 1.5, 0.0]])
        ens = ensemble_pdmp(pset_a, (x0, [1, 0]), 2.0, 2, out_times=[0.0, 1.0, 2.0])
        np.testing.assert_array_equal(ens.x[:, 0, :], x0)
        np.testing.assert_array_equal(ens.i[:, 0], [1, 0])
        assert ens.marginal(1).shape == (2, 4)
        with pytest.raises(DomainError):
            ensemble_pdmp(pset_a, (x0, [1, 0]), 2.0, 3)
        with pytest.raises(DomainError):
            ensemble_pdmp(pset_a, P_EQ, 2.0, 0)
