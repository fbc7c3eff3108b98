import numpy as np
import pytest
from scipy import stats as sps

from hemato.errors import AccuracyWarning, DomainError
from hemato.model import HybridState
from hemato.pdmp import ensemble_pdmp
from hemato.ssa import (CHANNELS, JumpState, ensemble_ssa, equilibrium_initial_state, event_rates,
                        moment_diagnostic, simulate_ssa, simulate_tau_leap, state_from_scaled)
from hemato.stats import ks_distance


class TestStateAndRates:
    @pytest.mark.parametrize("args", [(0, 0, 0, 0, 0), (10, 11, 0, 0, 0), (10, -1, 0, 0, 0),
                                      (10, 5, -1, 0, 0), (10, 5, 0, -1, 0), (10, 5, 0, 0, 2)])
    def test_invalid_states(self, args):
        with pytest.raises(DomainError):
            JumpState(*args)

    def test_reference_rates(self, pset_a):
        r = event_rates(pset_a, JumpState(100, 50, 500, 5, 1))
        assert r.as_tuple() == pytest.approx((50, 75, 1000, 500, 10, 5, 0, 1))
        assert r.total == pytest.approx(1641)
        assert len(CHANNELS) == 8

    def test_saturation(self, pset_a):
        r = event_rates(pset_a, JumpState(100, 100, 10, 3, 1))
        assert r.hsc_activate == 0 and r.cancer_activate == 0

    def test_empty_compartments(self, pset_a):
        r = event_rates(pset_a, JumpState(100, 40, 0, 0, 0))
        assert r.rbc_death == r.mut_death == r.mut_birth == r.cancer_deactivate == 0

    def test_scaling(self, pset_a):
        s = JumpState(100, 50, 1000, 10, 1)
        np.testing.assert_allclose(s.scaled(pset_a), [0.5, 1.0, 1.0])
        assert state_from_scaled(pset_a, 100, [0.5, 1.0, 1.0], 1) == s


class TestExact:
    def test_reproducible_event_sequence(self, pset_a):
        init = JumpState(100, 50, 1000, 0, 0)
        a = simulate_ssa(pset_a, init, 2.0, 0.1, rng_seed=3, log_events=True)
        b = simulate_ssa(pset_a, init, 2.0, 0.1, rng_seed=3, log_events=True)
        np.testing.assert_array_equal(a.event_times, b.event_times)
        np.testing.assert_array_equal(a.event_channels, b.event_channels)
        assert a.n_events == len(a.event_times) > 0

    def test_mutant_births_need_active_regime(self, pset_a):
        init = JumpState(100, 50, 0, 0, 0)
        for seed in range(20):
            tr = simulate_ssa(pset_a, init, 10.0, 0.01, rng_seed=seed, log_events=True)
            ch = tr.event_channels
            first_on = np.flatnonzero(ch == CHANNELS.index("cancer_activate"))
            cut = first_on[0] if first_on.size else len(ch)
            assert not np.any(ch[:cut] == CHANNELS.index("mut_birth"))
            if first_on.size:
                assert np.all(tr.counts[tr.times < tr.event_times[cut], 2] == 0)

    def test_grid_and_path_validity(self, pset_a):
        tr = simulate_ssa(pset_a, JumpState(100, 50, 500, 5, 1), 10.0, 0.1, rng_seed=1)
        assert len(tr.times) == 101 and tr.times[-1] == pytest.approx(10.0)
        c = tr.counts
        assert np.all((c[:, 0] >= 0) & (c[:, 0] <= 100) & (c[:, 1] >= 0) & (c[:, 2] >= 0))
        assert set(np.unique(c[:, 3])) <= {0, 1}
        assert np.all((tr.x[:, 0] >= 0) & (tr.x[:, 0] <= 1))
        assert len(tr.samples) == 101

    def test_invalid_horizon(self, pset_a):
        with pytest.raises(DomainError):
            simulate_ssa(pset_a, JumpState(10, 5, 0, 0, 0), 0.0, 0.1)
        with pytest.raises(DomainError):
            simulate_ssa(pset_a, JumpState(10, 5, 0, 0, 0), 1.0, 0.0)

    def test_constant_rate_birth_death_balance(self, pset_a):
        # frozen regulation: E[N2] = K^alpha c1 E[N1] / d with E[N1] = K a / (a + q1)
        p = pset_a.replace(q3=0.0)
        K = 100
        ens = ensemble_ssa(p, K, 10.0, 2000, rng_seed=4)
        target = K ** p.alpha * p.c1 * K * p.a / (p.a + p.q1) / p.d
        n2 = ens.counts[:, 1]
        assert abs(n2.mean() - target) < 3 * n2.std(ddof=1) / np.sqrt(len(n2))

    def test_regime_telegraph_law(self, pset_a):
        ens = ensemble_ssa(pset_a, 20, 30.0, 4000, rng_seed=6)
        se = np.sqrt(1 / 3 * 2 / 3 / 4000)
        assert abs(ens.i.mean() - 1 / 3) < 3 * se

    def test_agrees_with_limit_at_large_K(self, pset_a):
        n = 2000
        rng = np.random.default_rng(0)
        inits = [equilibrium_initial_state(pset_a, 400, rng) for _ in range(n)]
        jump = ensemble_ssa(pset_a, 400, 10.0, n, rng_seed=1, init=inits)
        x0 = np.stack([s.scaled(pset_a) for s in inits])
        i0 = np.array([s.I for s in inits])
        lim = ensemble_pdmp(pset_a, (x0, i0), 10.0, n, rng_seed=2)
        a, b = jump.x[:, 1], lim.terminal_x[:, 1]
        se = np.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
        assert abs(a.mean() - b.mean()) < 3 * se

    def test_ensemble_thread_independent(self, pset_a):
        a = ensemble_ssa(pset_a, 50, 2.0, 16, rng_seed=3, threads=1)
        b = ensemble_ssa(pset_a, 50, 2.0, 16, rng_seed=3, threads=3)
        np.testing.assert_array_equal(a.counts, b.counts)
        with pytest.raises(DomainError):
            ensemble_ssa(pset_a, 50, 2.0, 2, init=[JumpState(50, 1, 0, 0, 0)])


class TestTauLeap:
    def test_matches_exact_in_distribution(self, pset_a):
        init = JumpState(100, 50, 1000, 0, 0)
        tau = [simulate_tau_leap(pset_a, init, 5.0, 1e-3, rng_seed=s, grid_dt=5.0).x[-1, 1]
               for s in range(1000)]
        exact = ensemble_ssa(pset_a, 100, 5.0, 4000, rng_seed=99, init=init).x[:, 1]
        assert ks_distance(np.array(tau), exact) < 0.05

    def test_zero_rates_give_zero_increments(self, pset_a):
        # one leap from N1 = K, N2 = N3 = 0, I = 0: hsc_activate, mut_birth,
        # rbc_death and mut_death all have rate zero over the frozen step
        init = JumpState(10, 10, 0, 0, 0)
        for seed in range(50):
            tr = simulate_tau_leap(pset_a, init, 1e-3, 1e-3, rng_seed=seed)
            assert tr.counts[-1, 2] == 0
            assert tr.n_clamped == 0 and tr.counts[-1, 0] <= 10

    def test_clamp_warning(self, pset_a):
        with pytest.warns(AccuracyWarning):
            tr = simulate_tau_leap(pset_a, JumpState(10, 5, 5, 2, 1), 20.0, 0.5, rng_seed=1)
        assert tr.clamp_fraction > 0.01
        assert np.all(tr.counts[:, :3] >= 0) and np.all(tr.counts[:, 0] <= 10)

    def test_rejects_bad_step(self, pset_a):
        with pytest.raises(DomainError):
            simulate_tau_leap(pset_a, JumpState(10, 5, 0, 0, 0), 1.0, 0.0)

    def test_moment_diagnostic_bounded(self, pset_a):
        res = moment_diagnostic(pset_a, [20, 80, 320], 5.0, 100, rng_seed=0)
        means = np.array([res[K][0] for K in (20, 80, 320)])
        assert np.all(np.isfinite(means))
        # sup |X^K|^2 stays of the order of |p|^2 + box size and does not grow with K
        assert means.max() < 10
        assert means[-1] <= means[0] * 1.5
