import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from zrp import e1_rate, linear_rate
from zrp.kmc import SimState, replica_rng
from zrp.particles import ParticleSystem
from zrp.rates import builtin_rate


def test_thinning_bound_and_acceptance():
    ps = ParticleSystem(e1_rate(), [3, 1, 0, 2], replica_rng(0, 0))
    assert ps.cbar == 1.5
    np.testing.assert_allclose(ps.acc[1:], 1 / 1.5 * np.r_[1.5, np.ones(5)])
    assert not ps.always
    assert ParticleSystem(linear_rate(), [3, 1], replica_rng(0, 0)).always


def test_empty_system_just_advances_time():
    ps = ParticleSystem(e1_rate(), np.zeros(5, int), replica_rng(0, 0))
    ps.run_until_macro(1.0)
    assert ps.t_micro == 25.0 and ps.n_proposals == 0


def test_conservation_and_audit():
    ps = ParticleSystem(e1_rate(), [[2, 0, 1, 3, 0], [0, 4, 1, 0, 2]], replica_rng(3, 1))
    before = ps.ccounts.sum(axis=1).copy()
    ps.run_until_micro(5000.0)
    assert np.array_equal(ps.ccounts.sum(axis=1), before)
    assert ps.audit()
    assert np.array_equal(np.bincount(ps.colour), before)


def test_unwrapped_positions_track_sites():
    start = np.array([2, 0, 1, 3, 0, 1])
    ps = ParticleSystem(e1_rate(), start, replica_rng(4, 0))
    initial = ps.site.copy()
    ps.run_until_micro(3000.0)
    assert np.array_equal((initial + ps.disp) % ps.N, ps.site)


def test_backwards_time_rejected():
    ps = ParticleSystem(e1_rate(), [1, 1], replica_rng(0, 0))
    ps.run_until_micro(5.0)
    with pytest.raises(ValueError):
        ps.run_until_micro(4.0)
    with pytest.raises(ValueError):
        ps.observe([0.2, 0.1])


def test_single_walker_variance():
    rate = builtin_rate("custom_table", {"table": [0.0, 1.0, 1.0]})
    R, t = 4000, 40.0
    d = np.empty(R)
    for r in range(R):
        ps = ParticleSystem(rate, [1, 0, 0, 0, 0], replica_rng(1, r))
        ps.run_until_micro(t)
        d[r] = ps.disp[0]
    assert abs(d.var(ddof=1) - t) <= 4 * t * np.sqrt(2 / R)


def test_observe_shapes():
    ps = ParticleSystem(e1_rate(), [[1, 2, 0, 1], [0, 1, 1, 0]], replica_rng(0, 0))
    obs = ps.observe([0.1, 0.2, 0.2], tagged=[0, 3])
    assert obs.ccounts.shape == (3, 2, 4)
    assert obs.disp.shape == (3, 2)
    assert np.array_equal(obs.counts[1], obs.counts[2])


def _site0_samples(engine, R, rate, start, t):
    out = np.empty(R, dtype=int)
    for r in range(R):
        if engine == "tree":
            s = SimState(rate, start, seed=5, replica=r)
            s.run_until_micro(t)
            out[r] = s.counts[0]
        else:
            ps = ParticleSystem(rate, start, replica_rng(6, r))
            ps.run_until_micro(t)
            out[r] = ps.counts[0]
    return out


@pytest.mark.parametrize("rate", [linear_rate(), e1_rate()], ids=["linear", "e1"])
def test_engines_agree_in_distribution(rate):
    start = np.array([8, 0, 0, 0, 0, 0, 0, 0])
    R, t = 3000, 3.0
    a = _site0_samples("tree", R, rate, start, t)
    b = _site0_samples("thin", R, rate, start, t)
    se = np.sqrt(a.var() / R + b.var() / R)
    assert abs(a.mean() - b.mean()) <= 4 * se
    size = max(a.max(), b.max()) + 1
    table = np.stack([np.bincount(a, minlength=size), np.bincount(b, minlength=size)])
    table = table[:, table.sum(axis=0) >= 10]
    assert chi2_contingency(table).pvalue > 1e-3


@given(st.lists(st.integers(0, 5), min_size=2, max_size=16), st.integers(0, 2**32))
def test_keyed_streams_repeat(counts, seed):
    a = ParticleSystem(e1_rate(), counts, replica_rng(seed, 7))
    b = ParticleSystem(e1_rate(), counts, replica_rng(seed, 7))
    a.run_until_micro(25.0)
    b.run_until_micro(25.0)
    assert np.array_equal(a.site, b.site)
    assert a.counts.sum() == sum(counts)
