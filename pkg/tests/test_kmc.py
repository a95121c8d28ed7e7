import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zrp import e1_rate, linear_rate
from zrp.kmc import NoEvent, SimState, tree_build, tree_find
from zrp.measures import ColourConfiguration, colour_split, sample_grand_canonical, site_marginal_pmf
from zrp.rates import builtin_rate
from zrp.stats import chi_square_gof


def single_walker_rate():
    return builtin_rate("custom_table", {"table": [0.0, 1.0, 1.0]})


def test_empty_system_has_no_event():
    st_ = SimState(linear_rate(), np.zeros(8, dtype=int))
    with pytest.raises(NoEvent):
        st_.step()
    st_.run_until_macro(0.3)
    assert st_.t_micro == pytest.approx(0.3 * 64)


def test_single_particle_is_simple_walk():
    R, t = 2000, 50.0
    disp = np.empty(R)
    for r in range(R):
        s = SimState(single_walker_rate(), [1, 0, 0, 0, 0, 0, 0, 0], seed=11, replica=r, track=True)
        s.run_until_micro(t)
        disp[r] = s.disp[0]
    assert abs(disp.var(ddof=1) - t) <= 4 * t * np.sqrt(2 / R)


def test_site_selection_frequencies():
    rng = np.random.default_rng(3)
    w = np.array([0.0, 1.0, 1.5, 3.0, 4.0, 0.0, 7.0, 2.0, 5.0])
    P = 16
    tree = np.zeros(2 * P)
    tree_build(tree, w, P)
    u = rng.random(1_000_000) * tree[1]
    picks = np.array([tree_find(tree, P, v) for v in u])
    freq = np.bincount(picks, minlength=w.size) / u.size
    p = w / w.sum()
    se = np.sqrt(p * (1 - p) / u.size)
    assert np.all(np.abs(freq - p) <= 4 * se + 1e-12)
    assert freq[0] == 0 and freq[5] == 0


def test_zero_time_leaves_state_unchanged():
    s = SimState(e1_rate(), [3, 1, 0, 2], seed=1)
    s.run_until_macro(0.0)
    assert s.n_events == 0 and list(s.counts) == [3, 1, 0, 2]


def test_event_count_matches_mean_rate(linear_thermo):
    rng = np.random.default_rng(5)
    cfg = sample_grand_canonical(linear_thermo, 64, 1.0, rng)
    s = SimState(linear_rate(), cfg, seed=2)
    s.run_until_macro(0.1)
    expected = cfg.total * 0.1 * 64**2
    assert abs(s.n_events - expected) <= 0.1 * expected


def test_stationarity_small(e1_thermo):
    hist = np.zeros(40, dtype=int)
    phi = e1_thermo.fugacity_of_density(1.0)
    for r in range(40):
        cfg = sample_grand_canonical(e1_thermo, 32, 1.0, np.random.default_rng(r))
        s = SimState(e1_rate(), cfg, seed=9, replica=r)
        s.run_until_macro(0.5)
        hist += np.bincount(s.counts, minlength=40)[:40]
    pmf = [site_marginal_pmf(e1_thermo, k, phi) for k in range(40)]
    assert chi_square_gof(hist, pmf) > 1e-3


def test_left_continuous_sampling():
    a = SimState(e1_rate(), [2, 2, 2, 2], seed=4)
    a.run_until_micro(10.0)
    b = SimState(e1_rate(), [2, 2, 2, 2], seed=4)
    states = []
    while b.t_micro <= 10.0:
        states.append(b.counts.copy())
        b.step()
    # the overshooting event is drawn but not applied
    assert a.t_micro == 10.0
    assert a.n_events == len(states) - 1
    assert np.array_equal(a.counts, states[-1])


def test_conservation_and_audit():
    cc = ColourConfiguration([[2, 0, 1, 3, 0, 1], [0, 4, 1, 0, 2, 0]])
    s = SimState(e1_rate(), cc, seed=7)
    before = s.ccounts.sum(axis=1).copy()
    s.run_until_micro(2000.0)
    assert np.array_equal(s.ccounts.sum(axis=1), before)
    assert np.array_equal(s.ccounts.sum(axis=0), s.counts)
    assert s.audit()
    assert np.array_equal((s.initial_site + s.disp) % s.N, s.site_of)
    for x in range(s.N):
        assert sorted(s.members[x, : s.nmem[x]]) == sorted(np.flatnonzero(s.site_of == x))


def test_audit_after_long_run():
    rng = np.random.default_rng(1)
    s = SimState(e1_rate(), rng.poisson(1.5, 100), seed=1)
    for _ in range(5):
        s.run_until_micro(s.t_micro + 2000.0)
        assert s.audit()


def test_colour_blind_contraction_is_exact(e1_thermo):
    rng = np.random.default_rng(8)
    cfg = sample_grand_canonical(e1_thermo, 32, 1.2, rng)
    cc = colour_split(cfg, [0.25, 0.75], rng)
    blind = SimState(e1_rate(), cfg, seed=21, replica=3)
    colour = SimState(e1_rate(), cc, seed=21, replica=3)
    for t in (0.05, 0.2, 0.4):
        blind.run_until_macro(t)
        colour.run_until_macro(t)
        assert np.array_equal(blind.counts, colour.ccounts.sum(axis=0))
    assert blind.n_events == colour.n_events


def test_tagged_starts_at_zero_and_unwraps():
    s = SimState(single_walker_rate(), [1, 0, 0, 0], seed=3, track=True)
    assert s.tagged_displacement(0) == 0.0
    while abs(s.disp[0]) < 4:
        s.step()
    assert s.site_of[0] == 0
    assert abs(s.tagged_displacement(0)) == 1.0


def test_tagged_requires_tracking():
    with pytest.raises(ValueError):
        SimState(e1_rate(), [1, 1]).tagged_displacement(0)


def test_snapshot_density():
    assert np.all(SimState(e1_rate(), np.zeros(8, int)).snapshot_density(2) == 0)
    np.testing.assert_array_equal(SimState(e1_rate(), np.full(8, 3)).snapshot_density(4), [[3.0, 3.0]])
    with pytest.raises(ValueError):
        SimState(e1_rate(), np.ones(8, int)).snapshot_density(3)


def test_snapshot_equilibrium_bins(e1_thermo):
    cfg = sample_grand_canonical(e1_thermo, 512, 1.0, np.random.default_rng(12))
    s = SimState(e1_rate(), cfg, seed=12)
    s.run_until_macro(0.01)
    sigma = np.sqrt(float(e1_thermo.sigma2_of(1.0)))
    assert np.all(np.abs(s.snapshot_density(16) - 1.0) <= 4 * sigma / 4.0)


def test_step_event_fields():
    s = SimState(e1_rate(), ColourConfiguration([[1, 0, 0], [0, 0, 1]]), seed=2)
    ev = s.step()
    assert ev.dt_micro > 0
    assert (ev.site_to - ev.site_from) % 3 in (1, 2)
    assert ev.colour in (0, 1) and ev.particle_id in (0, 1)


def test_event_log_csv(tmp_path):
    s = SimState(e1_rate(), ColourConfiguration([[2, 0, 1, 0], [0, 1, 0, 1]]), seed=6, log_events=True)
    s.run_until_micro(20.0)
    path = tmp_path / "events.csv"
    s.write_event_log(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t_micro", "site_from", "site_to", "colour", "particle_id"]
    assert len(rows) == s.n_events + 1
    times = [float(r[0]) for r in rows[1:]]
    assert times == sorted(times) and times[-1] <= 20.0


@given(st.lists(st.integers(0, 6), min_size=2, max_size=20), st.integers(0, 2**32))
def test_seeded_runs_repeat(counts, seed):
    a = SimState(e1_rate(), counts, seed=seed, track=True)
    b = SimState(e1_rate(), counts, seed=seed, track=True)
    a.run_until_micro(30.0)
    b.run_until_micro(30.0)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.disp, b.disp)
    assert a.counts.sum() == sum(counts)
