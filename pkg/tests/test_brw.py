import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwlab import brw
from brwlab.offspring import one_child
from brwlab.stats import mean_estimate

LN2 = math.log(2)


def test_a_n():
    assert brw.a_n(1, 0.3) == -0.3
    assert brw.a_n(16, 0.0) == pytest.approx(1.5 * math.log(16))


def test_policy_guard():
    with pytest.raises(ValueError):
        brw.PrunePolicy("sometimes")


def test_evolve_keeps_invariants(bg, rng):
    fr = brw.Frontier.root(50)
    for _ in range(6):
        fr = brw.evolve(fr, bg, brw.PrunePolicy(), rng)
        fr.check()
    assert len(fr) == 50 * 2 ** 6
    assert np.all(np.bincount(fr.tree) == 2 ** 6)


def test_population_cap(bg, rng):
    fr = brw.Frontier.root(1)
    with pytest.raises(brw.PopulationOverflow) as e:
        for _ in range(10):
            fr = brw.evolve(fr, bg, brw.PrunePolicy(), rng, cap=100)
    assert e.value.generation == 7
    assert e.value.partial is not None


def test_drop_killed(bg, rng):
    fr = brw.Frontier.root(10)
    for _ in range(4):
        fr = brw.evolve(fr, bg, brw.PrunePolicy(), rng, drop_killed=True)
    assert np.all(fr.path_min >= 0)


def test_one_child_tree_is_a_point(oc0, rng):
    st_ = brw.run_trees(oc0, 8, 5, rng)
    assert np.all(st_.M_n == 0) and np.all(st_.M_n_kill == 0)
    assert np.all(st_.W_n == 1) and np.all(st_.D_n == 0)
    assert np.all(st_.argmin_count == 1)


def test_killed_minimum_is_above_full(bg, rng):
    st_ = brw.run_trees(bg, 8, 2000, rng)
    assert np.all(st_.M_n_kill >= st_.M_n)
    assert np.all(st_.argmin_count >= 1)


def test_additive_martingale_mean(bg, rng):
    W = brw.run_trees(bg, 4, 20_000, rng).W_n
    assert mean_estimate(W).within(1.0)


def test_pruned_mass_accounts_for_lost_weight(bg, rng):
    # E[W_n] = 1; the pruned e^{-V}(1+|V|) mass bounds what pruning removes, in expectation
    pol = brw.PrunePolicy("barrier", barrier_offset=1.0)
    st_ = brw.run_trees(bg, 8, 20_000, rng, policy=pol)
    assert np.all(st_.pruned_mass_bound >= 0)
    w = mean_estimate(st_.W_n)
    both = mean_estimate(st_.W_n + st_.pruned_mass_bound)
    assert w.value < 1 + 4 * w.stderr
    assert both.value > 1 - 4 * both.stderr
    assert st_.pruned_mass_bound.mean() > 0


def test_killed_equals_full_when_nobody_crossed(bg, rng):
    fr = brw.Frontier.root(300)
    for _ in range(6):
        fr = brw.evolve(fr, bg, brw.PrunePolicy(), rng)
    s = brw.frontier_stats(fr)
    clean = np.bincount(fr.tree[fr.path_min < 0], minlength=300) == 0
    assert clean.any()
    assert np.all(s.M_n_kill[clean] == s.M_n[clean])
    assert np.all(s.M_n_kill >= np.maximum(0, s.M_n))


def test_run_trees_at_shares_trees(bg, rng):
    out = brw.run_trees_at(bg, 6, 300, rng, generations=(3, 6))
    assert set(out) == {3, 6}
    # the minimum can move up, but kill only removes particles
    assert np.all(out[6].M_n_kill >= out[6].M_n)


def test_row_and_concat(bg, rng):
    st_ = brw.run_trees(bg, 3, 4, rng)
    r = st_.row(2)
    assert r.M_n == st_.M_n[2]
    both = brw.TreeBatchStats.concat([st_, st_])
    assert len(both) == 8


def test_many_to_one_samples(bg, rng):
    v = brw.many_to_one_tree_samples(bg, 3, 50_000, rng, killed=False)
    # E[#{|u|=3: V(u) <= 0}] = E[e^{S_3}; S_3 <= 0] with S_3 ~ N(0, 3 sigma^2)
    s = math.sqrt(3 * 2 * LN2)
    exact = math.exp(s * s / 2) * 0.5 * math.erfc(s / math.sqrt(2))
    assert mean_estimate(v).within(exact)
    k = brw.many_to_one_tree_samples(bg, 3, 20_000, rng)
    assert k.mean() <= v.mean()


def test_stopping_line_identities(bg, rng):
    res = [brw.stopping_line(bg, 1.0, rng) for _ in range(3000)]
    assert all(not r.capped and r.residual_count == 0 for r in res)
    assert all(np.all(r.positions >= 1.0) for r in res)
    assert mean_estimate([r.sum_exp for r in res]).within(1.0)


def test_stopping_lines_nested(bg, rng):
    lines = brw.stopping_lines(bg, [2.0, 0.5, 1.0], rng, record_generation=2)
    assert [r.A for r in lines] == [0.5, 1.0, 2.0]
    assert "W" in lines[0].record
    with pytest.raises(ValueError):
        brw.stopping_lines(bg, [0.0], rng)


def test_stopping_line_cap(rng):
    r = brw.stopping_line(one_child("0"), 1.0, rng, brw.StoppingCaps(max_generation=10))
    assert r.capped and r.reason == "generation cap" and r.residual_count == 1


def test_tail_table(bg, rng):
    t = brw.minimum_tail_direct(bg, 6, [0.5, 1.0, 10.0], 2000, rng)
    p = t.get(0.5, "P_full")
    assert 0 <= p.value <= 1
    assert t.get(1.0, "P_kill").value <= t.get(1.0, "P_full").value
    assert t.get(10.0, "P_full") is None
    with pytest.raises(KeyError):
        t.get(0.7, "P_full")


def test_killed_window_zero_when_window_empty(bg, rng):
    assert np.all(brw.killed_window_indicators(bg, 4, 10.0, 10, rng) == 0)


@given(st.integers(1, 60), st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_a_n_is_decreasing_in_z(n, z):
    assert brw.a_n(n, z + 0.1) < brw.a_n(n, z)
