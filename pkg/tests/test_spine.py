import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sst

from brwlab import rw, spine
from brwlab.brw import a_n, killed_window_indicators
from brwlab.offspring import one_child
from brwlab.stats import mean_estimate

LN2 = math.log(2)


@pytest.fixture(scope="module")
def renewal(bg_walk):
    table = rw.build_ladder_table(bg_walk, 10 ** 5, np.random.default_rng(11))
    return rw.renewal_function(table, np.random.default_rng(12), x_max=80.0, paths=20_000)


def test_spine_batch_shapes(bg, rng):
    sb = spine.spine_batch(bg, 5, 100, rng)
    assert sb.n == 5 and sb.spine.shape == (100, 6)
    assert np.all(sb.spine[:, 0] == 0)
    assert np.all(sb.spine_min == np.minimum.accumulate(sb.spine, axis=1))
    # binary tree: one sibling per generation per replication
    assert sb.sib_pos.size == 500
    assert np.all(np.bincount(sb.sib_rep) == 5)


def test_one_child_spine_estimator_is_exact(oc0, rng):
    n = 4
    z = 1.5 * math.log(n) - 0.5  # window [-0.5, 0.5) contains 0
    c = spine.PathConstraint(z, 0.0, n)
    e = spine.killed_min_estimator(oc0, n, z, 0.0, c, 50, rng)
    assert e.value == 1.0 and e.stderr == 0.0


def test_empty_window_is_exactly_zero(bg, rng):
    n = 8
    z = 1.5 * math.log(n) + 0.1
    e = spine.killed_min_estimator(bg, n, z, 0.0, spine.PathConstraint(z, 0.0, n), 100, rng)
    assert e.value == 0.0 and e.estimator_kind == "spine"


def test_constrained_below_free(bg, rng):
    n, z = 10, 1.0
    lo, hi = spine.PathConstraint(z, 0.0, n).window()
    s = spine.killed_min_samples(bg, n, max(lo, 0), hi, 5000, rng, spine.d_barrier(n, z + 0.5))
    assert np.all(s["constrained"] <= s["free"])
    assert np.all(s["free"] >= 0)
    assert np.all(s["work"] >= n)


def test_estimator_guards(bg, rng):
    c = spine.PathConstraint(1.0, 0.0, 5)
    with pytest.raises(ValueError):
        spine.killed_min_estimator(bg, 5, -1.0, 0.0, c, 10, rng)
    with pytest.raises(ValueError):
        spine.killed_min_estimator(bg, 5, 1.0, 0.0, spine.PathConstraint(1.0, 0.0, 5, "custom", (0,) * 6), 10, rng)
    with pytest.raises(ValueError):
        spine.PathConstraint(1.0, 0.0, 5, "custom", (0, 0))
    with pytest.raises(ValueError):
        spine.PathConstraint(1.0, 0.0, 5, "other")


def test_d_barrier():
    d = spine.d_barrier(10, 0.5)
    assert np.all(d[:6] == 0)
    assert np.all(d[6:] == pytest.approx(max(a_n(10, 1.5), 0)))


def test_spine_tree_realization(bg, rng):
    r = spine.run_spine_tree(bg, 6, rng)
    assert r.n == 6 and r.leaf_positions.size == 2 ** 6
    assert r.leaf_positions[r.spine_leaf] == r.spine_positions[-1]
    assert r.siblings(3).size == 1
    assert r.tree_stats.M_n <= r.spine_positions[-1]
    assert spine.run_spine_tree(bg, 3, rng, subtrees=False).leaf_positions is None


def test_spine_end_law(bg, rng):
    v = spine.spine_end_samples(bg, 8, 20_000, rng)
    assert sst.kstest(v / math.sqrt(8 * 2 * LN2), "norm").pvalue > 1e-3


def test_spine_end_one_child(oc0, rng):
    assert np.all(spine.spine_end_samples(oc0, 5, 100, rng) == 0)


def test_spine_selection_identities(bg, rng):
    s = spine.spine_selection_samples(bg, 5, 4000, rng)
    assert sst.kstest(s["pit"], "uniform").pvalue > 1e-3
    assert abs(s["hit"].mean() - s["sq"].mean()) < 4 * s["hit"].std() / math.sqrt(s["hit"].size)


def test_good_vertex_vacuous_for_one_child(oc0, rng):
    r = spine.run_spine_tree(oc0, 10, rng, subtrees=False)
    rep = spine.good_vertex_diagnostic(r, 1.0, 0.5, 0.0)
    assert rep.good and rep.first_violation is None


def test_good_vertex_fails_with_zero_B(bg, rng):
    r = spine.run_spine_tree(bg, 10, rng, subtrees=False)
    rep = spine.good_vertex_diagnostic(r, 1.0, 0.5, 0.0)
    assert not rep.good and rep.first_violation == 1


def test_good_vertex_frequency_monotone(bg, rng):
    out = spine.good_vertex_frequency(bg, 12, 0.5, 0.5, [1.0, 10.0, 100.0, 1e4], 20_000, rng)
    f = [out["frequency"][B].value for B in (1.0, 10.0, 100.0, 1e4)]
    assert out["events"] > 10
    assert all(a >= b for a, b in zip(f, f[1:]))


def test_conditioned_step_at_boundary(bg_walk, renewal, rng):
    beta = 1.0
    log = spine.EnvelopeLog()
    y = spine.conditioned_steps(bg_walk, renewal, np.full(5000, -beta), beta, rng, log)
    assert np.all(y >= -beta)
    assert log.proposals >= 5000
    with pytest.raises(ValueError):
        spine.conditioned_steps(bg_walk, renewal, [-2.0], beta, rng)


def test_conditioned_step_far_from_barrier(bg_walk, renewal, rng):
    # far above the barrier the h-transform barely changes the step law
    y = spine.conditioned_steps(bg_walk, renewal, np.zeros(3000), 50.0, rng)
    assert sst.kstest(y / math.sqrt(2 * LN2), "norm").pvalue > 1e-3


def test_conditioned_paths(bg_walk, renewal, rng):
    p = spine.conditioned_paths(bg_walk, renewal, 10, 0.5, 500, rng)
    assert p.shape == (500, 11) and np.all(p >= -0.5)
    # conditioned walks drift away from the barrier
    assert p[:, -1].mean() > 1.0


def test_tanaka(bg_walk, renewal, rng):
    lhs, rhs, ok = spine.tanaka_check(bg_walk, renewal, 2.0, 200_000, rng)
    assert ok, (lhs, rhs)


def test_sibling_xi():
    X = np.array([0.0, 1.0, -1.0, 2.0])
    parent = np.array([0, 0, 1, 2])
    xi = spine.sibling_xi(X, parent, 3)
    f = (1 + np.maximum(X, 0)) * np.exp(-X)
    assert xi[0] == pytest.approx(f[1]) and xi[1] == pytest.approx(f[0])
    assert xi[2] == 0 and xi[3] == 0


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.integers(0, 2 ** 31))
@settings(max_examples=50, deadline=None)
def test_sibling_xi_nonnegative(xs, seed):
    X = np.asarray(xs)
    parent = np.sort(np.random.default_rng(seed).integers(0, 4, X.size))
    assert np.all(spine.sibling_xi(X, parent, 4) >= 0)


def test_decomposition_identity_at_z_equals_A(bg, rng):
    s = spine.decomposition_samples(bg, 8, [1.0, 2.0], 1.0, 400, rng)
    assert np.array_equal(s["sumB"][:, 0], s["Mkill_below"][:, 0])
    assert np.all(s["sumB_cut_T"] <= s["sumB_cut"])
    assert np.all(s["sumB_cut"] <= s["sumB"])
    # a witness exists only if the minimum is below the level
    assert np.all((s["sumB"][:, 1] > 0) <= (s["M_below"][:, 1] > 0))


def test_decomposition_one_child_has_root_only(rng):
    s = spine.decomposition_samples(one_child("1"), 6, [1.0], 0.5, 20, rng)
    assert np.all(s["n_S"] == 1)


def test_decomposition_guard(bg, rng):
    with pytest.raises(ValueError):
        spine.decomposition_samples(bg, 5, [0.5], 1.0, 10, rng)


def test_first_crossing_report(bg, renewal, rng):
    rep = spine.first_crossing_decomposition(bg, 8, 2.0, 1.0, 500, rng, renewal)
    assert rep.ratio.value >= 0
    assert rep.deficiency_bound == pytest.approx(math.exp(-1.0))
    assert rep.P_anyB.value <= rep.P_M_below.value + 1e-12
    assert set(rep.to_dict()) >= {"ratio", "R_hat", "extra"}


def test_spine_weights_match_direct_at_small_n(bg, rng):
    # small-n sanity version of the spine/direct bridge
    n, z = 6, 0.5
    c = spine.PathConstraint(z, 0.0, n)
    sp = spine.killed_min_estimator(bg, n, z, 0.0, c, 40_000, rng)
    d = mean_estimate(killed_window_indicators(bg, n, z, 40_000, np.random.default_rng(5)))
    assert abs(sp.value - d.value) < 4 * math.hypot(sp.stderr, d.stderr)
