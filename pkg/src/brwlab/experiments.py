"""Estimator campaigns for the tail and limit-law results, the identity suite and report writers."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import optimize, stats as sst

from . import brw, rw, spine
from .brw import PrunePolicy, a_n
from .offspring import PointProcessModel, check_boundary_conditions
from .stats import CheckResult, EstimateWithCI, mean_estimate
from .streams import Campaign, as_generator, draw

SCHEMA_VERSION = 1
CSV_COLUMNS = ("n", "quantity", "estimate", "stderr", "replications", "estimator_kind", "model_hash", "seed",
               "schema_version")


def _seed_of(rng):
    return rng.record() if isinstance(rng, Campaign) else None


def _sub(rng, label):
    """Independent sub-stream: a child campaign, or the same sequential generator."""
    return rng.child(label) if isinstance(rng, Campaign) else as_generator(rng)


# --------------------------------------------------------------------------
# renewal helper


def renewal_for(walk: rw.WalkModel, ladder_budget: int, rng, paths: int = 10 ** 5) -> rw.RenewalFunction:
    """R-hat for the walk; a degenerate walk has no strict descents, so R = 1 on [0, inf)."""
    if walk.degenerate:
        grid = np.round(np.arange(0.0, 60.0 + 0.025, 0.05), 12)
        return rw.RenewalFunction(grid, np.ones_like(grid), np.zeros_like(grid),
                                  EstimateWithCI(0.0, 0.0, 1, None, "exact"))
    table = rw.build_ladder_table(walk, ladder_budget, _sub(rng, "ladder"))
    return rw.renewal_function(table, as_generator(_sub(rng, "renewal")), paths=paths)


# --------------------------------------------------------------------------
# tails


@dataclass
class TailReport:
    kind: str  # killed | full
    n: int
    z_grid: list
    rows: list  # dicts: z, quantity, estimate (EstimateWithCI or None), note
    replications: int
    model_hash: str
    seed: dict | None = None
    summary: dict = field(default_factory=dict)

    def get(self, z, quantity) -> EstimateWithCI | None:
        for r in self.rows:
            if r["quantity"] == quantity and math.isclose(r["z"], z, abs_tol=1e-12):
                return r["estimate"]
        raise KeyError((z, quantity))

    def series(self, quantity) -> list:
        return [self.get(z, quantity) for z in self.z_grid]

    def csv_rows(self) -> list[dict]:
        return [_csv_row("z", r["z"], self.n, r["quantity"], r["estimate"], self.model_hash, self.seed)
                for r in self.rows]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "z_grid": self.z_grid, "replications": self.replications,
                "model_hash": self.model_hash, "seed": self.seed, "summary": self.summary,
                "rows": [{"z": r["z"], "quantity": r["quantity"], "note": r.get("note", ""),
                          "estimate": None if r["estimate"] is None else r["estimate"].to_dict()}
                         for r in self.rows]}


def default_plateau(n: int) -> tuple[float, float]:
    """z with z <= a_n(z): the upper end keeps the level at least z above the killing barrier."""
    return 0.0, 0.75 * math.log(n)


def _plateau(values, zs):
    v = np.asarray(values, float)
    if v.size == 0 or np.any(v <= 0):
        return math.inf
    return float(v.max() / v.min())


def exp_killed_tail(model: PointProcessModel, n: int, z_grid, budget: int, rng, plateau=None) -> TailReport:
    """e^z P(M_n^kill < a_n(z)) from one campaign of the spine estimator.

    Each replication yields e^{V(w_n)} / #argmin when the spine is the killed
    minimum; summing the windows I_n(z+k), k >= 0, is the indicator of
    V(w_n) < a_n(z), so all z share the same spines.
    """
    zs = [float(z) for z in z_grid]
    if any(z <= 0 for z in zs):
        raise ValueError("z_grid must lie in (0, (3/2) ln n)")
    seed = _seed_of(rng)
    feasible = [z for z in zs if a_n(n, z) > 0]
    rows = []
    if feasible:
        s = spine.killed_min_samples(model, n, 0.0, a_n(n, min(feasible)), budget, rng)
        end, w = s["end"], s["weight"]
        work = float(s["work"].sum())
        killed_frac = float(s["spine_killed"].mean())
    else:
        end = w = np.zeros(budget)
        work = 0.0
        killed_frac = None
    per_z = {}
    for z in zs:
        a = a_n(n, z)
        if a <= 0:
            zero = EstimateWithCI(0.0, 0.0, budget, seed, "exact")
            for q in ("P_kill_window", "P_kill", "ez_P_kill", "ez_P_kill_geometric"):
                rows.append({"z": z, "quantity": q, "estimate": zero, "note": "z >= (3/2) ln n: exact 0"})
            continue
        cum = w * (end < a)
        win = w * ((end >= a - 1) & (end < a))
        pw = mean_estimate(win, "spine", seed)
        pc = mean_estimate(cum, "spine", seed)
        per_z[z] = math.exp(z) * cum
        rows.append({"z": z, "quantity": "P_kill_window", "estimate": pw, "note": ""})
        rows.append({"z": z, "quantity": "P_kill", "estimate": pc, "note": ""})
        rows.append({"z": z, "quantity": "ez_P_kill", "estimate": pc.scaled(math.exp(z)), "note": ""})
        rows.append({"z": z, "quantity": "ez_P_kill_geometric",
                     "estimate": pw.scaled(math.exp(z) / (1 - math.exp(-1))), "note": ""})
    lo, hi = plateau if plateau is not None else default_plateau(n)
    pz = [z for z in per_z if lo <= z <= hi]
    summary = {"plateau_window": [lo, hi], "plateau_z": pz, "spine_work": work,
               "spine_killed_fraction": killed_frac}
    if pz:
        c1 = mean_estimate(np.mean([per_z[z] for z in pz], axis=0), "spine", seed)
        summary["C1_hat"] = c1.to_dict()
        summary["plateau_ratio"] = _plateau([per_z[z].mean() for z in pz], pz)
    upper = [z for z in per_z if z >= (min(zs) + max(zs)) / 2]
    summary["upper_half_ratio"] = _plateau([per_z[z].mean() for z in upper], upper) if upper else None
    return TailReport("killed", n, zs, rows, budget, model.model_hash, seed, summary)


def c1_hat(report: TailReport) -> EstimateWithCI:
    d = report.summary["C1_hat"]
    return EstimateWithCI(d["value"], d["stderr"], d["count"], d["seed"], d["estimator_kind"])


def _ratio_to(est: EstimateWithCI, C1: EstimateWithCI, c0: EstimateWithCI) -> EstimateWithCI:
    den = C1.value * c0.value
    val = est.value / den
    rel = math.sqrt((est.stderr / est.value) ** 2 + C1.rel_stderr ** 2 + c0.rel_stderr ** 2) if est.value else math.inf
    return EstimateWithCI(val, abs(val) * rel if est.value else est.stderr / den, est.count, est.seed, "ratio")


def exp_full_tail(model: PointProcessModel, n: int, z_grid, budget: int, rng, C1=None, c0=None,
                  A: float = 1.0, decomposition: bool = False, renewal: rw.RenewalFunction | None = None
                  ) -> TailReport:
    """(e^z/z) P(M_n < a_n(z)) by direct counting, optionally with the S/B decomposition on the same trees."""
    zs = [float(z) for z in z_grid]
    if any(z <= 0 for z in zs):
        raise ValueError("z must be positive")
    seed = _seed_of(rng)
    if decomposition:
        if any(z < A for z in zs):
            raise ValueError("decomposition needs z >= A")
        if renewal is None:
            raise ValueError("decomposition needs a renewal function")
        s = spine.decomposition_samples(model, n, zs, A, budget, rng)
        below = s["M_below"]
    else:
        st = brw.run_trees(model, n, budget, rng, policy=PrunePolicy("barrier"))
        below = np.stack([st.M_n < a_n(n, z) for z in zs], axis=1).astype(float)
    rows = []
    for j, z in enumerate(zs):
        ok = math.exp(-z) * budget >= 100
        note = "" if ok else "unavailable: e^-z * replications < 100"
        p = mean_estimate(below[:, j], "direct", seed) if ok else None
        rows.append({"z": z, "quantity": "P_full", "estimate": p, "note": note})
        sc = None if p is None else p.scaled(math.exp(z) / z)
        rows.append({"z": z, "quantity": "ez_over_z_P_full", "estimate": sc, "note": note})
        if C1 is not None and c0 is not None:
            rows.append({"z": z, "quantity": "ratio_to_C1_c0", "note": note,
                         "estimate": None if sc is None else _ratio_to(sc, C1, c0)})
        if decomposition:
            anyB = mean_estimate(s["sumB"][:, j] > 0, "decomposition", seed)
            rows.append({"z": z, "quantity": "P_anyB", "estimate": anyB, "note": f"deficiency <= {math.exp(A - z):.6g}"})
            rows.append({"z": z, "quantity": "ez_over_z_P_anyB", "estimate": anyB.scaled(math.exp(z) / z), "note": ""})
            rep = _lemma_ratios(s, j, z, A, renewal, seed, budget)
            for q, e in rep.items():
                rows.append({"z": z, "quantity": q, "estimate": e, "note": ""})
    summary = {"A": A if decomposition else None}
    if C1 is not None and c0 is not None:
        summary["C1_hat"] = C1.to_dict()
        summary["c0_hat"] = c0.to_dict()
    return TailReport("full", n, zs, rows, budget, model.model_hash, seed, summary)


def _lemma_ratios(s, j, z, A, renewal, seed, count) -> dict:
    ez = math.exp(z)
    R = renewal.estimate(z - A)
    out = {}
    for key, q in (("sumB_cut", "lemma_ratio"), ("sumB", "lemma_ratio_nocut"), ("sumB_cut_T", "lemma_ratio_T")):
        m = mean_estimate(s[key][:, j], "decomposition", seed)
        val = ez * m.value / R.value
        rel = math.hypot(m.rel_stderr if m.value else 0.0, R.rel_stderr if R.value else 0.0)
        out[q] = EstimateWithCI(val, abs(val) * rel if m.value else ez * m.stderr / R.value, count, seed,
                                "decomposition")
    # truncated renewal mass E[sum_{u in S, |u| <= sqrt n} e^{-V(u)}] from the same trees
    num = ez * s["sumB_cut"][:, j]
    den = s["wS_cut"][:, j]
    r = num.mean() / den.mean()
    resid = (num - r * den) / den.mean()
    out["lemma_ratio_truncated_mass"] = EstimateWithCI(float(r), float(resid.std(ddof=1) / math.sqrt(resid.size)),
                                                       count, seed, "decomposition")
    return out


def exp_decomposition(model, n, z, A, replications, rng, renewal) -> spine.DecompositionReport:
    rep = spine.first_crossing_decomposition(model, n, z, A, replications, rng, renewal)
    return rep


# --------------------------------------------------------------------------
# the limit law


@dataclass
class LimitLawReport:
    n: int
    x_grid: np.ndarray
    empirical_survival: np.ndarray
    survival_stderr: np.ndarray
    mixture_prediction: np.ndarray
    C_hat: float
    sup_distance: float
    replications: int
    survived_fraction: float
    negative_D_fraction: float
    flags: list = field(default_factory=list)
    model_hash: str = ""
    seed: dict | None = None

    def __post_init__(self):
        for name in ("empirical_survival", "mixture_prediction"):
            v = getattr(self, name)
            if np.any(v < 0) or np.any(v > 1) or np.any(np.diff(v) > 1e-12):
                raise AssertionError(f"{name} must be non-increasing in [0, 1]")

    def csv_rows(self) -> list[dict]:
        out = []
        for i, x in enumerate(self.x_grid):
            out.append(_csv_row("x", x, self.n, "survival",
                                EstimateWithCI(self.empirical_survival[i], self.survival_stderr[i], self.replications,
                                               self.seed, "direct"), self.model_hash, self.seed))
            out.append(_csv_row("x", x, self.n, "mixture",
                                EstimateWithCI(self.mixture_prediction[i], 0.0, self.replications, self.seed,
                                               "fitted"), self.model_hash, self.seed))
        return out

    def to_dict(self) -> dict:
        return {"n": self.n, "x_grid": self.x_grid.tolist(), "empirical_survival": self.empirical_survival.tolist(),
                "survival_stderr": self.survival_stderr.tolist(),
                "mixture_prediction": self.mixture_prediction.tolist(), "C_hat": self.C_hat,
                "sup_distance": self.sup_distance, "replications": self.replications,
                "survived_fraction": self.survived_fraction, "negative_D_fraction": self.negative_D_fraction,
                "flags": self.flags, "model_hash": self.model_hash, "seed": self.seed}


def _mixture(C, Dp, x):
    return np.exp(-C * np.exp(np.asarray(x, float))[:, None] * Dp[None, :]).mean(axis=1)


def fit_C(M_shift, Dp) -> float:
    """C with mean exp(-C D_+) equal to the empirical P(M_n - (3/2) ln n >= 0)."""
    target = float(np.mean(M_shift >= 0))
    if not 0 < target < 1 or not np.any(Dp > 0):
        return math.nan
    f = lambda lc: float(np.exp(-math.exp(lc) * Dp).mean()) - target  # noqa: E731
    lo, hi = -40.0, 40.0
    if f(lo) * f(hi) > 0:
        return math.nan
    return math.exp(optimize.brentq(f, lo, hi, xtol=1e-12))


def limit_law_from_stats(st: brw.TreeBatchStats, n, x_grid, model_hash="", seed=None) -> LimitLawReport:
    x = np.asarray(x_grid, float)
    M = st.M_n - 1.5 * math.log(n)
    Dp = np.maximum(st.D_n, 0.0)
    N = M.size
    Ms = np.sort(M)
    surv = 1.0 - np.searchsorted(Ms, x, side="left") / N
    se = np.sqrt(surv * (1 - surv) / max(N - 1, 1))
    C = fit_C(M, Dp)
    flags = []
    if not math.isfinite(C):
        flags.append("C fit failed")
        mix = np.full(x.size, np.nan)
        sup = math.nan
    else:
        mix = _mixture(C, Dp, x)
        sup = float(np.max(np.abs(surv - mix)))
    sf = float(np.mean(st.survived))
    if sf * N < 100:
        flags.append("insufficient surviving trees")
    if np.isnan(mix).any():
        mix = np.ones(x.size)
    return LimitLawReport(n, x, surv, se, mix, C, sup, N, sf, float(np.mean(st.D_n < 0)), flags, model_hash, seed)


def exp_limit_law(model: PointProcessModel, n: int, x_grid, replications: int, rng, compare_n=()) -> dict:
    """Survival of M_n - (3/2) ln n against E[exp(-C e^x D_n^+)], C fitted at x = 0.

    Reports for ``n`` and for every generation in ``compare_n`` come from the same trees.
    """
    gens = sorted(set([n, *compare_n]))
    if gens[-1] > 18:
        raise ValueError("exact D_n tracking is limited to n <= 18")
    seed = _seed_of(rng)
    out = brw.run_trees_at(model, gens[-1], replications, rng, generations=gens, policy=PrunePolicy("barrier"))
    return {g: limit_law_from_stats(out[g], g, x_grid, model.model_hash, seed) for g in gens}


# --------------------------------------------------------------------------
# identity suite


@dataclass(frozen=True)
class SuiteBudgets:
    boundary: int = 10 ** 5
    many_to_one: int = 10 ** 5
    martingale_n: int = 3  # W_n and D_n become heavy tailed quickly in n
    martingale_trees: int = 20000
    spine_draws: int = 2 * 10 ** 4
    selection_trees: int = 2000
    ladder: int = 2 * 10 ** 4
    tanaka: int = 10 ** 5
    sparre_walks: int = 10 ** 5
    bridge_n: int = 10
    bridge_trees: int = 4000
    bridge_spines: int = 2 * 10 ** 4
    decomposition_trees: int = 500


@dataclass
class SuiteReport:
    model: str
    model_hash: str
    checks: list
    seed: dict | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def csv_rows(self) -> list[dict]:
        rows = []
        for c in self.checks:
            est = None if c.estimate is None else EstimateWithCI(c.estimate, c.stderr or 0.0, 1, self.seed, "check")
            rows.append(_csv_row("check", c.name, c.detail.get("n", ""), "passed" if c.passed else
                                 ("skipped" if c.passed is None else "failed"), est, self.model_hash, self.seed,
                                 c.detail.get("count", "")))
        return rows

    def to_dict(self) -> dict:
        return {"model": self.model, "model_hash": self.model_hash, "seed": self.seed, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}


def _check(name, est: EstimateWithCI, target, k=4.0, extra_se=0.0, **detail) -> CheckResult:
    ok = est.within(target, k, extra_se)
    detail.setdefault("count", est.count)
    return CheckResult(name, bool(ok), float(est.value), float(target), float(math.hypot(est.stderr, extra_se)),
                       detail)


def _walk_m2o_block(rng, size, walk, n):
    s = walk.sample_steps(rng, size * n).reshape(size, n).sum(axis=1) if n else np.zeros(size)
    return np.exp(s) * (s <= 0)


def many_to_one_check(model, walk, n, count, rng, k=4.0) -> list[CheckResult]:
    """E[sum_{|x|=n} 1{V(x) <= 0}] from trees and as E[e^{S_n} 1{S_n <= 0}] from the walk."""
    tree = mean_estimate(brw.many_to_one_tree_samples(model, n, count, _sub(rng, "m2o-tree"), killed=False),
                         "direct")
    walk_s = mean_estimate(draw(partial(_walk_m2o_block, walk=walk, n=n), count, _sub(rng, "m2o-walk"), 2 ** 18),
                           "walk")
    out = [CheckResult("many_to_one_tree_vs_walk", abs((tree.value - walk_s.value)) <= k * math.hypot(
        tree.stderr, walk_s.stderr), tree.value, walk_s.value, math.hypot(tree.stderr, walk_s.stderr),
        {"n": n, "count": count})]
    sd = walk.gaussian_sd
    if sd is not None and sd > 0:
        v = n * sd * sd
        exact = math.exp(v / 2) * sst.norm.cdf(-math.sqrt(v))
        out.append(_check("many_to_one_tree_closed_form", tree, exact, k, n=n))
        out.append(_check("many_to_one_walk_closed_form", walk_s, exact, k, n=n))
    return out


def martingale_checks(model, n, trees, rng, renewal, beta=1.0, k=4.0) -> list[CheckResult]:
    st = brw.run_trees(model, n, trees, rng, beta=beta, renewal=renewal)  # no pruning for D_n
    R = renewal.estimate(beta)
    return [
        _check("additive_martingale", mean_estimate(st.W_n), 1.0, k, n=n),
        _check("derivative_martingale", mean_estimate(st.D_n), 0.0, k, n=n),
        _check("truncated_derivative_martingale", mean_estimate(st.D_n_beta), R.value, k, R.stderr, n=n, beta=beta),
    ]


def spine_law_checks(model, walk, ns, draws, rng) -> list[CheckResult]:
    out = []
    for n in ns:
        v = spine.spine_end_samples(model, n, draws, _sub(rng, f"spine-{n}"))
        if walk.degenerate:
            target = n * float(walk.sample_steps(as_generator(0), 1)[0])
            out.append(CheckResult(f"spine_law_n{n}", bool(np.all(v == target)), float(v.mean()), target, 0.0,
                                   {"n": n, "count": draws}))
            continue
        p = sst.kstest(v / math.sqrt(n * walk.sigma_sq), "norm").pvalue if walk.symmetric else math.nan
        if math.isnan(p):
            # asymmetric steps: compare with sums of independent tilted steps
            ref = walk.sample_steps(as_generator(_sub(rng, f"spine-ref-{n}")), draws * n).reshape(draws, n).sum(1)
            p = sst.ks_2samp(v, ref).pvalue
        out.append(CheckResult(f"spine_law_n{n}", bool(p > 0.01), float(p), 0.01, None, {"n": n, "count": draws}))
    return out


def spine_selection_check(model, n, trees, rng, k=4.0) -> list[CheckResult]:
    s = spine.spine_selection_samples(model, n, trees, rng)
    diff = mean_estimate(s["hit"] - s["sq"], "spine")
    p = float(sst.kstest(s["pit"], "uniform").pvalue)
    return [_check("spine_selection_resample", diff, 0.0, k, n=n),
            CheckResult("spine_selection_pit", bool(p > 0.01), p, 0.01, None, {"n": n, "count": trees})]


def tanaka_checks(walk, renewal, betas, size, rng, k=4.0) -> list[CheckResult]:
    out = []
    g = as_generator(rng)
    for b in betas:
        lhs, rhs, _ = spine.tanaka_check(walk, renewal, b, size, g, k=k)
        out.append(_check(f"tanaka_beta{b:g}", lhs, rhs.value, k, rhs.stderr, beta=b))
    return out


def sparre_andersen_checks(walk, ns, walks, rng, k=4.0) -> list[CheckResult]:
    if not walk.symmetric or walk.degenerate:
        return [CheckResult("sparre_andersen", None, detail={"reason": "needs a symmetric continuous walk"})]
    out = []
    T = rw.survival_times(walk, max(ns), walks, as_generator(rng))
    for n in ns:
        est = mean_estimate(T > n, "walk")
        out.append(_check(f"sparre_andersen_n{n}", est, rw.sparre_andersen(n), k, n=n))
    return out


def bridge_check(model, n, z, trees, spines, rng) -> list[CheckResult]:
    """Spine estimator vs direct counting for P(M_n^kill in I_n(z)): 95% intervals overlap."""
    d = mean_estimate(brw.killed_window_indicators(model, n, z, trees, _sub(rng, "bridge-direct")), "direct")
    c = spine.PathConstraint(z, 0.0, n, "none")
    s = spine.killed_min_estimator(model, n, z, 0.0, c, spines, _sub(rng, "bridge-spine"))
    return [CheckResult(f"spine_direct_bridge_n{n}_z{z:g}", bool(d.overlaps(s)), s.value, d.value,
                        math.hypot(s.stderr, d.stderr), {"n": n, "z": z, "direct_se": d.stderr, "spine_se": s.stderr})]


def decomposition_identity_check(model, n, z, trees, rng) -> list[CheckResult]:
    """With A = z the decomposition sum is the killed indicator tree by tree."""
    s = spine.decomposition_samples(model, n, [z], z, trees, rng)
    eq = bool(np.array_equal(s["sumB"][:, 0], s["Mkill_below"][:, 0]))
    return [CheckResult("decomposition_z_equals_A", eq, float(s["sumB"].mean()), float(s["Mkill_below"].mean()),
                        0.0, {"n": n, "z": z, "count": trees})]


def exp_identity_suite(model: PointProcessModel, rng, budgets: SuiteBudgets = SuiteBudgets(), k: float = 4.0
                       ) -> SuiteReport:
    seed = _seed_of(rng)
    checks: list[CheckResult] = []
    mr = check_boundary_conditions(model, budgets.boundary, _sub(rng, "boundary"), k)
    for name, ok in mr.verdicts.items():
        if name in ("supercritical", "variance_positive"):
            continue  # properties of the model, reported by validate-model
        checks.append(CheckResult(f"boundary_{name}", bool(ok), detail={"count": budgets.boundary}))
    walk = rw.derive_walk(model)
    renewal = renewal_for(walk, budgets.ladder, _sub(rng, "renewal"), paths=2 * 10 ** 4)
    checks += many_to_one_check(model, walk, 3, budgets.many_to_one, _sub(rng, "m2o"), k)
    checks += martingale_checks(model, budgets.martingale_n, budgets.martingale_trees, _sub(rng, "martingale"),
                                renewal, 1.0, k)
    checks += spine_law_checks(model, walk, (1, 5, 20), budgets.spine_draws, _sub(rng, "spine-law"))
    checks += spine_selection_check(model, 6, budgets.selection_trees, _sub(rng, "selection"), k)
    checks += tanaka_checks(walk, renewal, (0.5, 2.0, 5.0), budgets.tanaka, _sub(rng, "tanaka"), k)
    checks += sparre_andersen_checks(walk, (5, 10, 50), budgets.sparre_walks, _sub(rng, "sparre"), k)
    checks += bridge_check(model, budgets.bridge_n, 1.0, budgets.bridge_trees, budgets.bridge_spines,
                           _sub(rng, "bridge"))
    checks += decomposition_identity_check(model, 8, 1.0, budgets.decomposition_trees, _sub(rng, "decomposition"))
    return SuiteReport(model.name, model.model_hash, checks, seed)


# --------------------------------------------------------------------------
# variance reduction benchmark


def variance_reduction_benchmark(model, n, z, seconds: float, rng) -> dict:
    """Relative standard error of the spine and direct estimators of P(M_n^kill in I_n(z)) at equal wall time."""
    out = {}
    for kind in ("direct", "spine"):
        g = as_generator(_sub(rng, f"vr-{kind}"))
        chunks = []
        t0 = time.perf_counter()
        while time.perf_counter() - t0 < seconds:
            if kind == "direct":
                chunks.append(brw.killed_window_indicators(model, n, z, 256, g))
            else:
                lo, hi = a_n(n, z) - 1, a_n(n, z)
                chunks.append(spine.killed_min_samples(model, n, max(lo, 0.0), hi, 4096, g)["free"])
        el = time.perf_counter() - t0
        e = mean_estimate(np.concatenate(chunks), kind)
        # rescale to exactly ``seconds``
        rse = e.rel_stderr * math.sqrt(el / seconds)
        out[kind] = {"estimate": e.to_dict(), "elapsed": el, "rel_se_at_budget": rse}
    out["ratio"] = out["spine"]["rel_se_at_budget"] / out["direct"]["rel_se_at_budget"]
    return out


# --------------------------------------------------------------------------
# writers


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _csv_row(axis, coord, n, quantity, est: EstimateWithCI | None, model_hash, seed, count=None) -> dict:
    return {"axis": axis, "coord": _fmt(coord), "n": _fmt(n), "quantity": quantity,
            "estimate": "" if est is None else _fmt(est.value), "stderr": "" if est is None else _fmt(est.stderr),
            "replications": _fmt(count if count is not None else (est.count if est is not None else "")),
            "estimator_kind": "" if est is None else est.estimator_kind, "model_hash": model_hash,
            "seed": "" if not seed else _fmt(seed.get("seed")), "schema_version": str(SCHEMA_VERSION)}


def atomic_write(path, data: str | bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["axis", "coord", *CSV_COLUMNS], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def json_text(obj) -> str:
    if isinstance(obj, dict):
        obj = {"schema_version": SCHEMA_VERSION, **obj}
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_csv(path, rows) -> None:
    atomic_write(path, csv_text(rows))


def write_json(path, obj) -> None:
    atomic_write(path, json_text(obj))
