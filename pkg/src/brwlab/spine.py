"""Trees with a spine under the size-biased measure, and estimators built on them.

Under the tilted measure the spine particle reproduces with the tilted
point process and every other particle reproduces normally.  Spines are
simulated in batches first (positions plus sibling records); ordinary
subtrees of the siblings are grown only for replications where the
integrand can be non-zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .brw import PrunePolicy, TreeRunStats, a_n
from .offspring import PointProcessModel
from .rw import RenewalFunction, WalkModel
from .stats import EstimateWithCI, mean_estimate
from .streams import as_generator, draw

log = logging.getLogger(__name__)

SPINE_REPS_PER_BLOCK = 2 ** 14


# --------------------------------------------------------------------------
# spine batches


@dataclass
class SpineBatch:
    spine: np.ndarray  # (R, n+1) positions of w_0..w_n
    spine_min: np.ndarray  # (R, n+1) running minima along the spine
    sib_rep: np.ndarray
    sib_gen: np.ndarray
    sib_pos: np.ndarray

    @property
    def n(self) -> int:
        return self.spine.shape[1] - 1


def spine_batch(model: PointProcessModel, n: int, reps: int, rng, start: float = 0.0) -> SpineBatch:
    spine = np.empty((reps, n + 1))
    spine[:, 0] = start
    smin = spine.copy()
    reps_l, gens_l, pos_l = [], [], []
    for k in range(1, n + 1):
        tb = model.sample_tilted_batch(rng, reps)
        starts = tb.starts
        par = np.repeat(np.arange(reps), tb.counts)
        pos = spine[par, k - 1] + tb.displacements
        sidx = starts + tb.spine
        spine[:, k] = pos[sidx]
        smin[:, k] = np.minimum(smin[:, k - 1], spine[:, k])
        mask = np.ones(pos.size, dtype=bool)
        mask[sidx] = False
        reps_l.append(par[mask])
        gens_l.append(np.full(int(mask.sum()), k, dtype=np.int64))
        pos_l.append(pos[mask])
    cat = lambda xs, dt: np.concatenate(xs) if xs else np.zeros(0, dt)  # noqa: E731
    return SpineBatch(spine, smin, cat(reps_l, np.int64), cat(gens_l, np.int64), cat(pos_l, float))


def grow_offspine(model: PointProcessModel, sb: SpineBatch, select: np.ndarray, rng,
                  policy: PrunePolicy = PrunePolicy("barrier"), kill_only: bool = True):
    """Generation-n descendants of the siblings of selected spines.

    Returns (positions, path minima, replication index, work) where work
    counts particle-generations per replication.
    """
    n = sb.n
    R = sb.spine.shape[0]
    chosen = np.zeros(R, dtype=bool)
    chosen[select] = True
    keep = chosen[sb.sib_rep]
    s_rep, s_gen, s_pos = sb.sib_rep[keep], sb.sib_gen[keep], sb.sib_pos[keep]
    s_pm = np.minimum(sb.spine_min[s_rep, s_gen - 1], s_pos)
    thr = policy.threshold(n) if policy.mode == "barrier" else np.inf
    work = np.zeros(R)
    pos = np.zeros(0)
    pm = np.zeros(0)
    rep = np.zeros(0, dtype=np.int64)
    for k in range(1, n + 1):
        if pos.size:
            b = model.sample_batch(rng, pos.size)
            par = np.repeat(np.arange(pos.size), b.counts)
            pos = pos[par] + b.displacements
            pm = np.minimum(pm[par], pos)
            rep = rep[par]
        new = s_gen == k
        pos = np.concatenate([pos, s_pos[new]])
        pm = np.concatenate([pm, s_pm[new]])
        rep = np.concatenate([rep, s_rep[new]])
        ok = pos <= thr
        if kill_only:
            ok &= pm >= 0
        pos, pm, rep = pos[ok], pm[ok], rep[ok]
        work += np.bincount(rep, minlength=R)
    return pos, pm, rep, work


def _spine_min_weight(sb, candidates, model, rng, policy):
    """For candidate replications, e^{V(w_n)} / #argmin if the spine attains the killed minimum."""
    R = sb.spine.shape[0]
    end = sb.spine[:, -1]
    weight = np.zeros(R)
    idx = np.flatnonzero(candidates)
    work = np.full(R, float(sb.n))
    if idx.size == 0:
        return weight, work
    pos, pm, rep, w = grow_offspine(model, sb, idx, rng, policy, kill_only=True)
    work += w
    m_off = np.full(R, np.inf)
    np.minimum.at(m_off, rep, pos)
    ties = np.bincount(rep[pos == end[rep]], minlength=R)
    wins = candidates & (m_off >= end)
    weight[wins] = np.exp(end[wins]) / (1.0 + ties[wins])
    return weight, work


# --------------------------------------------------------------------------
# the killed-minimum estimator


def d_barrier(n: int, z: float, lam: float = 0.5) -> np.ndarray:
    """d_k(n, z, lam) for k = 0..n: 0 up to lam*n, then max(a_n(z+1), 0)."""
    k = np.arange(n + 1)
    return np.where(k <= lam * n, 0.0, max(a_n(n, z + 1.0), 0.0))


@dataclass(frozen=True)
class PathConstraint:
    z: float
    L: float
    n: int
    kind: str = "none"  # none | Z_zL | custom
    barrier: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("none", "Z_zL", "custom"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "custom" and (self.barrier is None or len(self.barrier) != self.n + 1):
            raise ValueError("custom constraint needs a barrier d_0..d_n")

    def window(self) -> tuple[float, float]:
        a = a_n(self.n, self.z)
        return a - 1.0, a

    def barrier_vector(self) -> np.ndarray | None:
        if self.kind == "Z_zL":
            return d_barrier(self.n, self.z + self.L, 0.5)
        if self.kind == "custom":
            return np.asarray(self.barrier, float)
        return None


def _killed_block(rng, size, model, n, lo, hi, barrier, policy):
    sb = spine_batch(model, n, size, rng)
    end = sb.spine[:, -1]
    ok = (sb.spine_min[:, -1] >= 0) & (end >= lo) & (end < hi)
    constrained = ok
    if barrier is not None:
        constrained = ok & np.all(sb.spine >= barrier[None, :], axis=1)
    weight, work = _spine_min_weight(sb, ok, model, rng, policy)
    return {"end": end, "weight": weight, "free": weight * ok, "constrained": weight * constrained,
            "work": work, "spine_killed": (sb.spine_min[:, -1] < 0).astype(float)}


def killed_min_samples(model, n, lo, hi, replications, rng, barrier=None,
                       policy: PrunePolicy = PrunePolicy("barrier")) -> dict:
    """Per-replication integrands of the spine representation of the killed minimum.

    ``free`` estimates P(M_n^kill in [lo, hi)); ``constrained`` additionally
    requires the spine to stay above ``barrier``; ``work`` counts simulated
    particle-generations; ``spine_killed`` marks replications whose spine left
    [0, inf), which contribute 0 whether or not the killed population is empty.
    """
    fn = partial(_killed_block, model=model, n=n, lo=lo, hi=hi, barrier=barrier, policy=policy)
    return draw(fn, replications, rng, SPINE_REPS_PER_BLOCK)


def killed_min_estimator(model, n, z, L, constraint: PathConstraint, replications, rng) -> EstimateWithCI:
    if z < 0 or L < 0:
        raise ValueError("need z >= 0 and L >= 0")
    if constraint.kind not in ("none", "Z_zL"):
        raise ValueError("constraint kind must be none or Z_zL")
    lo, hi = constraint.window()
    seed = rng.record() if hasattr(rng, "record") else None
    if hi <= 0:
        return EstimateWithCI(0.0, 0.0, replications, seed, "spine")
    s = killed_min_samples(model, n, max(lo, 0.0), hi, replications, rng, constraint.barrier_vector())
    key = "free" if constraint.kind == "none" else "constrained"
    return mean_estimate(s[key], "spine", seed)


# --------------------------------------------------------------------------
# single realisations


@dataclass
class SpineRealization:
    spine_positions: np.ndarray
    sibling_generation: np.ndarray
    sibling_positions: np.ndarray
    leaf_positions: np.ndarray | None = None
    leaf_path_min: np.ndarray | None = None
    spine_leaf: int | None = None
    tree_stats: TreeRunStats | None = None

    @property
    def n(self) -> int:
        return self.spine_positions.size - 1

    def siblings(self, k: int) -> np.ndarray:
        return self.sibling_positions[self.sibling_generation == k]


def _leaf_stats(pos, pm):
    M = float(pos.min()) if pos.size else math.inf
    alive = pm >= 0
    Mk = float(pos[alive].min()) if alive.any() else math.inf
    e = np.exp(-pos)
    return TreeRunStats(M, Mk, int((pos == M).sum()), int((pos[alive] == Mk).sum()), float(e.sum()),
                        float((pos * e).sum()), math.nan, bool(pos.size), 0.0)


def run_spine_tree(model: PointProcessModel, n: int, rng, subtrees: bool = True) -> SpineRealization:
    rng = as_generator(rng)
    sb = spine_batch(model, n, 1, rng)
    real = SpineRealization(sb.spine[0].copy(), sb.sib_gen, sb.sib_pos)
    if subtrees:
        pos, pm, _, _ = grow_offspine(model, sb, np.array([0]), rng, PrunePolicy(), kill_only=False)
        real.leaf_positions = np.concatenate([[sb.spine[0, -1]], pos])
        real.leaf_path_min = np.concatenate([[sb.spine_min[0, -1]], pm])
        real.spine_leaf = 0
        real.tree_stats = _leaf_stats(real.leaf_positions, real.leaf_path_min)
    return real


def spine_end_samples(model, n, size, rng) -> np.ndarray:
    """V(w_n) with subtrees suppressed."""
    return draw(partial(_spine_end_block, model=model, n=n), size, rng, 2 ** 16)


def _spine_end_block(rng, size, model, n):
    pos = np.zeros(size)
    for _ in range(n):
        tb = model.sample_tilted_batch(rng, size)
        pos = pos + tb.displacements[tb.starts + tb.spine]
    return pos


def _selection_block(rng, size, model, n):
    sb = spine_batch(model, n, size, rng)
    pos, _, rep, _ = grow_offspine(model, sb, np.arange(size), rng, PrunePolicy(), kill_only=False)
    end = sb.spine[:, -1]
    e_off = np.exp(-pos)
    e_sp = np.exp(-end)
    W = e_sp + np.bincount(rep, weights=e_off, minlength=size)
    below = np.bincount(rep[pos < end[rep]], weights=e_off[pos < end[rep]], minlength=size)
    pit = (below + rng.random(size) * e_sp) / W
    sq = (e_sp ** 2 + np.bincount(rep, weights=e_off ** 2, minlength=size)) / W ** 2
    hit = rng.random(size) * W < e_sp  # resampled leaf is the spine
    return {"pit": pit, "hit": hit.astype(float), "sq": sq}


def spine_selection_samples(model, n, size, rng) -> dict:
    """Resampling test of P(w_n = x | F_n) = e^{-V(x)} / W_n.

    ``pit``: randomised position of the spine in the weight-ordered leaf
    list, Uniform(0,1) under the identity.  ``hit``: whether a leaf drawn
    with weights e^{-V}/W_n is the spine, with conditional mean ``sq``.
    """
    return draw(partial(_selection_block, model=model, n=n), size, rng, max(1, 2 ** 18 // 2 ** n))


# --------------------------------------------------------------------------
# good vertices


def _e_k(n):
    k = np.arange(n + 1, dtype=float)
    return np.where(k <= n / 2, k ** (1 / 12), (n - k) ** (1 / 12))


@dataclass
class GoodVertexReport:
    holds: np.ndarray  # per generation 1..n
    first_violation: int | None
    good: bool
    sums: np.ndarray


def sibling_sums(sib_gen, sib_pos, n, d) -> np.ndarray:
    """sum over Omega(w_k) of e^{-(V-d_k)} (1 + (V-d_k)_+), k = 1..n."""
    y = sib_pos - d[sib_gen]
    val = np.exp(-y) * (1 + np.maximum(y, 0.0))
    return np.bincount(sib_gen, weights=val, minlength=n + 1)[1:]


def good_vertex_diagnostic(realization: SpineRealization, z: float, L: float, B: float) -> GoodVertexReport:
    n = realization.n
    d = d_barrier(n, z + L, 0.5)
    sums = sibling_sums(realization.sibling_generation, realization.sibling_positions, n, d)
    bound = B * np.exp(-_e_k(n)[1:])
    holds = sums <= bound
    bad = np.flatnonzero(~holds)
    return GoodVertexReport(holds, int(bad[0]) + 1 if bad.size else None, bool(holds.all()), sums)


def _good_block(rng, size, model, n, z, L):
    sb = spine_batch(model, n, size, rng)
    d = d_barrier(n, z + L, 0.5)
    lo, hi = a_n(n, z) - 1, a_n(n, z)
    end = sb.spine[:, -1]
    inZ = (end >= lo) & (end < hi) & np.all(sb.spine >= d[None, :], axis=1)
    y = sb.sib_pos - d[sb.sib_gen]
    val = np.exp(-y) * (1 + np.maximum(y, 0.0)) * np.exp(_e_k(n)[sb.sib_gen])
    # smallest B for which the spine is good: max_k e^{e_k} * sum_k
    per = np.zeros((size, n + 1))
    np.add.at(per, (sb.sib_rep, sb.sib_gen), val)
    return {"inZ": inZ, "bstar": per.max(axis=1)}


def good_vertex_frequency(model, n, z, L, B_values, replications, rng) -> dict:
    """Violation frequency of the good-vertex condition given w_n in Z^{z,L}_n, per B."""
    s = draw(partial(_good_block, model=model, n=n, z=z, L=L), replications, rng, SPINE_REPS_PER_BLOCK)
    inZ = s["inZ"]
    m = int(inZ.sum())
    out = {"events": m, "frequency": {}}
    for B in B_values:
        if m == 0:
            out["frequency"][B] = None
        else:
            out["frequency"][B] = mean_estimate((s["bstar"][inZ] > B).astype(float), "spine") if m > 1 else None
    return out


# --------------------------------------------------------------------------
# the walk conditioned to stay above -beta


@dataclass
class EnvelopeLog:
    enlargements: int = 0
    proposals: int = 0


def conditioned_steps(walk: WalkModel, renewal: RenewalFunction, x, beta: float, rng,
                      envelope_log: EnvelopeLog | None = None) -> np.ndarray:
    """One step of the h-transform p(x,dy) R(y+beta)/R(x+beta) 1{y >= -beta}, vectorised over x."""
    rng = as_generator(rng)
    x = np.atleast_1d(np.asarray(x, float))
    if np.any(x < -beta):
        raise ValueError("x must be >= -beta")
    sd = math.sqrt(walk.sigma_sq) if walk.sigma_sq > 0 else 1.0
    reach = np.full(x.size, 8.0 * sd)
    out = np.empty(x.size)
    todo = np.arange(x.size)
    hx = renewal(x + beta)
    while todo.size:
        xs = x[todo]
        y = xs + walk.sample_steps(rng, todo.size)
        if envelope_log is not None:
            envelope_log.proposals += todo.size
        over = y > xs + reach[todo]
        if over.any():
            # weight may exceed the majorant: enlarge the range and redraw these steps
            if envelope_log is not None:
                envelope_log.enlargements += int(over.sum())
            log.info("conditioned step: envelope enlarged for %d proposals", int(over.sum()))
            reach[todo[over]] *= 2.0
        K = renewal(xs + reach[todo] + beta) / hx[todo]
        w = np.where(y >= -beta, renewal(y + beta), 0.0) / hx[todo]
        acc = (~over) & (rng.random(todo.size) * K < w)
        out[todo[acc]] = y[acc]
        todo = todo[~acc]
    assert np.all(out >= -beta), "conditioned walk went below -beta"
    return out


def conditioned_spine_step(walk: WalkModel, renewal: RenewalFunction, x: float, beta: float, rng) -> float:
    return float(conditioned_steps(walk, renewal, [x], beta, rng)[0])


def conditioned_paths(walk, renewal, n, beta, size, rng, x0=0.0) -> np.ndarray:
    paths = np.empty((size, n + 1))
    paths[:, 0] = x0
    for k in range(1, n + 1):
        paths[:, k] = conditioned_steps(walk, renewal, paths[:, k - 1], beta, rng)
    assert np.all(paths >= -beta), "conditioned walk went below -beta"
    return paths


def tanaka_samples(walk: WalkModel, renewal: RenewalFunction, beta: float, size: int, rng, x: float = 0.0):
    """R(S_1 + beta) 1{S_1 >= -beta} with S_0 = x; mean R(x + beta)."""
    rng = as_generator(rng)
    y = x + walk.sample_steps(rng, size)
    return np.where(y >= -beta, renewal(y + beta), 0.0)


def tanaka_check(walk, renewal, beta, size, rng, x=0.0, k=4.0):
    lhs = mean_estimate(tanaka_samples(walk, renewal, beta, size, rng, x), "tanaka")
    rhs = renewal.estimate(x + beta)
    z = lhs.zscore(rhs.value, rhs.stderr)
    return lhs, rhs, abs(z) <= k


# --------------------------------------------------------------------------
# first-crossing decomposition


def sibling_xi(X: np.ndarray, parent: np.ndarray, n_parents: int) -> np.ndarray:
    """xi(v) = sum over the siblings w of v of (1 + X_w^+) e^{-X_w}, X relative to the parent."""
    f = (1 + np.maximum(X, 0.0)) * np.exp(-X)
    return np.maximum(np.bincount(parent, weights=f, minlength=n_parents)[parent] - f, 0.0)


def _decomp_block(rng, count, model, n, zs, A, policy):
    zs = np.asarray(zs, float)
    rs = zs - A
    Z = zs.size
    cut = math.isqrt(n)
    pos = np.zeros(count)
    pm = np.zeros(count)
    tree = np.arange(count)
    sid = np.tile(np.arange(count), (Z, 1))
    sgen = np.zeros((Z, count), dtype=np.int64)
    valid = np.ones((Z, count), dtype=bool)
    sinT = np.ones((Z, count), dtype=bool)
    inT = np.ones((Z, count), dtype=bool)
    id_tree = [np.arange(count)]
    next_id = count
    thr = policy.threshold(n) if policy.mode == "barrier" else np.inf
    n_S = np.zeros((count, Z))
    wS_cut = np.ones((count, Z))  # the root, e^{-0}
    for k in range(1, n + 1):
        b = model.sample_batch(rng, pos.size)
        par = np.repeat(np.arange(pos.size), b.counts)
        X = b.displacements
        pp = pos[par]
        new = pp + X
        xi = sibling_xi(X, par, pos.size)
        pm_par = pm[par]
        newmin = new < pm_par
        tr = tree[par]
        sid, sgen, valid, sinT, inT = sid[:, par], sgen[:, par], valid[:, par], sinT[:, par], inT[:, par]
        for j in range(Z):
            r = rs[j]
            inT[j] &= xi < np.exp((pp + r) / 2)
            s = newmin & (new >= -r)
            cnt = int(s.sum())
            if cnt:
                sid[j, s] = next_id + np.arange(cnt)
                id_tree.append(tr[s])
                next_id += cnt
                sgen[j, s] = k
                sinT[j, s] = inT[j, s]
                n_S[:, j] += np.bincount(tr[s], minlength=count)
                if k <= cut:
                    wS_cut[:, j] += np.bincount(tr[s], weights=np.exp(-new[s]), minlength=count)
            valid[j] &= ~(newmin & (new < -r))
            valid[j, s] = True
        pos = new
        pm = np.minimum(pm_par, new)
        tree = tr
        keep = pos <= thr
        if not keep.all():
            pos, pm, tree = pos[keep], pm[keep], tree[keep]
            sid, sgen, valid, sinT, inT = sid[:, keep], sgen[:, keep], valid[:, keep], sinT[:, keep], inT[:, keep]
    id_tree = np.concatenate(id_tree)
    out = {k: np.zeros((count, Z)) for k in ("sumB", "sumB_cut", "sumB_cut_T", "M_below", "Mkill_below")}
    out["n_S"] = n_S + 1.0  # the root
    out["wS_cut"] = wS_cut
    alive = pm >= 0
    for j in range(Z):
        a = a_n(n, zs[j])
        below = pos < a
        out["M_below"][:, j] = np.bincount(tree[below], minlength=count) > 0
        out["Mkill_below"][:, j] = np.bincount(tree[below & alive], minlength=count) > 0
        wit = valid[j] & below
        for key, sel in (("sumB", wit), ("sumB_cut", wit & (sgen[j] <= cut)),
                         ("sumB_cut_T", wit & (sgen[j] <= cut) & sinT[j])):
            u = np.unique(sid[j, sel])
            out[key][:, j] = np.bincount(id_tree[u], minlength=count)
    return out


def decomposition_samples(model, n, zs, A, count, rng, policy=PrunePolicy("barrier")) -> dict:
    """Per tree and per z: sums of B_n^z over S^{z-A} (all, |u| <= sqrt n, and also in T^{z-A}),
    and the indicators of M_n < a_n(z) and M_n^kill < a_n(z)."""
    if any(z < A for z in zs) or A < 0:
        raise ValueError("need z >= A >= 0")
    chunk = max(1, 2 ** 19 // max(1, int(model.mean_children ** n)))
    return draw(partial(_decomp_block, model=model, n=n, zs=tuple(zs), A=A, policy=policy), count, rng, chunk)


@dataclass
class DecompositionReport:
    n: int
    z: float
    A: float
    replications: int
    ratio: EstimateWithCI
    sumB_cut: EstimateWithCI
    sumB: EstimateWithCI
    sumB_cut_T: EstimateWithCI
    P_anyB: EstimateWithCI
    P_M_below: EstimateWithCI
    R_hat: EstimateWithCI
    deficiency_bound: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("n", "z", "A", "replications", "deficiency_bound")}
        for k in ("ratio", "sumB_cut", "sumB", "sumB_cut_T", "P_anyB", "P_M_below", "R_hat"):
            d[k] = getattr(self, k).to_dict()
        d["extra"] = self.extra
        return d


def first_crossing_decomposition(model, n, z, A, replications, rng, renewal: RenewalFunction) -> DecompositionReport:
    """e^z / R(z-A) * E[sum_{u in S^{z-A}, |u| <= sqrt n} B_n^z(u)] and companions."""
    seed = rng.record() if hasattr(rng, "record") else None
    s = decomposition_samples(model, n, [z], A, replications, rng)
    col = {k: v[:, 0] for k, v in s.items()}
    est = {k: mean_estimate(col[k], "decomposition", seed) for k in ("sumB_cut", "sumB", "sumB_cut_T")}
    anyB = mean_estimate(col["sumB"] > 0, "decomposition", seed)
    pm = mean_estimate(col["M_below"], "direct", seed)
    R = renewal.estimate(z - A)
    val = math.exp(z) * est["sumB_cut"].value / R.value
    rel = math.hypot(est["sumB_cut"].rel_stderr if est["sumB_cut"].value else 0.0,
                     R.stderr / R.value if R.value else 0.0)
    ratio = EstimateWithCI(val, abs(val) * rel, replications, seed, "decomposition")
    return DecompositionReport(n, z, A, replications, ratio, est["sumB_cut"], est["sumB"], est["sumB_cut_T"],
                               anyB, pm, R, math.exp(A - z),
                               {"mean_S_size": float(col["n_S"].mean())})
