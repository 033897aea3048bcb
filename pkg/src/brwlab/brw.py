"""Forward simulation of the branching random walk.

Generations are stored as flat arrays.  Several independent trees are
grown together; ``tree`` holds the index of the tree each particle
belongs to and stays sorted, so per-tree reductions are segment
reductions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import partial

import numpy as np

from .offspring import PointProcessModel
from .stats import EstimateWithCI, mean_estimate
from .streams import as_generator, draw

LEAF_BUDGET = 2 ** 20


class PopulationOverflow(RuntimeError):
    """Raised when a frontier exceeds the configured memory cap."""

    def __init__(self, generation, size, cap, partial=None):
        super().__init__(f"population {size} exceeds cap {cap} at generation {generation}")
        self.generation = generation
        self.size = size
        self.cap = cap
        self.partial = partial


def a_n(n: int, z: float) -> float:
    """Recentred level (3/2) ln n - z."""
    return 1.5 * math.log(n) - z if n > 0 else -z


@dataclass(frozen=True)
class PrunePolicy:
    mode: str = "none"  # none | barrier
    barrier_offset: float = 20.0
    track_bias: bool = True

    def __post_init__(self):
        if self.mode not in ("none", "barrier"):
            raise ValueError(f"unknown prune mode {self.mode!r}")

    def threshold(self, horizon: int) -> float:
        return 1.5 * math.log(max(horizon, 1)) + self.barrier_offset


@dataclass
class Frontier:
    generation: int
    positions: np.ndarray
    path_min: np.ndarray
    parent_index: np.ndarray
    tree: np.ndarray
    beta: float = 0.0
    n_trees: int = 1
    pruned_mass: np.ndarray | None = None

    def __post_init__(self):
        if self.pruned_mass is None:
            self.pruned_mass = np.zeros(self.n_trees)

    @classmethod
    def root(cls, trees: int = 1, start: float = 0.0, beta: float = 0.0) -> "Frontier":
        pos = np.full(trees, float(start))
        return cls(0, pos, pos.copy(), np.full(trees, -1, dtype=np.int64), np.arange(trees), beta, trees)

    def __len__(self):
        return self.positions.size

    @property
    def alive_kill0(self) -> np.ndarray:
        return self.path_min >= 0

    @property
    def alive_killbeta(self) -> np.ndarray:
        return self.path_min >= -self.beta

    def check(self) -> None:
        n = len(self)
        for a in (self.path_min, self.parent_index, self.tree):
            assert a.size == n, "frontier arrays differ in length"
        assert np.all(self.path_min <= self.positions), "path_min above position"
        assert np.all(np.diff(self.tree) >= 0), "tree index not sorted"


def evolve(frontier: Frontier, model: PointProcessModel, policy: PrunePolicy, rng, horizon: int | None = None,
           cap: int | None = None, drop_killed: bool = False) -> Frontier:
    """One generation of branching; returns the children frontier."""
    rng = as_generator(rng)
    b = model.sample_batch(rng, len(frontier))
    parent = np.repeat(np.arange(len(frontier)), b.counts)
    pos = frontier.positions.take(parent)
    pos += b.displacements
    pm = frontier.path_min.take(parent)
    np.minimum(pm, pos, out=pm)
    tree = frontier.tree.take(parent)
    pruned = frontier.pruned_mass
    keep = None
    if policy.mode == "barrier":
        drop = pos > policy.threshold(horizon or frontier.generation + 1)
        if drop.any():
            if policy.track_bias:
                p = pos[drop]
                pruned = pruned + np.bincount(tree[drop], weights=np.exp(-p) * (1 + np.abs(p)),
                                              minlength=frontier.n_trees)
            keep = ~drop
    if drop_killed:
        alive = pm >= 0
        keep = alive if keep is None else keep & alive
    if keep is not None:
        pos, pm, parent, tree = pos[keep], pm[keep], parent[keep], tree[keep]
    out = Frontier(frontier.generation + 1, pos, pm, parent, tree, frontier.beta, frontier.n_trees, pruned)
    if cap is not None and len(out) > cap:
        raise PopulationOverflow(out.generation, len(out), cap, frontier_stats(frontier))
    return out


# --------------------------------------------------------------------------
# per-tree statistics


@dataclass
class TreeRunStats:
    M_n: float
    M_n_kill: float
    argmin_count: int
    argmin_count_kill: int
    W_n: float
    D_n: float
    D_n_beta: float
    survived: bool
    pruned_mass_bound: float


@dataclass
class TreeBatchStats:
    """TreeRunStats of many trees as parallel arrays."""

    M_n: np.ndarray
    M_n_kill: np.ndarray
    argmin_count: np.ndarray
    argmin_count_kill: np.ndarray
    W_n: np.ndarray
    D_n: np.ndarray
    D_n_beta: np.ndarray
    survived: np.ndarray
    pruned_mass_bound: np.ndarray

    def __len__(self):
        return self.M_n.size

    def row(self, i: int) -> TreeRunStats:
        return TreeRunStats(*[getattr(self, f.name)[i].item() for f in fields(self)])

    @classmethod
    def concat(cls, parts):
        return cls(*[np.concatenate([getattr(p, f.name) for p in parts]) for f in fields(cls)])


def _segment_min(values, tree, n_trees):
    out = np.full(n_trees, np.inf)
    if values.size:
        starts = np.searchsorted(tree, np.arange(n_trees))
        nonempty = np.bincount(tree, minlength=n_trees) > 0
        out[nonempty] = np.minimum.reduceat(values, starts[nonempty])
    return out


def frontier_stats(fr: Frontier, renewal=None) -> TreeBatchStats:
    T = fr.n_trees
    pos, tree = fr.positions, fr.tree
    M = _segment_min(pos, tree, T)
    cnt = np.bincount(tree[pos == M[tree]], minlength=T)
    alive = fr.path_min >= 0
    pk, tk = pos[alive], tree[alive]
    Mk = _segment_min(pk, tk, T)
    cntk = np.bincount(tk[pk == Mk[tk]], minlength=T)
    e = np.exp(-pos)
    W = np.bincount(tree, weights=e, minlength=T)
    D = np.bincount(tree, weights=pos * e, minlength=T)
    if renewal is not None:
        ab = fr.path_min >= -fr.beta
        Db = np.bincount(tree[ab], weights=renewal(fr.beta + pos[ab]) * e[ab], minlength=T)
    else:
        Db = np.full(T, np.nan)
    surv = np.bincount(tree, minlength=T) > 0
    return TreeBatchStats(M, Mk, cnt, cntk, W, D, Db, surv, fr.pruned_mass.copy())


def leaf_budget_chunk(model: PointProcessModel, n: int, budget: int = LEAF_BUDGET) -> int:
    size = max(1.0, model.mean_children) ** n
    return max(1, int(budget // max(size, 1.0)))


def _trees_block(rng, count, model, n, beta, policy, renewal, cap, generations):
    fr = Frontier.root(count, 0.0, beta)
    out = {}
    if 0 in generations:
        out[0] = frontier_stats(fr, renewal)
    for g in range(1, n + 1):
        fr = evolve(fr, model, policy, rng, horizon=n, cap=cap)
        if g in generations:
            out[g] = frontier_stats(fr, renewal)
    return out


def run_trees_at(model: PointProcessModel, n: int, count: int, rng, generations=None, beta: float = 0.0,
                 policy: PrunePolicy = PrunePolicy(), renewal=None, cap: int | None = None,
                 chunk: int | None = None) -> dict[int, TreeBatchStats]:
    """Statistics of ``count`` independent trees at the requested generations (same trees)."""
    gens = tuple(sorted(set(generations or (n,))))
    fn = partial(_trees_block, model=model, n=n, beta=beta, policy=policy, renewal=renewal, cap=cap,
                 generations=gens)
    return draw(fn, count, rng, chunk or leaf_budget_chunk(model, n))


def run_trees(model, n, count, rng, beta=0.0, policy=PrunePolicy(), renewal=None, cap=None,
              chunk=None) -> TreeBatchStats:
    return run_trees_at(model, n, count, rng, (n,), beta, policy, renewal, cap, chunk)[n]


def run_tree(model, n, beta, policy, rng, renewal=None, cap=None) -> TreeRunStats:
    return run_trees(model, n, 1, as_generator(rng), beta, policy, renewal, cap).row(0)


def _m2o_block(rng, count, model, n, r, killed):
    fr = Frontier.root(count)
    for _ in range(n):
        fr = evolve(fr, model, PrunePolicy(), rng)
    ok = fr.positions <= r
    if killed:
        ok &= fr.path_min >= 0
    return np.bincount(fr.tree[ok], minlength=count).astype(float)


def many_to_one_tree_samples(model, n, count, rng, r=0.0, killed=True):
    """Per tree, the number of generation-n particles with V <= r (and path >= 0 when ``killed``)."""
    fn = partial(_m2o_block, model=model, n=n, r=r, killed=killed)
    return draw(fn, count, rng, leaf_budget_chunk(model, n))


# --------------------------------------------------------------------------
# stopping lines


@dataclass(frozen=True)
class StoppingCaps:
    max_generation: int = 2000
    max_population: int = 2 ** 22


@dataclass
class StoppingLineResult:
    A: float
    positions: np.ndarray
    generations: np.ndarray
    residual_count: int
    residual_mass: float
    capped: bool = False
    reason: str = ""
    record: dict = field(default_factory=dict)

    @property
    def sum_exp(self) -> float:
        return float(np.exp(-self.positions).sum())

    @property
    def sum_vexp(self) -> float:
        return float((self.positions * np.exp(-self.positions)).sum())


def stopping_lines(model: PointProcessModel, A_values, rng, caps: StoppingCaps = StoppingCaps(),
                   record_generation: int | None = None) -> list[StoppingLineResult]:
    """First-crossing lines of several levels A on one tree.

    With ``record_generation`` the same tree is grown in full up to that
    generation and its W and D there are stored in ``result.record``.
    """
    rng = as_generator(rng)
    A = np.sort(np.asarray(A_values, float))
    if np.any(A <= 0):
        raise ValueError("levels must be positive")
    pos = np.zeros(1)
    crossed = np.zeros((A.size, 1), dtype=bool)
    hits = [[] for _ in A]
    gens = [[] for _ in A]
    record = {}
    capped, reason = False, ""
    rg = record_generation or 0
    g = 0
    while pos.size:
        if g >= caps.max_generation:
            capped, reason = True, "generation cap"
            break
        g += 1
        b = model.sample_batch(rng, pos.size)
        parent = np.repeat(np.arange(pos.size), b.counts)
        pc = pos[parent] + b.displacements
        cp = crossed[:, parent]
        new = (pc[None, :] >= A[:, None]) & ~cp
        for j in range(A.size):
            hits[j].append(pc[new[j]])
            gens[j].append(np.full(int(new[j].sum()), g))
        crossed = cp | new
        if g == rg:
            e = np.exp(-pc)
            record = {"generation": g, "W": float(e.sum()), "D": float((pc * e).sum())}
        keep = ~crossed[-1] if g >= rg else np.ones(pc.size, bool)
        pos, crossed = pc[keep], crossed[:, keep]
        if pos.size > caps.max_population:
            capped, reason = True, "population cap"
            break
    out = []
    for j, a in enumerate(A):
        rest = ~crossed[j]
        out.append(StoppingLineResult(float(a), np.concatenate(hits[j]) if hits[j] else np.zeros(0),
                                      np.concatenate(gens[j]) if gens[j] else np.zeros(0, np.int64),
                                      int(rest.sum()), float(np.exp(-pos[rest]).sum()), capped, reason, record))
    return out


def stopping_line(model, A: float, rng, caps: StoppingCaps = StoppingCaps()) -> StoppingLineResult:
    return stopping_lines(model, [A], rng, caps)[0]


# --------------------------------------------------------------------------
# direct tails of the minimum


@dataclass
class TailTable:
    """Rows (z, quantity, estimate) of tail probabilities of the minimum."""

    n: int
    z_grid: list
    rows: list  # dicts: z, quantity, estimate (EstimateWithCI or None), note
    replications: int
    model_hash: str = ""

    def get(self, z, quantity) -> EstimateWithCI | None:
        for r in self.rows:
            if r["quantity"] == quantity and math.isclose(r["z"], z, abs_tol=1e-12):
                return r["estimate"]
        raise KeyError((z, quantity))


def _tail_rows(z_grid, n, M, Mk, replications, seed, kind="direct"):
    rows = []
    for z in z_grid:
        a = a_n(n, z)
        feasible = math.exp(-z) * replications >= 100
        pf = mean_estimate(M < a, kind, seed) if feasible else None
        if a <= 0:
            pk = EstimateWithCI(0.0, 0.0, replications, seed, "exact")
        else:
            pk = mean_estimate(Mk < a, kind, seed) if feasible else None
        note = "" if feasible else "unavailable: e^-z * replications < 100"
        rows.append({"z": z, "quantity": "P_full", "estimate": pf, "note": note})
        rows.append({"z": z, "quantity": "P_kill", "estimate": pk, "note": note if pk is None else ""})
        rows.append({"z": z, "quantity": "ez_P_kill",
                     "estimate": None if pk is None else pk.scaled(math.exp(z)), "note": note})
        scaled = None if (pf is None or z <= 0) else pf.scaled(math.exp(z) / z)
        rows.append({"z": z, "quantity": "ez_over_z_P_full", "estimate": scaled,
                     "note": note if pf is None else ("z <= 0" if z <= 0 else "")})
    return rows


def minimum_tail_direct(model, n, z_grid, replications, rng, policy=PrunePolicy("barrier")) -> TailTable:
    st = run_trees(model, n, replications, rng, policy=policy)
    seed = rng.record() if hasattr(rng, "record") else None
    rows = _tail_rows(list(z_grid), n, st.M_n, st.M_n_kill, replications, seed)
    return TailTable(n, list(z_grid), rows, replications, model.model_hash)


def killed_window_indicators(model, n, z, replications, rng, policy=PrunePolicy("barrier")) -> np.ndarray:
    """Per tree, 1{M_n^kill in I_n(z)} from direct simulation."""
    a = a_n(n, z)
    if a <= 0:
        return np.zeros(replications)
    st = run_trees(model, n, replications, rng, policy=policy)
    return ((st.M_n_kill >= a - 1) & (st.M_n_kill < a)).astype(float)
