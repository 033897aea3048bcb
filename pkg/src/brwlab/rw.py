"""The many-to-one random walk and its fluctuation theory.

Ladder variables, renewal functions ``R`` and ``R_-``, the constants
``c0``, ``C+`` and ``C-``, ballot probabilities and the local limit of
barrier-constrained walks.

For centred Gaussian steps the ladder simulation jumps over blocks of
``m`` steps whenever the walk sits at height ``h`` with
``h / (sigma sqrt(m)) >= 8.3``.  The walk is Brownian motion observed at
integer times, so by the reflection principle the skipped block contains
a crossing of 0 with probability at most ``2 Phi(-8.3) < 1e-16``.  Such
rare events are counted in ``LadderTable.approx_events``.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special
from scipy.integrate import trapezoid

from .offspring import Dirac, Gaussian, PointProcessModel, UnsupportedModel
from .stats import EstimateWithCI, mean_estimate
from .streams import as_generator

SKIP_Z = 8.3
DEFAULT_STEP_CAP = 10 ** 17
GENERIC_STEP_CAP = 10 ** 8


@dataclass(frozen=True)
class WalkModel:
    """Step law of S under the exp(-x) tilt of the offspring intensity."""

    step: object
    sigma_sq: float
    name: str = "walk"
    model_hash: str = ""

    @property
    def gaussian_sd(self) -> float | None:
        if isinstance(self.step, Gaussian) and self.step.mean == 0.0 and self.step.sd > 0:
            return self.step.sd
        return None

    @property
    def symmetric(self) -> bool:
        return isinstance(self.step, Gaussian) and self.step.mean == 0.0

    @property
    def degenerate(self) -> bool:
        return self.sigma_sq == 0.0

    def sample_steps(self, rng, size):
        return self.step.sample(rng, size)


def derive_walk(model: PointProcessModel) -> WalkModel:
    a = model.analytic
    if a is not None and not a.exact_boundary:
        raise UnsupportedModel(f"{model.name}: not in the boundary case")
    d = model.displacement
    if model.sampler is not None or not hasattr(d, "sample_tilted"):
        raise UnsupportedModel(f"{model.name}: no exact tilt for the many-to-one step")
    if isinstance(d, Gaussian):
        mu = d.mean - d.sd ** 2
        if abs(mu) <= 1e-12 * max(1.0, d.sd ** 2):
            mu = 0.0  # rounding residue of mean = sd^2
        step = Gaussian(mu, d.sd)
        return WalkModel(step, d.sd ** 2, model.name, model.model_hash)
    if isinstance(d, Dirac):
        return WalkModel(Dirac(d.value), 0.0 if d.value == 0 else d.value ** 2, model.name, model.model_hash)
    return WalkModel(_TiltedStep(d), a.sigma_sq if a else math.nan, model.name, model.model_hash)


@dataclass(frozen=True)
class _TiltedStep:
    law: object

    def sample(self, rng, size):
        return self.law.sample_tilted(rng, size)


# --------------------------------------------------------------------------
# ladder variables


class StepCapExceeded(RuntimeError):
    pass


def _ladder_gaussian(sd, count, rng, sign, cap):
    h = np.zeros(count)
    T = np.zeros(count, dtype=np.int64)
    idx = np.arange(count)
    heights = np.empty(count)
    epochs = np.empty(count, dtype=np.int64)
    approx = 0
    while idx.size:
        m = np.maximum(np.floor((h / (SKIP_Z * sd)) ** 2), 1.0).astype(np.int64)
        new = h + sign * sd * np.sqrt(m) * rng.standard_normal(idx.size)
        T += m
        crossed = new < 0
        approx += int(np.count_nonzero(crossed & (m > 1)))
        if T.size and T.max() > cap:
            raise StepCapExceeded(f"ladder epoch beyond step cap {cap}")
        heights[idx[crossed]] = -new[crossed]
        epochs[idx[crossed]] = T[crossed]
        keep = ~crossed
        h, T, idx = new[keep], T[keep], idx[keep]
    return heights, epochs, approx


def _ladder_generic(walk, count, rng, sign, cap):
    h = np.zeros(count)
    T = np.zeros(count, dtype=np.int64)
    idx = np.arange(count)
    heights = np.empty(count)
    epochs = np.empty(count, dtype=np.int64)
    while idx.size:
        h = h + sign * walk.sample_steps(rng, idx.size)
        T += 1
        crossed = h < 0
        heights[idx[crossed]] = -h[crossed]
        epochs[idx[crossed]] = T[crossed]
        keep = ~crossed
        h, T, idx = h[keep], T[keep], idx[keep]
        if idx.size and T[0] > cap:
            raise StepCapExceeded(f"{idx.size} ladder epochs beyond step cap {cap}")
    return heights, epochs, 0


@dataclass
class LadderTable:
    """First strict descending ladder height |H1| and epoch T1 of S and of -S.

    Samples are sorted by height; the (height, epoch) pairing is kept.
    """

    heights: np.ndarray
    epochs: np.ndarray
    heights_minus: np.ndarray
    epochs_minus: np.ndarray
    budget: int
    approx_events: int = 0

    def __post_init__(self):
        for h, t in ((self.heights, self.epochs), (self.heights_minus, self.epochs_minus)):
            if h.size != self.budget or t.size != self.budget:
                raise ValueError("table size must equal budget")
            if np.any(h <= 0) or np.any(t < 1):
                raise ValueError("ladder heights must be > 0 and epochs >= 1")

    def mean_height(self, minus: bool = False) -> EstimateWithCI:
        return mean_estimate(self.heights_minus if minus else self.heights, "ladder")

    def c0_hat(self, minus: bool = False) -> EstimateWithCI:
        m = self.mean_height(minus)
        return EstimateWithCI(1.0 / m.value, m.stderr / m.value ** 2, m.count, None, "ladder")


def build_ladder_table(walk: WalkModel, budget: int, rng, cap: int | None = None) -> LadderTable:
    if budget < 10 ** 3:
        raise ValueError("budget must be at least 1e3")
    if walk.degenerate:
        raise UnsupportedModel("degenerate walk has no descending ladder epoch")
    rng = as_generator(rng)
    sd = walk.gaussian_sd
    out = []
    approx = 0
    for sign in (1.0, -1.0):
        if sd is not None:
            h, t, a = _ladder_gaussian(sd, budget, rng, sign, cap or DEFAULT_STEP_CAP)
        else:
            h, t, a = _ladder_generic(walk, budget, rng, sign, cap or GENERIC_STEP_CAP)
        order = np.argsort(h, kind="stable")
        out += [h[order], t[order]]
        approx += a
    return LadderTable(out[0], out[1], out[2], out[3], budget, approx)


_HEADER = struct.Struct("<4sIQ")
MAGIC = b"BRWL"
VERSION = 1


def save_ladder_table(table: LadderTable, path) -> None:
    """Little-endian layout: b"BRWL", version u32, count u64, then ``count``
    (height, epoch) f64 pairs for S followed by ``count`` pairs for -S."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, table.budget))
        for h, t in ((table.heights, table.epochs), (table.heights_minus, table.epochs_minus)):
            f.write(np.column_stack([h, t.astype("<f8")]).astype("<f8").tobytes())
    os.replace(tmp, path)


def load_ladder_table(path) -> LadderTable:
    raw = Path(path).read_bytes()
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path}: not a ladder table (version {VERSION})")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 4 * count:
        raise ValueError(f"{path}: truncated ladder table")
    a = body[: 2 * count].reshape(count, 2)
    b = body[2 * count:].reshape(count, 2)
    return LadderTable(a[:, 0].copy(), a[:, 1].astype(np.int64), b[:, 0].copy(), b[:, 1].astype(np.int64), count)


def cached_ladder_table(walk: WalkModel, budget: int, seed: int, cache_dir) -> LadderTable:
    """Build or reload the table keyed by (model hash, seed, budget)."""
    path = Path(cache_dir) / f"ladder-{walk.model_hash or walk.name}-{seed}-{budget}.brwl"
    if path.exists():
        return load_ladder_table(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = build_ladder_table(walk, budget, np.random.default_rng(seed))
    save_ladder_table(table, path)
    return table


# --------------------------------------------------------------------------
# renewal functions


def _renewal_cumsums(h, paths, x_max, rng):
    """Rows of partial sums of resampled ladder heights, each row exceeding x_max."""
    mean = float(h.mean())
    k = int(x_max / mean * 1.3) + 20
    cs = np.cumsum(rng.choice(h, size=(paths, k)), axis=1)
    while True:
        short = cs[:, -1] <= x_max
        if not short.any():
            return cs
        ext = np.cumsum(rng.choice(h, size=(paths, k)), axis=1) + cs[:, -1:]
        cs = np.concatenate([cs, ext], axis=1)


def renewal_R(table: LadderTable, x: float, rng=0, paths: int = 10 ** 4, minus: bool = False) -> EstimateWithCI:
    """Expected number of strict descending ladder heights >= -x."""
    if x < 0:
        return EstimateWithCI(0.0, 0.0, 1, None, "renewal")
    if x == 0:
        return EstimateWithCI(1.0, 0.0, 1, None, "renewal")
    rng = as_generator(rng)
    h = table.heights_minus if minus else table.heights
    counts = 1 + (_renewal_cumsums(h, paths, x, rng) <= x).sum(axis=1)
    return mean_estimate(counts, "renewal")


def renewal_R_minus(table: LadderTable, x: float, rng=0, paths: int = 10 ** 4) -> EstimateWithCI:
    return renewal_R(table, x, rng, paths, minus=True)


@dataclass
class RenewalFunction:
    """R on a grid with linear interpolation; 0 below 0, slope c0 beyond the grid."""

    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    c0_hat: EstimateWithCI

    def __post_init__(self):
        if self.values[0] != 1.0 or self.grid[0] != 0.0:
            raise ValueError("R(0) must equal 1")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("R must be non-decreasing")

    @property
    def x_max(self) -> float:
        return float(self.grid[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.grid, self.values)
        out = np.where(x > self.x_max, self.values[-1] + self.c0_hat.value * (x - self.x_max), out)
        return np.where(x < 0, 0.0, out)

    def se(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.0, np.interp(x, self.grid, self.stderr))

    def estimate(self, x: float) -> EstimateWithCI:
        return EstimateWithCI(float(self(x)), float(self.se(x)), int(self.c0_hat.count), None, "renewal")

    def integral(self, a: float) -> EstimateWithCI:
        """int_0^a R(x) dx by the trapezoid rule on the grid."""
        if a <= 0:
            return EstimateWithCI(0.0, 0.0, int(self.c0_hat.count), None, "renewal")
        xs = np.union1d(self.grid[self.grid < a], [a])
        val = float(trapezoid(self(xs), xs))
        # errors on the grid are strongly positively correlated; bound by perfect correlation
        se = float(trapezoid(self.se(xs), xs))
        return EstimateWithCI(val, se, int(self.c0_hat.count), None, "renewal")

    def growth_constant(self) -> float:
        """max over the grid of R(x)/(1+x)."""
        return float(np.max(self.values / (1.0 + self.grid)))


def renewal_function(table: LadderTable, rng=0, x_max: float = 60.0, step: float = 0.05,
                     paths: int = 10 ** 5, batches: int = 50, minus: bool = False) -> RenewalFunction:
    rng = as_generator(rng)
    h = table.heights_minus if minus else table.heights
    grid = np.round(np.arange(0.0, x_max + step / 2, step), 12)
    per = max(1, paths // batches)
    curves = np.empty((batches, grid.size))
    for b in range(batches):
        cs = _renewal_cumsums(h, per, x_max, rng)
        v = cs[cs <= grid[-1]]
        pos = np.searchsorted(grid, v, side="left")
        curves[b] = 1.0 + np.cumsum(np.bincount(pos, minlength=grid.size)) / per
    values = curves.mean(axis=0)
    stderr = curves.std(axis=0, ddof=1) / math.sqrt(batches)
    values[0] = 1.0
    stderr[0] = 0.0
    upper = grid >= grid[-1] / 2
    slopes = np.polyfit(grid[upper], curves[:, upper].T, 1)[0]
    c0 = EstimateWithCI(float(slopes.mean()), float(slopes.std(ddof=1) / math.sqrt(batches)),
                        per * batches, None, "renewal-slope")
    return RenewalFunction(grid, values, stderr, c0)


# --------------------------------------------------------------------------
# barrier-constrained walks


def sparre_andersen(n: int) -> float:
    """P(min_{1<=j<=n} S_j >= 0) = C(2n, n) 4^-n for symmetric continuous walks."""
    return float(np.exp(special.gammaln(2 * n + 1) - 2 * special.gammaln(n + 1) - n * math.log(4.0)))


def survival_times(walk: WalkModel, n_max: int, size: int, rng, sign: float = 1.0, start: float = 0.0):
    """First k in 1..n_max with sign*S_k < 0 (n_max + 1 if none)."""
    s = np.full(size, float(start))
    idx = np.arange(size)
    out = np.full(size, n_max + 1, dtype=np.int64)
    for k in range(1, n_max + 1):
        if not idx.size:
            break
        s = s + sign * walk.sample_steps(rng, idx.size)
        dead = s < 0
        out[idx[dead]] = k
        s, idx = s[~dead], idx[~dead]
    return out


def constrained_hits(walk: WalkModel, n: int, barrier, lo: float, hi: float, size: int, rng,
                     start: float = 0.0) -> int:
    """Count of walks with S_k >= barrier[k] for 0 <= k <= n and lo <= S_n <= hi."""
    barrier = np.asarray(barrier, float)
    if start < barrier[0]:
        return 0
    s = np.full(size, float(start))
    for k in range(1, n + 1):
        s = s + walk.sample_steps(rng, s.size)
        s = s[s >= barrier[k]]
        if not s.size:
            return 0
    return int(np.count_nonzero((s >= lo) & (s <= hi)))


def constrained_probability(walk, n, barrier, lo, hi, budget, rng, start=0.0, chunk=10 ** 6,
                            kind="direct") -> EstimateWithCI:
    rng = as_generator(rng)
    hits = 0
    done = 0
    while done < budget:
        m = min(chunk, budget - done)
        hits += constrained_hits(walk, n, barrier, lo, hi, m, rng, start)
        done += m
    p = hits / budget
    se = math.sqrt(max(p * (1 - p), 0.0) / budget)
    if hits == 0:
        se = 0.0
    return EstimateWithCI(p, se, budget, None, kind)


@dataclass
class ConstantsReport:
    n_grid: list
    p_plus: list
    p_minus: list
    sparre_andersen: list | None
    C_plus_hat: EstimateWithCI | None
    C_minus_hat: EstimateWithCI | None
    c0_hat: EstimateWithCI | None
    mean_H: EstimateWithCI | None
    sigma_sq: float

    def to_dict(self) -> dict:
        d = lambda e: None if e is None else e.to_dict()  # noqa: E731
        return {"n_grid": list(map(int, self.n_grid)),
                "p_plus": [e.to_dict() for e in self.p_plus],
                "p_minus": [e.to_dict() for e in self.p_minus],
                "sparre_andersen": self.sparre_andersen,
                "C_plus_hat": d(self.C_plus_hat), "C_minus_hat": d(self.C_minus_hat),
                "c0_hat": d(self.c0_hat), "mean_H": d(self.mean_H), "sigma_sq": self.sigma_sq}


def _plateau_intercept(n_grid, ests) -> EstimateWithCI | None:
    """Weighted affine fit of sqrt(n) P against 1/sqrt(n); the intercept."""
    n = np.asarray(n_grid, float)
    y = np.array([e.value for e in ests]) * np.sqrt(n)
    se = np.array([e.stderr for e in ests]) * np.sqrt(n)
    if n.size < 2 or np.any(se <= 0):
        return EstimateWithCI(float(y.mean()), float(se.mean()), ests[0].count, None, "plateau")
    X = np.column_stack([np.ones_like(n), 1 / np.sqrt(n)])
    w = 1 / se ** 2
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = cov @ (X.T @ (w * y))
    return EstimateWithCI(float(beta[0]), float(math.sqrt(cov[0, 0])), ests[0].count, None, "plateau")


def min_probabilities(walk: WalkModel, n_grid, budget: int, rng, sign: float = 1.0, chunk=10 ** 6):
    """P(min_{1<=i<=n} sign*S_i >= 0) for each n in n_grid, from shared paths."""
    rng = as_generator(rng)
    n_grid = list(n_grid)
    n_max = max(n_grid)
    alive = np.zeros(len(n_grid), dtype=np.int64)
    done = 0
    while done < budget:
        m = min(chunk, budget - done)
        t = survival_times(walk, n_max, m, rng, sign)
        alive += np.array([np.count_nonzero(t > n) for n in n_grid])
        done += m
    out = []
    for a in alive:
        p = a / budget
        out.append(EstimateWithCI(p, math.sqrt(p * (1 - p) / budget), budget, None, "direct"))
    return out


def estimate_constants(walk: WalkModel, n_grid, budget: int, rng, ladder_budget: int | None = None) -> ConstantsReport:
    rng = as_generator(rng)
    n_grid = sorted(n_grid)
    pp = min_probabilities(walk, n_grid, budget, rng, 1.0)
    pm = min_probabilities(walk, n_grid, budget, rng, -1.0)
    sa = [sparre_andersen(n) for n in n_grid] if walk.symmetric and not walk.degenerate else None
    c0 = mh = None
    if not walk.degenerate:
        table = build_ladder_table(walk, ladder_budget or budget, rng)
        c0, mh = table.c0_hat(), table.mean_height()
        cp, cm = _plateau_intercept(n_grid, pp), _plateau_intercept(n_grid, pm)
    else:
        cp = cm = None
    return ConstantsReport(n_grid, pp, pm, sa, cp, cm, c0, mh, walk.sigma_sq)


# --------------------------------------------------------------------------
# ballot scenarios and the local limit


@dataclass(frozen=True)
class BallotScenario:
    kind: str  # kozlov | window | two-barrier | lower
    n_grid: tuple = (100, 400, 1600)
    x: float = 0.0
    y: float = 0.0
    a: float = 0.0
    b: float = 1.0
    lam: float = 0.5

    def __post_init__(self):
        if self.kind not in ("kozlov", "window", "two-barrier", "lower"):
            raise ValueError(f"unknown scenario {self.kind!r}")

    def setup(self, n):
        """(start, barrier array, lo, hi, scale)"""
        bar = np.zeros(n + 1)
        x, a, b = self.x, self.a, self.b
        if self.kind == "kozlov":
            return x, bar, -np.inf, np.inf, math.sqrt(n) / (1 + x)
        if self.kind == "window":
            return x, bar, a, b, n ** 1.5 / ((1 + x) * (1 + b - a) * (1 + b))
        if self.kind == "two-barrier":
            bar[math.ceil(self.lam * n):] = max(self.y, 0.0)
            return x, bar, self.y + a, self.y + b, n ** 1.5 / ((1 + x) * (1 + b - a) * (1 + b))
        bar[n // 2 + 1:] = a
        return 0.0, bar, a, a + 1, n ** 1.5


@dataclass
class CheckReport:
    name: str
    n_grid: list
    estimates: list
    ratios: list
    extra: dict = field(default_factory=dict)

    @property
    def spread(self) -> float:
        r = np.asarray(self.ratios, float)
        if r.size == 0 or np.min(r) <= 0:
            return math.inf
        return float(r.max() / r.min() - 1.0)

    def to_dict(self) -> dict:
        return {"name": self.name, "n_grid": list(map(int, self.n_grid)),
                "estimates": [e.to_dict() for e in self.estimates],
                "ratios": [float(r) for r in self.ratios], "spread": self.spread,
                "extra": self.extra}


def ballot_check(walk: WalkModel, scenario: BallotScenario, budget: int, rng) -> CheckReport:
    rng = as_generator(rng)
    ests, ratios = [], []
    for n in scenario.n_grid:
        start, bar, lo, hi, scale = scenario.setup(n)
        e = constrained_probability(walk, n, bar, lo, hi, budget, rng, start)
        ests.append(e)
        ratios.append(e.value * scale)
    return CheckReport(scenario.kind, list(scenario.n_grid), ests, ratios)


def lemma21_constant(C_minus: float, C_plus: float, sigma_sq: float) -> float:
    return C_minus * C_plus * math.sqrt(math.pi) / (math.sqrt(sigma_sq) * math.sqrt(2.0))


def lemma21_check(walk: WalkModel, a: float, n: int, y: float, lambda_n: float, budget: int, rng,
                  renewal_minus: RenewalFunction | None = None,
                  C_plus: float | None = None, C_minus: float | None = None) -> CheckReport:
    """n^{3/2} E[1{0<=S_n-y<=a}; min_[0,n] S >= 0; min_[lambda n, n] S >= y] against
    C- C+ sqrt(pi)/(sigma sqrt 2) * int_0^a R_-(x) dx."""
    if not 0 < lambda_n < 1 or y < 0:
        raise ValueError("need 0 < lambda_n < 1 and y >= 0")
    rng = as_generator(rng)
    bar = np.zeros(n + 1)
    bar[math.ceil(lambda_n * n):] = y
    if a <= 0:
        lhs = EstimateWithCI(0.0, 0.0, budget, None, "direct")
    else:
        lhs = constrained_probability(walk, n, bar, y, y + a, budget, rng)
    lhs_scaled = lhs.scaled(n ** 1.5)
    if C_plus is None or C_minus is None:
        if not walk.symmetric:
            raise ValueError("C_plus and C_minus are required for asymmetric walks")
        # Sparre-Andersen: C+ = C- = 1/sqrt(pi) for symmetric continuous walks
        C_plus = C_minus = 1 / math.sqrt(math.pi)
    cp, cm = C_plus, C_minus
    const = lemma21_constant(cm, cp, walk.sigma_sq)
    if renewal_minus is None:
        renewal_minus = renewal_function(build_ladder_table(walk, 10 ** 5, rng), rng, x_max=max(4.0, a + 1),
                                         minus=True)
    integral = renewal_minus.integral(a)
    rhs = integral.scaled(const)
    ratio = lhs_scaled.value / rhs.value if rhs.value else (1.0 if lhs_scaled.value == 0 else math.inf)
    return CheckReport("lemma21", [n], [lhs_scaled], [ratio],
                       {"rhs": rhs.to_dict(), "constant": const, "a": a, "y": y, "lambda": lambda_n})
