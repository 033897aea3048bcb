"""Offspring point processes in the boundary case.

A model is a child-count law together with an i.i.d. displacement law
(or custom samplers).  Samplers are vectorised: ``sample_batch`` draws the
point processes of many parents at once as a count vector plus one flat
array of displacements.  The tilted law has Radon-Nikodym derivative
``sum_i exp(-X_i)`` with respect to the plain one; for i.i.d. displacements
it is obtained exactly by size-biasing the count, tilting one uniformly
chosen coordinate, and then picking the spine child with weights
``exp(-X_i)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import special

from .stats import mean_estimate

MAX_CHILDREN = 2 ** 16
LN2 = math.log(2.0)


class UnsupportedModel(ValueError):
    pass


class OffspringCapError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# child counts


@dataclass(frozen=True)
class FixedCount:
    b: int

    @property
    def mean(self) -> float:
        return float(self.b)

    def sample(self, rng, size):
        return np.full(size, self.b, dtype=np.int64)

    def sample_size_biased(self, rng, size):
        if self.b < 1:
            raise UnsupportedModel("size-biasing needs a positive mean")
        return np.full(size, self.b, dtype=np.int64)

    def pmf(self, k):
        return np.where(np.asarray(k) == self.b, 1.0, 0.0)


@dataclass(frozen=True)
class ShiftedPoisson:
    """N = 1 + Poisson(extra)."""

    extra: float

    @property
    def mean(self) -> float:
        return 1.0 + self.extra

    def sample(self, rng, size):
        return 1 + rng.poisson(self.extra, size).astype(np.int64)

    def sample_size_biased(self, rng, size):
        # k P(N=k) / E N is a mixture of 1+Poisson and 2+Poisson
        shift = rng.random(size) < self.extra / (1.0 + self.extra)
        return 1 + shift.astype(np.int64) + rng.poisson(self.extra, size).astype(np.int64)

    def pmf(self, k):
        k = np.asarray(k)
        j = k - 1
        out = np.zeros(k.shape, float)
        ok = j >= 0
        out[ok] = np.exp(-self.extra + j[ok] * math.log(self.extra) - special.gammaln(j[ok] + 1))
        return out


@dataclass(frozen=True)
class TabulatedCount:
    """Finite-support count law given by probabilities of 0, 1, 2, ..."""

    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, float)
        if np.any(p < 0) or not math.isclose(p.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("probs must be a probability vector")

    @property
    def mean(self) -> float:
        p = np.asarray(self.probs, float)
        return float(np.dot(np.arange(p.size), p))

    def sample(self, rng, size):
        p = np.asarray(self.probs, float)
        return rng.choice(p.size, size=size, p=p).astype(np.int64)

    def sample_size_biased(self, rng, size):
        p = np.asarray(self.probs, float)
        q = np.arange(p.size) * p
        if q.sum() <= 0:
            raise UnsupportedModel("size-biasing needs a positive mean")
        return rng.choice(p.size, size=size, p=q / q.sum()).astype(np.int64)

    def pmf(self, k):
        p = np.asarray(self.probs, float)
        k = np.asarray(k)
        out = np.zeros(k.shape, float)
        ok = (k >= 0) & (k < p.size)
        out[ok] = p[k[ok]]
        return out


# --------------------------------------------------------------------------
# displacements


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size)

    @property
    def laplace(self) -> float:
        """E[exp(-X)]"""
        return math.exp(-self.mean + 0.5 * self.sd ** 2)

    def sample_tilted(self, rng, size):
        # density exp(-x) f(x) / laplace is Normal(mean - sd^2, sd^2)
        return rng.normal(self.mean - self.sd ** 2, self.sd, size)

    def tilted_moments(self) -> tuple[float, float]:
        """Mean and second moment of the tilted law."""
        m = self.mean - self.sd ** 2
        return m, m * m + self.sd ** 2


@dataclass(frozen=True)
class Dirac:
    value: float

    def sample(self, rng, size):
        return np.full(size, float(self.value))

    @property
    def laplace(self) -> float:
        return math.exp(-self.value)

    def sample_tilted(self, rng, size):
        return np.full(size, float(self.value))

    def tilted_moments(self) -> tuple[float, float]:
        return float(self.value), float(self.value) ** 2


@dataclass(frozen=True)
class RejectionTilt:
    """Displacement law whose tilt is sampled by rejection.

    ``proposal(rng, size)`` draws from a density g, ``log_ratio(x)`` returns
    ``log(exp(-x) f(x) / g(x))`` up to the additive constant ``log_bound``
    with ``log_ratio <= log_bound`` everywhere (the envelope).
    """

    base: object
    proposal: Callable
    log_ratio: Callable
    log_bound: float
    laplace: float

    def sample(self, rng, size):
        return self.base.sample(rng, size)

    def sample_tilted(self, rng, size):
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            x = self.proposal(rng, max(16, 2 * need))
            lr = self.log_ratio(x) - self.log_bound
            if np.any(lr > 1e-12):
                raise UnsupportedModel("rejection envelope violated")
            acc = x[np.log(rng.random(x.size)) < lr][:need]
            out[filled:filled + acc.size] = acc
            filled += acc.size
        return out


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class AnalyticMoments:
    mean_children: float
    sigma_sq: float
    exact_boundary: bool

    def __post_init__(self):
        if not (0 <= self.sigma_sq < math.inf):
            raise ValueError("sigma_sq must be finite and non-negative")


@dataclass
class OffspringBatch:
    """Point processes of ``len(counts)`` parents, displacements flattened."""

    counts: np.ndarray
    displacements: np.ndarray
    spine: np.ndarray | None = None  # local index of the spine child per parent

    @property
    def starts(self) -> np.ndarray:
        s = np.zeros(self.counts.size, dtype=np.int64)
        np.cumsum(self.counts[:-1], out=s[1:])
        return s

    def parents(self) -> np.ndarray:
        return np.repeat(np.arange(self.counts.size), self.counts)


@dataclass(frozen=True)
class DisplacementSet:
    displacements: np.ndarray
    spine_index: int | None = None

    def __post_init__(self):
        if self.spine_index is not None and not 0 <= self.spine_index < len(self.displacements):
            raise ValueError("spine_index must address an existing child")


@dataclass(frozen=True)
class PointProcessModel:
    """Offspring law with i.i.d. displacements, or custom samplers.

    ``sampler(rng, size) -> OffspringBatch`` and ``tilted_sampler`` override
    the generic construction when given.
    """

    name: str
    children: object
    displacement: object
    params: Mapping[str, str] = field(default_factory=dict)
    analytic: AnalyticMoments | None = None
    sampler: Callable | None = None
    tilted_sampler: Callable | None = None
    max_children: int = MAX_CHILDREN

    @property
    def model_hash(self) -> str:
        blob = json.dumps({"name": self.name, "params": {k: str(v) for k, v in self.params.items()}},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def mean_children(self) -> float:
        if self.analytic is not None:
            return self.analytic.mean_children
        return float(self.children.mean)

    def _check_cap(self, counts):
        if counts.size and counts.max() > self.max_children:
            raise OffspringCapError(f"{self.name}: sample with {counts.max()} children exceeds cap "
                                    f"{self.max_children}")

    def sample_batch(self, rng, size: int) -> OffspringBatch:
        if self.sampler is not None:
            out = self.sampler(rng, size)
            self._check_cap(out.counts)
            return out
        counts = self.children.sample(rng, size)
        self._check_cap(counts)
        disp = self.displacement.sample(rng, int(counts.sum()))
        return OffspringBatch(counts, disp)

    def sample_tilted_batch(self, rng, size: int) -> OffspringBatch:
        if self.tilted_sampler is not None:
            out = self.tilted_sampler(rng, size)
            self._check_cap(out.counts)
            return out
        if self.sampler is not None or not hasattr(self.displacement, "sample_tilted"):
            raise UnsupportedModel(f"{self.name}: no tilted sampler available")
        counts = self.children.sample_size_biased(rng, size)
        self._check_cap(counts)
        total = int(counts.sum())
        disp = self.displacement.sample(rng, total)
        starts = np.zeros(size, dtype=np.int64)
        np.cumsum(counts[:-1], out=starts[1:])
        j = (rng.random(size) * counts).astype(np.int64)
        disp[starts + j] = self.displacement.sample_tilted(rng, size)
        spine = choose_by_weight(disp, counts, starts, rng)
        return OffspringBatch(counts, disp, spine)


def choose_by_weight(disp, counts, starts, rng) -> np.ndarray:
    """Per family, a local index drawn with probability proportional to exp(-disp)."""
    size = counts.size
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    if np.all(counts == 2):
        v0, v1 = disp[0::2], disp[1::2]
        p1 = special.expit(v0 - v1)  # e^{-v1} / (e^{-v0} + e^{-v1})
        return (rng.random(size) < p1).astype(np.int64)
    fam = np.repeat(np.arange(size), counts)
    fmin = np.full(size, np.inf)
    np.minimum.at(fmin, fam, disp)
    w = np.exp(-(disp - fmin[fam]))
    c = np.cumsum(w)
    ends = starts + counts - 1
    base = np.where(starts > 0, c[np.maximum(starts - 1, 0)], 0.0)
    target = base + rng.random(size) * (c[ends] - base)
    idx = np.searchsorted(c, target, side="right")
    idx = np.clip(idx, starts, ends)
    return idx - starts


def sample_offspring(model: PointProcessModel, rng) -> DisplacementSet:
    b = model.sample_batch(rng, 1)
    return DisplacementSet(b.displacements.copy())


def sample_tilted_offspring(model: PointProcessModel, rng) -> DisplacementSet:
    b = model.sample_tilted_batch(rng, 1)
    return DisplacementSet(b.displacements.copy(), int(b.spine[0]))


# --------------------------------------------------------------------------
# presets


def binary_gaussian() -> PointProcessModel:
    """Two children with i.i.d. Normal(2 ln 2, 2 ln 2) displacements."""
    s2 = 2 * LN2
    return PointProcessModel(
        name="binary-gaussian",
        children=FixedCount(2),
        displacement=Gaussian(s2, math.sqrt(s2)),
        params={},
        analytic=AnalyticMoments(2.0, s2, True),
    )


def poisson_gaussian(extra: str = "1.5") -> PointProcessModel:
    """1 + Poisson(extra) children, i.i.d. Normal(s^2, s^2) with s^2 = 2 ln(1 + extra).

    With m = 1 + extra, E[m exp(-X)] = m exp(-s^2/2) = 1 and the tilted step
    Normal(0, s^2) is centred, so the boundary case holds exactly.
    """
    lam = float(extra)
    if lam <= 0:
        raise ValueError("extra must be positive")
    s2 = 2 * math.log1p(lam)
    return PointProcessModel(
        name="poisson-gaussian",
        children=ShiftedPoisson(lam),
        displacement=Gaussian(s2, math.sqrt(s2)),
        params={"extra": str(extra)},
        analytic=AnalyticMoments(1.0 + lam, s2, True),
    )


def one_child(value: str = "0") -> PointProcessModel:
    """Degenerate diagnostic model: a single child at a fixed displacement."""
    v = float(value)
    return PointProcessModel(
        name="one-child",
        children=FixedCount(1),
        displacement=Dirac(v),
        params={"value": str(value)},
        analytic=AnalyticMoments(1.0, v * v * math.exp(-v), v == 0.0),
    )


PRESETS = {
    "binary-gaussian": binary_gaussian,
    "poisson-gaussian": poisson_gaussian,
    "one-child": one_child,
}


def make_model(name: str, params: Mapping[str, str] | None = None) -> PointProcessModel:
    key = name.replace("_", "-")
    if key not in PRESETS:
        raise KeyError(f"unknown model {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[key](**dict(params or {}))


# --------------------------------------------------------------------------
# boundary-condition validation


@dataclass
class ModelReport:
    model: str
    model_hash: str
    budget: int
    estimates: dict
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        return {"model": self.model, "model_hash": self.model_hash, "budget": self.budget,
                "passed": self.passed, "verdicts": dict(self.verdicts),
                "estimates": {k: v.to_dict() for k, v in self.estimates.items()}}


def family_sums(values, counts) -> np.ndarray:
    fam = np.repeat(np.arange(counts.size), counts)
    return np.bincount(fam, weights=values, minlength=counts.size)


def boundary_samples(rng, size: int, model: PointProcessModel) -> dict:
    """Per-sample family sums entering the boundary and moment conditions."""
    b = model.sample_batch(rng, size)
    v = b.displacements
    e = np.exp(-v)
    X = family_sums(e, b.counts)
    Xt = family_sums(np.maximum(v, 0.0) * e, b.counts)
    lp = lambda t: np.log(np.maximum(t, 1.0))  # noqa: E731
    return {
        "count": b.counts.astype(float),
        "exp": X,
        "vexp": family_sums(v * e, b.counts),
        "v2exp": family_sums(v * v * e, b.counts),
        "X_log2": X * lp(X) ** 2,
        "Xt_log": Xt * lp(Xt),
    }


def check_boundary_conditions(model: PointProcessModel, budget: int, rng, k: float = 4.0) -> ModelReport:
    from functools import partial

    from .streams import draw

    if budget < 10 ** 4:
        raise ValueError("budget must be at least 1e4")
    s = draw(partial(boundary_samples, model=model), budget, rng, chunk=2 ** 18)
    est = {name: mean_estimate(x, "direct") for name, x in s.items()}
    est["sigma_sq"] = est.pop("v2exp")
    ver = {
        "supercritical": est["count"].zscore(1.0) > k,
        "normalized": est["exp"].within(1.0, k),
        "derivative_zero": est["vexp"].within(0.0, k),
        "variance_positive": est["sigma_sq"].value > 0 and math.isfinite(est["sigma_sq"].value),
        "log_moments_finite": bool(np.isfinite(est["X_log2"].value) and np.isfinite(est["Xt_log"].value)),
    }
    if model.analytic is not None and model.analytic.exact_boundary:
        ver["sigma_sq_matches_analytic"] = est["sigma_sq"].within(model.analytic.sigma_sq, k)
    return ModelReport(model.name, model.model_hash, budget, est, ver)
