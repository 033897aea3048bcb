"""Counter-based random streams and block scheduling.

A campaign is identified by a 64-bit master seed and a text label.  The
pair fixes a Philox key (first 16 bytes of ``sha256(f"{seed}:{label}")``
read as two little-endian u64 words).  Replication block ``b`` uses the
counter ``(0, 0, 0, b)``, so the stream of a block does not depend on
which worker runs it or on how many workers there are.  Block sizes are a
function of the work description only, and block results are merged in
block order.
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

WORKERS_ENV = "BRWLAB_WORKERS"
MASK64 = (1 << 64) - 1


class Cancelled(RuntimeError):
    """Raised when a campaign is interrupted; carries the finished blocks."""

    def __init__(self, partial, blocks_done, blocks_total):
        super().__init__(f"cancelled after {blocks_done}/{blocks_total} blocks")
        self.partial = partial
        self.blocks_done = blocks_done
        self.blocks_total = blocks_total


def philox_key(seed: int, label: str) -> np.ndarray:
    digest = hashlib.sha256(f"{int(seed) & MASK64}:{label}".encode()).digest()
    return np.frombuffer(digest[:16], dtype="<u8").astype(np.uint64)


def block_generator(seed: int, label: str, block: int) -> np.random.Generator:
    counter = np.array([0, 0, 0, block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=philox_key(seed, label), counter=counter))


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    return max(1, int(workers))


@dataclass(frozen=True)
class Campaign:
    """Seed record plus the worker count used to execute block maps."""

    seed: int
    label: str = "main"
    workers: int | None = None

    def child(self, suffix: str) -> "Campaign":
        return dataclasses.replace(self, label=f"{self.label}/{suffix}")

    def generator(self, block: int = 0) -> np.random.Generator:
        return block_generator(self.seed, self.label, block)

    def record(self, blocks: int | None = None) -> dict:
        out = {"seed": int(self.seed), "campaign": self.label}
        if blocks is not None:
            out["blocks"] = int(blocks)
        return out


def block_sizes(total: int, chunk: int) -> list[int]:
    chunk = max(1, int(chunk))
    full, rest = divmod(int(total), chunk)
    return [chunk] * full + ([rest] if rest else [])


def _run_block(fn, seed, label, block, size):
    return fn(block_generator(seed, label, block), size)


def concat(parts: Sequence[Any]):
    """Concatenate block results (arrays, tuples, dicts or array dataclasses)."""
    first = parts[0]
    if isinstance(first, np.ndarray):
        return np.concatenate(parts)
    if isinstance(first, dict):
        return {k: concat([p[k] for p in parts]) for k in first}
    if isinstance(first, tuple):
        return tuple(concat([p[i] for p in parts]) for i in range(len(first)))
    if dataclasses.is_dataclass(first):
        if hasattr(first, "concat"):
            return type(first).concat(parts)
        vals = {f.name: concat([getattr(p, f.name) for p in parts]) for f in dataclasses.fields(first)}
        return type(first)(**vals)
    raise TypeError(f"cannot merge block results of type {type(first).__name__}")


def draw(fn: Callable[[np.random.Generator, int], Any], total: int, rng, chunk: int):
    """Evaluate ``fn(rng, size)`` over ``total`` replications in chunks.

    ``rng`` is either a numpy Generator (chunks drawn sequentially from it)
    or a :class:`Campaign` (one counter-addressed stream per chunk, possibly
    spread over worker processes).  Results are merged in chunk order.
    """
    sizes = block_sizes(total, chunk)
    if not sizes:
        sizes = [0]
    if isinstance(rng, Campaign):
        return concat(map_blocks(fn, sizes, rng))
    gen = as_generator(rng)
    return concat([fn(gen, s) for s in sizes])


def map_blocks(fn, sizes: Sequence[int], campaign: Campaign) -> list:
    workers = resolve_workers(campaign.workers)
    results: list = []
    try:
        if workers == 1 or len(sizes) == 1:
            for b, s in enumerate(sizes):
                results.append(_run_block(fn, campaign.seed, campaign.label, b, s))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_run_block, fn, campaign.seed, campaign.label, b, s)
                        for b, s in enumerate(sizes)]
                for f in futs:
                    results.append(f.result())
    except KeyboardInterrupt:
        raise Cancelled(results, len(results), len(sizes)) from None
    return results


def as_generator(rng) -> np.random.Generator:
    """A single sequential stream for serial algorithms."""
    if isinstance(rng, Campaign):
        return rng.generator(0)
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
