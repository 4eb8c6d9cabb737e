"""Exact sampling of the Poisson loop soup and its local-time field.

A batch of ``R`` independent realizations is stored in flat arrays: every
nontrivial loop owns a contiguous run of ``(state, hold)`` pieces, and loops
are sorted by the realization they belong to.  Trivial loops are never
materialized; only their aggregate local time per state is kept.

Stream splitting
----------------
Random streams are derived from ``(seed, name, shard)`` by
:func:`spawn_rng`: a ``numpy.random.SeedSequence`` with entropy ``seed``
and spawn key ``(crc32(name), shard)`` feeding a PCG64 generator.  Shards
have a fixed size chosen by the caller, so results do not depend on how
shards are distributed over workers.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .chain import ValidatedChain, as_validated
from .errors import EmptySubset
from .loops import (
    DiscreteLoopTable,
    RootedLoop,
    _merge,
    local_times,
    loop_from_json,
    loop_to_json,
    sample_skeletons,
)

__all__ = [
    "spawn_rng",
    "SoupRealization",
    "SoupLocalTimes",
    "SoupBatch",
    "sample_soup_batch",
    "sample_soup",
    "soup_local_times",
    "restrict_soup",
    "realizations_to_jsonl",
    "realizations_from_jsonl",
    "local_times_to_csv",
]


def spawn_rng(seed: int, name: str = "", shard: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, name, shard)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()), int(shard)))
    return np.random.Generator(np.random.PCG64(ss))


# -- single realizations --------------------------------------------------


@dataclass(frozen=True)
class SoupLocalTimes:
    lt: np.ndarray


@dataclass(eq=False)
class SoupRealization:
    """One realization of the soup: its nontrivial loops and the trivial local times."""

    loops: list
    trivial_lt: np.ndarray
    alpha: float
    chain: ValidatedChain = field(repr=False)

    def __post_init__(self):
        self.trivial_lt = np.asarray(self.trivial_lt, dtype=float)
        if self.trivial_lt.shape != (self.chain.n,) or np.any(self.trivial_lt < 0):
            raise ValueError("trivial_lt must be a nonnegative vector with one entry per state")
        for loop in self.loops:
            if len(loop) < 2:
                raise ValueError("stored loops must be nontrivial")
            if any(not 0 <= s < self.chain.n for s in loop.skeleton):
                raise ValueError("loop visits an unknown state")

    def local_times(self) -> np.ndarray:
        lt = self.trivial_lt.copy()
        for loop in self.loops:
            lt += local_times(loop, self.chain.m)
        return lt

    def to_json(self) -> dict:
        states = self.chain.states
        return {
            "alpha": float(self.alpha),
            "trivial_lt": {str(states[i]): float(v) for i, v in enumerate(self.trivial_lt)},
            "loops": [loop_to_json(loop, states) for loop in self.loops],
        }

    @classmethod
    def from_json(cls, doc: dict, chain: ValidatedChain) -> "SoupRealization":
        chain = as_validated(chain)
        labels = {str(s): i for i, s in enumerate(chain.states)}
        triv = np.zeros(chain.n)
        for key, val in doc["trivial_lt"].items():
            triv[labels[key]] = float(val)
        loops = [loop_from_json(d, chain.states) for d in doc["loops"]]
        return cls(loops=loops, trivial_lt=triv, alpha=float(doc["alpha"]), chain=chain)


def soup_local_times(r: SoupRealization) -> SoupLocalTimes:
    return SoupLocalTimes(r.local_times())


def restrict_soup(r: SoupRealization, B) -> SoupRealization:
    """Keep the loops lying entirely in ``B`` and the trivial local times on ``B``.

    The result keeps the parent's state indexing, with zeros off ``B``.
    """
    keep = _subset_mask(r.chain, B)
    loops = [loop for loop in r.loops if all(keep[s] for s in loop.skeleton)]
    return SoupRealization(loops=loops, trivial_lt=np.where(keep, r.trivial_lt, 0.0), alpha=r.alpha, chain=r.chain)


def _subset_mask(chain: ValidatedChain, B) -> np.ndarray:
    idx = chain.indices(B)
    if not idx:
        raise EmptySubset("B must be nonempty")
    mask = np.zeros(chain.n, dtype=bool)
    mask[idx] = True
    return mask


# -- batches --------------------------------------------------------------


@dataclass(eq=False)
class SoupBatch:
    """``R`` independent realizations in flat-array form.

    Attributes
    ----------
    trivial_lt : ndarray, shape (R, n)
        Aggregate trivial-loop local times.
    owner : ndarray, shape (K,)
        Realization index of each nontrivial loop, nondecreasing.
    offsets : ndarray, shape (K + 1,)
        Loop ``j`` occupies pieces ``offsets[j]:offsets[j + 1]``.
    states, holds : ndarray
        Rooted pieces of all loops, concatenated.
    """

    chain: ValidatedChain = field(repr=False)
    alpha: float
    trivial_lt: np.ndarray
    owner: np.ndarray
    offsets: np.ndarray
    states: np.ndarray
    holds: np.ndarray

    @property
    def size(self) -> int:
        return self.trivial_lt.shape[0]

    @property
    def n_loops(self) -> int:
        return self.owner.size

    @property
    def piece_owner(self) -> np.ndarray:
        """Loop index of every piece."""
        return np.repeat(np.arange(self.n_loops), np.diff(self.offsets))

    def loop_local_times(self) -> np.ndarray:
        """Local-time vector of every nontrivial loop, shape ``(K, n)``."""
        n = self.chain.n
        flat = np.bincount(self.piece_owner * n + self.states, weights=self.holds, minlength=self.n_loops * n)
        return flat.reshape(self.n_loops, n) / self.chain.m[None, :]

    def lifetimes(self) -> np.ndarray:
        if not self.n_loops:
            return np.zeros(0)
        return np.add.reduceat(self.holds, self.offsets[:-1])

    def per_realization(self, values: np.ndarray) -> np.ndarray:
        """Sum a per-loop quantity (leading axis ``K``) within each realization."""
        values = np.asarray(values, dtype=float)
        flat = values.reshape(values.shape[0], int(np.prod(values.shape[1:], dtype=int)))
        cols = [np.bincount(self.owner, weights=flat[:, c], minlength=self.size) for c in range(flat.shape[1])]
        return np.stack(cols, axis=1).reshape((self.size,) + values.shape[1:])

    def local_times(self) -> np.ndarray:
        """Soup local times ``L-hat``, shape ``(R, n)``."""
        return self.trivial_lt + self.per_realization(self.loop_local_times())

    def loop_counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.size)

    def state_at(self, t, wrap: bool = False) -> np.ndarray:
        """State of every loop at time ``t`` (scalar or per-loop array).

        Returns ``-1`` for ``t >= zeta`` unless ``wrap`` is set, in which case
        time is read modulo the lifetime.
        """
        K = self.n_loops
        t = np.broadcast_to(np.asarray(t, dtype=float), (K,))
        if not K:
            return np.zeros(0, dtype=np.intp)
        zeta = self.lifetimes()
        if wrap:
            t = np.mod(t, zeta)
        cum = np.cumsum(self.holds)
        start = self.offsets[:-1]
        base = np.where(start > 0, cum[np.maximum(start - 1, 0)], 0.0)
        idx = np.searchsorted(cum, base + t, side="right")
        idx = np.clip(idx, start, self.offsets[1:] - 1)
        out = self.states[idx].astype(np.intp)
        if not wrap:
            out = np.where(t < zeta, out, -1)
        return out

    def restrict(self, B) -> "SoupBatch":
        keep = _subset_mask(self.chain, B)
        if self.n_loops:
            inside = np.logical_and.reduceat(keep[self.states], self.offsets[:-1])
        else:
            inside = np.zeros(0, dtype=bool)
        return self._select(inside, np.where(keep[None, :], self.trivial_lt, 0.0))

    def _select(self, loop_mask: np.ndarray, trivial_lt: np.ndarray) -> "SoupBatch":
        lengths = np.diff(self.offsets)[loop_mask]
        piece_mask = np.repeat(loop_mask, np.diff(self.offsets))
        return SoupBatch(
            chain=self.chain,
            alpha=self.alpha,
            trivial_lt=trivial_lt,
            owner=self.owner[loop_mask],
            offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.intp),
            states=self.states[piece_mask],
            holds=self.holds[piece_mask],
        )

    def superpose(self, other: "SoupBatch") -> "SoupBatch":
        """Union of two independent batches realization by realization (``alpha`` adds)."""
        if other.size != self.size or other.chain is not self.chain and other.chain.spec != self.chain.spec:
            raise ValueError("batches must share the chain and the number of realizations")
        return _assemble(
            self.chain,
            self.alpha + other.alpha,
            self.trivial_lt + other.trivial_lt,
            [
                (self.owner, np.diff(self.offsets), self.states, self.holds),
                (other.owner, np.diff(other.offsets), other.states, other.holds),
            ],
        )

    def realization(self, i: int) -> SoupRealization:
        j0, j1 = np.searchsorted(self.owner, [i, i + 1])
        loops = []
        for j in range(j0, j1):
            a, b = self.offsets[j], self.offsets[j + 1]
            skel, holds = _merge(zip(self.states[a:b].tolist(), self.holds[a:b].tolist()))
            loops.append(RootedLoop(skel, holds))
        return SoupRealization(loops=loops, trivial_lt=self.trivial_lt[i].copy(), alpha=self.alpha, chain=self.chain)

    def realizations(self) -> Iterator[SoupRealization]:
        for i in range(self.size):
            yield self.realization(i)


def _assemble(chain, alpha, trivial_lt, groups) -> SoupBatch:
    """Build a batch from ``(owner, lengths, states, holds)`` groups, loops sorted by owner."""
    owner = np.concatenate([g[0] for g in groups]).astype(np.intp)
    lengths = np.concatenate([g[1] for g in groups]).astype(np.intp)
    states = np.concatenate([g[2] for g in groups]).astype(np.intp)
    holds = np.concatenate([g[3] for g in groups]).astype(float)
    order = np.argsort(owner, kind="stable")
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.intp)
    new_len = lengths[order]
    piece_idx = (
        np.repeat(starts[order], new_len) + _ramp(new_len)
        if new_len.size
        else np.zeros(0, dtype=np.intp)
    )
    return SoupBatch(
        chain=chain,
        alpha=float(alpha),
        trivial_lt=trivial_lt,
        owner=owner[order],
        offsets=np.concatenate([[0], np.cumsum(new_len)]).astype(np.intp),
        states=states[piece_idx],
        holds=holds[piece_idx],
    )


def _ramp(lengths: np.ndarray) -> np.ndarray:
    """``concat(arange(l) for l in lengths)``."""
    total = int(lengths.sum())
    ends = np.cumsum(lengths)
    return np.arange(total) - np.repeat(ends - lengths, lengths)


def _reroot(skel: np.ndarray, holds: np.ndarray, phase: np.ndarray):
    """Rotate each loop (rows of ``skel``/``holds``) to start at time ``phase * zeta``.

    Each loop of ``n`` pieces becomes ``n + 1`` pieces: the interval that
    contains the new root is split between the first and the last piece.
    """
    count, n = skel.shape
    cum = np.cumsum(holds, axis=1)
    w = phase * cum[:, -1]
    i = np.minimum((cum <= w[:, None]).sum(axis=1), n - 1)
    rows = np.arange(count)
    before = cum[rows, i] - holds[rows, i]
    src = (i[:, None] + np.arange(n + 1)[None, :]) % n
    new_skel = skel[rows[:, None], src]
    new_holds = holds[rows[:, None], src]
    new_holds[:, 0] = cum[rows, i] - w
    new_holds[:, n] = w - before
    return new_skel, new_holds


def sample_soup_batch(
    chain: ValidatedChain, alpha: float, table: DiscreteLoopTable, rng: np.random.Generator, size: int
) -> SoupBatch:
    """Draw ``size`` independent realizations of the soup with intensity ``alpha * mu``.

    Per realization: trivial local time at ``x`` is ``Gamma(alpha, rate
    lambda_x m_x)``; for each length ``n`` the number of rooted skeletons is
    ``Poisson(alpha * nu_n)``; holding times are exponential with rate
    ``lambda`` of the visited state; each loop is re-rooted at a uniform time
    in ``[0, zeta)``.  Loops longer than ``table.N_max`` are omitted, a
    mass of at most ``alpha * table.tail_bound``.
    """
    chain = as_validated(chain)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if alpha > table.alpha * (1 + 1e-12):
        raise ValueError(f"table certified for alpha <= {table.alpha}, got {alpha}")
    if table.P.shape != (chain.n, chain.n) or not np.allclose(table.P, chain.P, rtol=0, atol=1e-14):
        raise ValueError("loop table was built for a different chain")
    if size < 0:
        raise ValueError("size must be nonnegative")
    n_dim = chain.n
    trivial = rng.gamma(alpha, 1.0, size=(size, n_dim)) / (chain.lam * chain.m)[None, :]
    groups = []
    for n in range(2, table.N_max + 1):
        rate = alpha * table.nu[n]
        if rate <= 0:
            continue
        counts = rng.poisson(rate, size=size)
        total = int(counts.sum())
        if not total:
            continue
        skel = sample_skeletons(table, n, total, rng)
        holds = rng.exponential(1.0, size=skel.shape) / chain.lam[skel]
        phase = rng.random(total)
        skel, holds = _reroot(skel, holds, phase)
        owner = np.repeat(np.arange(size), counts)
        groups.append((owner, np.full(total, n + 1), skel.ravel(), holds.ravel()))
    if not groups:
        empty = np.zeros(0, dtype=np.intp)
        groups.append((empty, empty, empty, np.zeros(0)))
    return _assemble(chain, alpha, trivial, groups)


def sample_soup(
    chain: ValidatedChain, alpha: float, table: DiscreteLoopTable, rng: np.random.Generator
) -> SoupRealization:
    """One realization; see :func:`sample_soup_batch`."""
    return sample_soup_batch(chain, alpha, table, rng, 1).realization(0)


# -- serialization --------------------------------------------------------


def realizations_to_jsonl(realizations: Iterable[SoupRealization]) -> str:
    return "".join(json.dumps(r.to_json()) + "\n" for r in realizations)


def realizations_from_jsonl(text: str, chain: ValidatedChain) -> list:
    return [SoupRealization.from_json(json.loads(line), chain) for line in text.splitlines() if line.strip()]


def local_times_to_csv(lt: np.ndarray, states: Sequence) -> str:
    lines = [",".join(str(s) for s in states)]
    lines += [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(lt)]
    return "\n".join(lines) + "\n"
