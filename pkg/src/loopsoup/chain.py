"""Finite transient continuous-time Markov chains and their kernels.

A chain is given by jump rates ``q[x][y]``, killing rates ``k[x]`` and base
measure weights ``m[x]``.  Its generator is ``L = q - diag(lambda)`` with
``lambda[x] = sum_y q[x][y] + k[x]``, and the Green kernel is the density of
the potential operator with respect to ``m``::

    u[x][y] = [(-L)^{-1}][x][y] / m[y]

Everything here is a pure function of immutable inputs, except the samplers,
which advance the ``numpy.random.Generator`` they are handed.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import (
    BadDensity,
    BadRates,
    BadSupport,
    ChainError,
    EmptySubset,
    NotABijection,
    NotIrreducible,
    SingularGenerator,
)
from .loops import Path, local_times  # noqa: F401  (re-exported)

__all__ = [
    "ChainSpec",
    "ValidatedChain",
    "GreenKernel",
    "KilledChain",
    "QBatch",
    "validate_chain",
    "green_matrix",
    "resolvent_matrix",
    "transition_density",
    "killed_chain",
    "hitting_h",
    "sample_path",
    "sample_Q",
    "sample_local_times",
    "sample_Q_batch",
    "local_times",
    "time_changed_chain",
    "trace_chain",
    "trace_chain_from_green",
    "relabel_chain",
]

PIVOT_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Raw chain description; row/column order follows ``states``."""

    states: tuple
    q: np.ndarray
    k: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "q", np.array(self.q, dtype=float))
        object.__setattr__(self, "k", np.array(self.k, dtype=float))
        object.__setattr__(self, "m", np.array(self.m, dtype=float))

    @property
    def n(self) -> int:
        return len(self.states)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ChainSpec":
        return cls(states=doc["states"], q=doc["q"], k=doc["k"], m=doc["m"])

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "q": self.q.tolist(),
            "k": self.k.tolist(),
            "m": self.m.tolist(),
        }


def _resolve(states: Sequence, x) -> int:
    """Index of state ``x``; labels take precedence over integer positions."""
    try:
        return states.index(x)
    except ValueError:
        pass
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool) and 0 <= x < len(states):
        return int(x)
    raise KeyError(f"unknown state {x!r}")


@dataclass(frozen=True, eq=False)
class ValidatedChain:
    """A :class:`ChainSpec` that passed :func:`validate_chain`, with caches.

    ``P`` is the jump-chain matrix ``q[x][y] / lambda[x]``; its rows sum to
    ``1 - k[x]/lambda[x]``.  ``G`` is ``(-L)^{-1}``.
    """

    spec: ChainSpec
    lam: np.ndarray
    P: np.ndarray
    neg_L: np.ndarray
    G: np.ndarray
    lu: tuple = field(repr=False)
    jump_cdf: np.ndarray = field(repr=False)

    @property
    def states(self) -> tuple:
        return self.spec.states

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def q(self) -> np.ndarray:
        return self.spec.q

    @property
    def k(self) -> np.ndarray:
        return self.spec.k

    @property
    def m(self) -> np.ndarray:
        return self.spec.m

    @property
    def L(self) -> np.ndarray:
        return -self.neg_L

    def index(self, x) -> int:
        return _resolve(self.states, x)

    def indices(self, xs: Iterable) -> list[int]:
        return [self.index(x) for x in xs]


def _check_rates(spec: ChainSpec) -> None:
    n = spec.n
    if n < 1:
        raise BadRates("chain needs at least one state")
    if len(set(spec.states)) != n:
        raise BadRates("state labels must be distinct")
    q, k, m = spec.q, spec.k, spec.m
    if q.shape != (n, n):
        raise BadRates(f"q has shape {q.shape}, expected {(n, n)}")
    if k.shape != (n,):
        raise BadRates(f"k has shape {k.shape}, expected {(n,)}")
    if m.shape != (n,):
        raise BadRates(f"m has shape {m.shape}, expected {(n,)}")
    for name, arr in (("q", q), ("k", k), ("m", m)):
        if not np.all(np.isfinite(arr)):
            raise BadRates(f"{name} has non-finite entries")
    for i in range(n):
        if q[i, i] != 0:
            raise BadRates(f"q[{i}][{i}] = {float(q[i, i]):g}: diagonal must be zero", entry=f"q[{i}][{i}]")
    bad = np.argwhere(q < 0)
    if bad.size:
        i, j = bad[0]
        raise BadRates(f"q[{i}][{j}] = {float(q[i, j]):g} is negative", entry=f"q[{i}][{j}]")
    bad = np.flatnonzero(k < 0)
    if bad.size:
        raise BadRates(f"k[{bad[0]}] = {float(k[bad[0]]):g} is negative", entry=f"k[{bad[0]}]")
    bad = np.flatnonzero(m <= 0)
    if bad.size:
        raise BadRates(f"m[{bad[0]}] = {float(m[bad[0]]):g} must be positive", entry=f"m[{bad[0]}]")
    lam = q.sum(axis=1) + k
    bad = np.flatnonzero(lam <= 0)
    if bad.size:
        raise BadRates(f"state {spec.states[bad[0]]!r} has total rate zero")


def _reaches_killing(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Boolean mask of states from which some killing state is reachable."""
    ok = k > 0
    adj = q > 0
    while True:
        new = ok | (adj & ok[None, :]).any(axis=1)
        if np.array_equal(new, ok):
            return ok
        ok = new


def validate_chain(spec: ChainSpec, irreducible: bool = True) -> ValidatedChain:
    """Check the standing assumptions and cache the generator factorization.

    ``irreducible=False`` skips the strong-connectivity requirement; killed
    sub-chains need this, since removing states can disconnect the graph.

    Raises
    ------
    BadRates
        Negative or non-finite entries, nonzero diagonal, ``m <= 0`` or a
        state with total rate zero.
    SingularGenerator
        Some state cannot reach killing, or ``-L`` is numerically singular.
    NotIrreducible
        The jump graph is not strongly connected, so some ``u(x, y) = 0``.
    """
    _check_rates(spec)
    q, k = spec.q, spec.k
    n = spec.n
    lam = q.sum(axis=1) + k
    stuck = np.flatnonzero(~_reaches_killing(q, k))
    if stuck.size:
        raise SingularGenerator(
            f"state {spec.states[stuck[0]]!r} never reaches killing; chain is recurrent"
        )
    neg_L = np.diag(lam) - q
    lu = scipy.linalg.lu_factor(neg_L, check_finite=False)
    pivots = np.abs(np.diag(lu[0]))
    if pivots.min() <= PIVOT_RTOL * np.abs(neg_L).max():
        raise SingularGenerator("generator factorization has a vanishing pivot")
    G = scipy.linalg.lu_solve(lu, np.eye(n), check_finite=False)
    if not np.all(np.isfinite(G)) or G.min() < -PIVOT_RTOL * np.abs(G).max():
        raise SingularGenerator("inverse of -L is not entrywise nonnegative")
    if irreducible and n > 1:
        ncomp, _ = connected_components(q > 0, directed=True, connection="strong")
        if ncomp != 1:
            raise NotIrreducible("jump graph is not strongly connected")
    if irreducible and G.min() <= 0:
        raise NotIrreducible("Green kernel has a vanishing entry")
    P = q / lam[:, None]
    cdf = np.cumsum(np.hstack([q, k[:, None]]), axis=1) / lam[:, None]
    cdf[:, -1] = 1.0
    return ValidatedChain(spec=spec, lam=lam, P=P, neg_L=neg_L, G=G, lu=lu, jump_cdf=cdf)


def as_validated(chain) -> ValidatedChain:
    if isinstance(chain, ValidatedChain):
        return chain
    return validate_chain(chain)


@dataclass(frozen=True, eq=False)
class GreenKernel:
    """Potential density ``u`` with respect to ``m``; ``beta`` set for resolvents."""

    u: np.ndarray
    states: tuple
    m: np.ndarray
    beta: Optional[float] = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.u, dtype=dtype)

    def __getitem__(self, item):
        return self.u[item]

    @property
    def shape(self):
        return self.u.shape

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + [str(s) for s in self.states])
        for s, row in zip(self.states, self.u):
            w.writerow([str(s)] + [repr(float(v)) for v in row])
        return buf.getvalue()


def green_matrix(chain: ValidatedChain) -> GreenKernel:
    chain = as_validated(chain)
    return GreenKernel(u=chain.G / chain.m[None, :], states=chain.states, m=chain.m)


def resolvent_matrix(chain: ValidatedChain, beta: float) -> GreenKernel:
    """``u_beta[x][y] = [(beta I - L)^{-1}][x][y] / m[y]`` for ``beta > 0``."""
    chain = as_validated(chain)
    if not beta > 0:
        raise ValueError("beta must be positive")
    A = chain.neg_L + beta * np.eye(chain.n)
    R = scipy.linalg.solve(A, np.eye(chain.n))
    return GreenKernel(u=R / chain.m[None, :], states=chain.states, m=chain.m, beta=float(beta))


def transition_density(chain: ValidatedChain, t: float) -> np.ndarray:
    """``p_t[x][y] = exp(tL)[x][y] / m[y]``."""
    chain = as_validated(chain)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return scipy.linalg.expm(t * chain.L) / chain.m[None, :]


def hitting_h(chain: ValidatedChain, y) -> np.ndarray:
    """``h[x] = u(x, y) / u(y, y)``, the probability of ever hitting ``y``."""
    chain = as_validated(chain)
    j = chain.index(y)
    col = chain.G[:, j]
    h = col / col[j]
    h[j] = 1.0
    return h


@dataclass(frozen=True, eq=False)
class KilledChain:
    """The chain killed on leaving ``B``.

    ``u_tilde`` is the Green kernel of the restricted generator;
    ``u_tilde_hitting`` is the same kernel from the parent kernel and the
    exit distribution ``H[x][z] = P^x(X at exit = z)``.
    """

    B: tuple
    parent: ValidatedChain
    chain: ValidatedChain
    u_tilde: GreenKernel
    u_tilde_hitting: np.ndarray
    H: np.ndarray

    @property
    def spec(self) -> ChainSpec:
        return self.chain.spec

    @property
    def route_gap(self) -> float:
        return float(np.abs(self.u_tilde.u - self.u_tilde_hitting).max())


def _subset(chain: ValidatedChain, B) -> list[int]:
    idx = sorted(set(chain.indices(B)))
    if not idx:
        raise EmptySubset("subset B is empty")
    return idx


def killed_chain(chain: ValidatedChain, B, irreducible: bool = True) -> KilledChain:
    """The chain killed on leaving ``B``, with its kernel computed two ways.

    Exit rates to the complement become killing.  By default the killed
    chain must be irreducible on ``B`` (:class:`NotIrreducible` otherwise);
    ``irreducible=False`` accepts kernels with vanishing entries, which is
    what the restriction property needs for one-way graphs.
    """
    chain = as_validated(chain)
    b = _subset(chain, B)
    bc = [i for i in range(chain.n) if i not in b]
    q, k = chain.q, chain.k
    spec = ChainSpec(
        states=[chain.states[i] for i in b],
        q=q[np.ix_(b, b)],
        k=k[b] + q[np.ix_(b, bc)].sum(axis=1),
        m=chain.m[b],
    )
    sub = validate_chain(spec, irreducible=irreducible)
    u = green_matrix(chain).u
    if bc:
        H = scipy.linalg.lu_solve(sub.lu, q[np.ix_(b, bc)])
        u_hit = u[np.ix_(b, b)] - H @ u[np.ix_(bc, b)]
    else:
        H = np.zeros((len(b), 0))
        u_hit = u[np.ix_(b, b)].copy()
    return KilledChain(
        B=tuple(b), parent=chain, chain=sub, u_tilde=green_matrix(sub), u_tilde_hitting=u_hit, H=H
    )


# -- samplers -------------------------------------------------------------


def _next_state(chain: ValidatedChain, s, u):
    """Jump-chain successor for uniforms ``u``; ``n`` encodes death."""
    return (chain.jump_cdf[s] <= np.asarray(u)[..., None]).sum(axis=-1)


def sample_path(chain: ValidatedChain, x0, rng: np.random.Generator) -> Path:
    """One path from ``x0`` run until it is killed."""
    chain = as_validated(chain)
    s = chain.index(x0)
    skel, holds = [], []
    while True:
        skel.append(s)
        holds.append(float(rng.exponential(1.0 / chain.lam[s])))
        nxt = int(_next_state(chain, s, rng.random()))
        if nxt >= chain.n:
            return Path(tuple(skel), tuple(holds))
        s = nxt


def sample_Q(chain: ValidatedChain, x, y, rng: np.random.Generator) -> Optional[Path]:
    """Path from ``x`` cut at its last exit from ``y``; ``None`` if ``y`` is never hit.

    Accepted paths have law ``Q^{x,y} / u(x, y)``; acceptance has
    probability ``u(x, y) / u(y, y)``.
    """
    chain = as_validated(chain)
    j = chain.index(y)
    path = sample_path(chain, x, rng)
    visits = [i for i, s in enumerate(path.skeleton) if s == j]
    if not visits:
        return None
    last = visits[-1] + 1
    return Path(path.skeleton[:last], path.holds[:last])


def _simulate(chain, x0, size, rng, horizon=np.inf, watch=None):
    n = chain.n
    occ = np.zeros((size, n))
    elapsed = np.zeros(size)
    state = np.full(size, x0, dtype=np.intp)
    alive = np.arange(size)
    finite = np.isfinite(horizon)
    if watch is not None:
        snap = np.zeros((size, n))
        snap_t = np.zeros(size)
        seen = np.zeros(size, dtype=bool)
    while alive.size:
        s = state[alive]
        hold = rng.exponential(1.0, alive.size) / chain.lam[s]
        if finite:
            hold = np.minimum(hold, horizon - elapsed[alive])
        occ[alive, s] += hold
        elapsed[alive] += hold
        if watch is not None:
            at = alive[s == watch]
            snap[at] = occ[at]
            snap_t[at] = elapsed[at]
            seen[at] = True
        nxt = _next_state(chain, s, rng.random(alive.size))
        go = nxt < n
        if finite:
            go &= elapsed[alive] < horizon
        state[alive[go]] = nxt[go]
        alive = alive[go]
    if watch is not None:
        return occ, elapsed, snap, snap_t, seen
    return occ, elapsed


def sample_local_times(
    chain: ValidatedChain, x0, size: int, rng: np.random.Generator, t: float = np.inf
):
    """Vectorized ``size`` paths from ``x0``; returns ``(L_t, min(zeta, t))``.

    ``L_t`` has shape ``(size, n)`` and holds occupation / ``m``.
    """
    chain = as_validated(chain)
    occ, elapsed = _simulate(chain, chain.index(x0), size, rng, horizon=t)
    return occ / chain.m[None, :], elapsed


@dataclass(frozen=True, eq=False)
class QBatch:
    """Vectorized draws of :func:`sample_Q`; rejected rows are all zero."""

    lt: np.ndarray
    zeta: np.ndarray
    accepted: np.ndarray


def sample_Q_batch(chain: ValidatedChain, x, y, size: int, rng: np.random.Generator) -> QBatch:
    chain = as_validated(chain)
    j = chain.index(y)
    _, _, snap, snap_t, seen = _simulate(chain, chain.index(x), size, rng, watch=j)
    return QBatch(lt=snap / chain.m[None, :], zeta=snap_t, accepted=seen)


# -- transformations ------------------------------------------------------


def time_changed_chain(chain: ValidatedChain, h) -> ValidatedChain:
    """Time change by ``A_t = int_0^t h(X_s) ds``; the base measure becomes ``h m``."""
    chain = as_validated(chain)
    h = np.asarray(h, dtype=float)
    if h.shape != (chain.n,) or not np.all(np.isfinite(h)) or np.any(h <= 0):
        raise BadDensity("time-change density must be finite and strictly positive")
    spec = ChainSpec(chain.states, chain.q / h[:, None], chain.k / h, h * chain.m)
    return validate_chain(spec)


def _weights(chain: ValidatedChain, nu) -> np.ndarray:
    if isinstance(nu, Mapping):
        w = np.zeros(chain.n)
        for key, val in nu.items():
            w[chain.index(key)] = float(val)
    else:
        w = np.asarray(nu, dtype=float)
    if w.shape != (chain.n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise BadSupport("nu_A must be a finite nonnegative weight per state")
    if not np.any(w > 0):
        raise BadSupport("nu_A has empty support")
    return w


def _spec_from_generator(states, L: np.ndarray, m: np.ndarray) -> ChainSpec:
    scale = np.abs(L).max()
    q = L.copy()
    np.fill_diagonal(q, 0.0)
    k = -L.sum(axis=1)
    tol = 1e-12 * scale
    if q.min() < -tol or k.min() < -tol:
        raise ChainError("recovered generator has negative rates")
    return ChainSpec(states, np.clip(q, 0, None), np.clip(k, 0, None), m)


def trace_chain(chain: ValidatedChain, nu) -> ValidatedChain:
    """Time change by the inverse of ``A_t = sum_x L^x_t nu(x)``.

    Built from the Schur complement of the generator on the support of
    ``nu`` followed by a clock change; the result has base measure ``nu``
    restricted to its support.
    """
    chain = as_validated(chain)
    w = _weights(chain, nu)
    a = np.flatnonzero(w > 0)
    ac = np.flatnonzero(w == 0)
    L = chain.L
    Ltr = L[np.ix_(a, a)]
    if ac.size:
        Ltr = Ltr + L[np.ix_(a, ac)] @ scipy.linalg.solve(-L[np.ix_(ac, ac)], L[np.ix_(ac, a)])
    LY = (chain.m[a] / w[a])[:, None] * Ltr
    return validate_chain(_spec_from_generator([chain.states[i] for i in a], LY, w[a]))


def trace_chain_from_green(chain: ValidatedChain, nu) -> ValidatedChain:
    """Same chain as :func:`trace_chain`, recovered by inverting ``u nu`` on the support."""
    chain = as_validated(chain)
    w = _weights(chain, nu)
    a = np.flatnonzero(w > 0)
    u = green_matrix(chain).u[np.ix_(a, a)]
    LY = -scipy.linalg.inv(u * w[a][None, :])
    return validate_chain(_spec_from_generator([chain.states[i] for i in a], LY, w[a]))


def relabel_chain(chain: ValidatedChain, mapping: Mapping[Hashable, Hashable]) -> ValidatedChain:
    """Push the chain through a bijection of state labels.

    The image chain lists its states sorted by label, so its arrays are a
    genuine permutation of the original ones.
    """
    chain = as_validated(chain)
    if set(mapping) != set(chain.states) or len(set(mapping.values())) != len(mapping):
        raise NotABijection("map must be a bijection on the state labels")
    new_states = sorted(mapping.values(), key=str)
    perm = [chain.index(next(o for o, v in mapping.items() if v == s)) for s in new_states]
    spec = ChainSpec(
        new_states,
        chain.q[np.ix_(perm, perm)],
        chain.k[perm],
        chain.m[perm],
    )
    return validate_chain(spec)
