"""Paths, rooted loops and the discrete-skeleton calculus of the loop measure.

The loop measure of a finite chain splits into two parts that are sampled
separately:

* trivial loops (no jump) at ``x`` with lifetime density
  ``t^{-1} exp(-lambda_x t) dt``;
* nontrivial loops, whose rooted jump skeleton ``(x_1, ..., x_n)`` has
  weight ``prod_i P[x_i][x_{i+1 mod n}] / n`` and whose holding times are
  independent ``Exponential(lambda_{x_i})``.  Given its rotation class, the
  root of a loop is uniform in time over ``[0, zeta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import integrate, special

from .errors import NoDecay, QuadratureFailure, ZeroIntensity

if TYPE_CHECKING:
    from .chain import ValidatedChain

__all__ = [
    "Path",
    "RootedLoop",
    "truncate",
    "rotate",
    "local_times",
    "DiscreteLoopTable",
    "build_loop_table",
    "sample_skeleton",
    "sample_skeletons",
    "campbell_estimate",
    "trivial_loop_integral",
    "BridgeQuadrature",
    "bridge_marginal",
    "trivial_bridge_term",
    "loop_to_json",
    "loop_from_json",
]


@dataclass(frozen=True)
class Path:
    """Piecewise-constant trajectory: state ``skeleton[i]`` for ``holds[i]`` time units.

    The state at time ``t`` is ``skeleton[i]`` on the i-th right-open
    holding interval and the cemetery (``None``) for ``t >= zeta``.  An empty
    path has lifetime zero.
    """

    skeleton: tuple
    holds: tuple

    def __post_init__(self):
        object.__setattr__(self, "skeleton", tuple(int(s) for s in self.skeleton))
        object.__setattr__(self, "holds", tuple(self.holds))
        if len(self.skeleton) != len(self.holds):
            raise ValueError("skeleton and holds differ in length")
        if any(not h > 0 for h in self.holds):
            raise ValueError("holding times must be positive")
        if any(a == b for a, b in zip(self.skeleton, self.skeleton[1:])):
            raise ValueError("consecutive skeleton states must differ")

    @property
    def zeta(self):
        return sum(self.holds)

    def __len__(self):
        return len(self.skeleton)

    def value_at(self, t) -> Optional[int]:
        if t < 0:
            raise ValueError("t must be nonnegative")
        acc = 0
        for s, h in zip(self.skeleton, self.holds):
            acc = acc + h
            if t < acc:
                return s
        return None


class RootedLoop(Path):
    """A loop read cyclically: after ``skeleton[-1]`` it re-enters ``skeleton[0]``.

    Only rotation-class functionals are meaningful; ``skeleton[-1] ==
    skeleton[0]`` is allowed (the root then splits one holding interval).
    """

    def __post_init__(self):
        super().__post_init__()
        if not self.skeleton:
            raise ValueError("a loop must have positive lifetime")

    @property
    def trivial(self) -> bool:
        return len(self.skeleton) == 1


def _merge(pieces):
    skel, holds = [], []
    for s, h in pieces:
        if not h > 0:
            continue
        if skel and skel[-1] == s:
            holds[-1] = holds[-1] + h
        else:
            skel.append(s)
            holds.append(h)
    return tuple(skel), tuple(holds)


def truncate(path: Path, t) -> Path:
    """Killing operator: keep the trajectory on ``[0, min(t, zeta))``.

    ``t = 0`` gives the empty path.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t >= path.zeta:
        return path
    skel, holds = [], []
    start = 0
    for s, h in zip(path.skeleton, path.holds):
        if not start < t:
            break
        skel.append(s)
        holds.append(min(h, t - start))
        start = start + h
    return Path(tuple(skel), tuple(holds))


def rotate(loop: Path, v) -> RootedLoop:
    """Loop rotation: the trajectory ``s -> loop((s + v) mod zeta)`` on ``[0, zeta)``.

    Works with any ordered field for holding times (``float`` or
    ``fractions.Fraction``).
    """
    if v < 0:
        raise ValueError("rotation offset must be nonnegative")
    z = loop.zeta
    w = v % z
    start = 0
    for i, h in enumerate(loop.holds):
        if w < start + h:
            break
        start = start + h
    else:  # w rounded up to zeta
        i, start, w = 0, 0, 0
    s, h = loop.skeleton[i], loop.holds[i]
    pieces = [(s, start + h - w)]
    pieces += list(zip(loop.skeleton[i + 1:], loop.holds[i + 1:]))
    pieces += list(zip(loop.skeleton[:i], loop.holds[:i]))
    pieces.append((s, w - start))
    skel, holds = _merge(pieces)
    return RootedLoop(skel, holds)


def local_times(path: Path, m: Sequence[float]) -> np.ndarray:
    """Occupation density: total holding time at ``x`` divided by ``m[x]``."""
    m = np.asarray(m, dtype=float)
    lt = np.zeros(m.shape[0])
    for s, h in zip(path.skeleton, path.holds):
        lt[s] += float(h)
    return lt / m


# -- discrete skeleton intensities ----------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteLoopTable:
    """Jump-matrix powers and rooted skeleton intensities up to ``N_max``.

    ``nu[n] = trace(P^n) / n`` for ``2 <= n <= N_max`` (zero below).
    ``tail_bound`` certifies ``sum_{n > N_max} trace(P^n) / n``; the
    construction guarantees ``alpha * tail_bound < eps_tail``.
    """

    powers: np.ndarray = field(repr=False)
    nu: np.ndarray
    N_max: int
    tail_bound: float
    sigma_hat: float
    alpha: float
    eps_tail: float

    @property
    def P(self) -> np.ndarray:
        return self.powers[1]

    @property
    def total_intensity(self) -> float:
        return float(self.nu.sum())

    @property
    def empty(self) -> bool:
        return not np.any(self.nu > 0)


def _tail(n_dim, sigma, N):
    if sigma == 0:
        return 0.0
    return n_dim * sigma ** (N + 1) / ((N + 1) * (1.0 - sigma))


def build_loop_table(
    chain: "ValidatedChain", eps_tail: float = 1e-10, alpha: float = 1.0, max_length: int = 100_000
) -> DiscreteLoopTable:
    """Compute ``trace(P^n)/n`` until a geometric tail certificate drops below ``eps_tail``.

    The spectral-radius bound is ``min_j min(||P^j||_1, ||P^j||_inf)^(1/j)``
    over the powers computed so far.
    """
    if not eps_tail > 0:
        raise ValueError("eps_tail must be positive")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    P = chain.P
    n_dim = P.shape[0]
    powers = [np.eye(n_dim), P.copy()]
    sigma = np.inf
    N = 1
    while True:
        Pn = powers[N]
        norm = min(np.abs(Pn).sum(axis=0).max(), np.abs(Pn).sum(axis=1).max())
        sigma = min(sigma, norm ** (1.0 / N))
        if sigma < 1 and alpha * _tail(n_dim, sigma, N) < eps_tail:
            break
        if N >= max_length:
            raise NoDecay(f"no certified decay of P^n within {max_length} steps (bound {sigma:.6g})")
        powers.append(powers[N] @ P)
        N += 1
    powers = np.array(powers)
    nu = np.zeros(N + 1)
    for j in range(2, N + 1):
        nu[j] = max(np.trace(powers[j]), 0.0) / j
    return DiscreteLoopTable(
        powers=powers,
        nu=nu,
        N_max=N,
        tail_bound=_tail(n_dim, sigma, N),
        sigma_hat=float(sigma),
        alpha=float(alpha),
        eps_tail=float(eps_tail),
    )


def _categorical(rng: np.random.Generator, W: np.ndarray) -> np.ndarray:
    """One index per row of the nonnegative weight matrix ``W``."""
    cum = np.cumsum(W, axis=1)
    u = rng.random(W.shape[0]) * cum[:, -1]
    idx = (cum <= u[:, None]).sum(axis=1)
    last = W.shape[1] - 1 - np.argmax(W[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def sample_skeletons(
    table: DiscreteLoopTable, n: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """``size`` rooted skeletons of length ``n``, with law ``prod P / trace(P^n)``.

    The root is drawn from ``diag(P^n)``; each further state is drawn from
    ``P[x_i, .] * P^{n-i}[., x_1]``, the weight of closing the loop in the
    remaining steps.
    """
    if not 2 <= n <= table.N_max:
        raise ValueError(f"skeleton length {n} outside [2, {table.N_max}]")
    if table.nu[n] <= 0:
        raise ZeroIntensity(f"no rooted skeleton of length {n} has positive weight")
    P = table.P
    out = np.empty((size, n), dtype=np.intp)
    if size == 0:
        return out
    d = np.clip(np.diag(table.powers[n]), 0, None)
    out[:, 0] = _categorical(rng, np.broadcast_to(d, (size, d.size)))
    x1 = out[:, 0]
    for i in range(1, n):
        W = P[out[:, i - 1], :] * table.powers[n - i][:, x1].T
        out[:, i] = _categorical(rng, W)
    return out


def sample_skeleton(table: DiscreteLoopTable, n: int, rng: np.random.Generator) -> tuple:
    return tuple(int(s) for s in sample_skeletons(table, n, 1, rng)[0])


# -- estimators -----------------------------------------------------------


def campbell_estimate(
    samples, f: Callable[[RootedLoop], float], alpha: float, trivial_term: float = 0.0
) -> tuple[float, float]:
    """Estimate ``mu(f)`` as ``(1/alpha) E sum_{loops} f`` over soup realizations.

    Trivial loops are not materialized, so ``f`` only sees nontrivial loops;
    their exact contribution can be supplied as ``trivial_term``.  Returns
    ``(mean, stderr)``.
    """
    sums = np.array([sum(f(loop) for loop in r.loops) for r in samples], dtype=float)
    if sums.size == 0:
        raise ValueError("no samples")
    mean = sums.mean() / alpha + trivial_term
    if sums.size < 2:
        return float(mean), float("nan")
    return float(mean), float(sums.std(ddof=1) / np.sqrt(sums.size) / alpha)


def trivial_loop_integral(chain: "ValidatedChain", F: Callable[[int, float], float]) -> float:
    """``sum_x int_0^inf F(x, t) t^{-1} exp(-lambda_x t) dt``.

    ``F(x, t)`` is a functional of the trivial loop sitting at ``x`` for
    time ``t`` (local time ``t / m[x]``); ``F(x, t) / t`` must be integrable
    at zero.
    """
    total = 0.0
    for x in range(chain.n):
        lam = chain.lam[x]
        val, _ = integrate.quad(
            lambda t: F(x, t) / t * np.exp(-lam * t), 0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200
        )
        total += val
    return total


@dataclass(frozen=True)
class BridgeQuadrature:
    value: float
    t_cut: float
    tail_bound: float
    abserr: float
    evaluations: int


def _check_times(f, times) -> tuple[list, np.ndarray]:
    f = list(f)
    times = np.asarray(times, dtype=float)
    if len(f) != times.size or not f:
        raise ValueError("need one state per time")
    if not times[0] > 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must satisfy 0 < t_1 < ... < t_k")
    return f, times


def bridge_marginal(
    chain: "ValidatedChain", f: Sequence[int], times, tol: float = 1e-10, panel: float = 1.0
) -> BridgeQuadrature:
    """``mu(prod_j 1{X_{t_j} = f_j})`` from transition matrices and quadrature over the lifetime.

    The bridge description of the loop measure gives the integrand
    ``t^{-1} trace(D_1 P_{t_2-t_1} D_2 ... D_k P_{t + t_1 - t_k})`` on
    ``t > t_k``, with ``P_s = expm(s L)`` and ``D_j`` the indicator of
    ``f_j``.  The range is cut at ``T`` where the bound
    ``n ||M||_inf h r^J / (T (1 - r))``, ``r = ||P_h||_inf``, drops below
    ``tol / 10``; the remainder is integrated panel by panel with
    ``scipy.integrate.quad``.  Raises :class:`QuadratureFailure` if the
    tail is not certified or the error estimate exceeds ``tol``.
    """
    f, times = _check_times(f, times)
    L = chain.L
    n = L.shape[0]
    M = np.zeros((n, n))
    M[f[0], f[0]] = 1.0
    for j in range(1, len(f)):
        D = np.zeros((n, n))
        D[f[j], f[j]] = 1.0
        M = M @ scipy.linalg.expm((times[j] - times[j - 1]) * L) @ D
    tk, shift = times[-1], times[0] - times[-1]
    r = float(np.abs(scipy.linalg.expm(panel * L)).sum(axis=1).max())
    if not r < 1:
        raise QuadratureFailure(f"no decay of the semigroup over one panel (norm {r:.6g})")
    scale = n * float(np.abs(M).sum(axis=1).max())
    if not scale:
        return BridgeQuadrature(0.0, float(tk), 0.0, 0.0, 0)
    # past T = t_k + J h the semigroup argument is at least J h, so ||P|| <= r^J
    J = 1
    while True:
        t_cut = tk + J * panel
        tail = scale * panel * r**J / (t_cut * (1 - r))
        if tail < tol / 10:
            break
        J += 1
        if J > 100_000:
            raise QuadratureFailure("tail cutoff not reached")

    def g(t):
        return float(np.trace(M @ scipy.linalg.expm((t + shift) * L))) / t

    total, err, evals = 0.0, 0.0, 0
    for j in range(J):
        val, e, info = integrate.quad(
            g, tk + j * panel, tk + (j + 1) * panel, epsabs=tol / (10 * J), epsrel=1e-12, limit=200, full_output=1
        )[:3]
        total += val
        err += e
        evals += info["neval"]
    if err > tol:
        raise QuadratureFailure(f"quadrature error estimate {err:.3g} exceeds {tol:g}")
    return BridgeQuadrature(float(total), float(t_cut), float(tail), float(err), int(evals))


def trivial_bridge_term(chain: "ValidatedChain", f: Sequence[int], times) -> float:
    """Trivial-loop part of :func:`bridge_marginal`: ``sum_x 1{f_j = x for all j} E_1(lambda_x t_k)``."""
    f, times = _check_times(f, times)
    if len(set(f)) != 1:
        return 0.0
    return float(special.exp1(chain.lam[f[0]] * times[-1]))


def loop_to_json(loop: Path, states: Sequence) -> dict:
    return {"skeleton": [states[s] for s in loop.skeleton], "holds": [float(h) for h in loop.holds]}


def loop_from_json(doc: dict, states: Sequence) -> RootedLoop:
    index = {s: i for i, s in enumerate(states)}
    return RootedLoop(tuple(index[s] for s in doc["skeleton"]), tuple(doc["holds"]))
