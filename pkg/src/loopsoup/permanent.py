"""alpha-permanents and the closed-form moment formulas built from them.

Every sum over permutations here is an explicit enumeration; the cost is
``k!`` so sizes are capped (``DEFAULT_CAP``).  No inclusion-exclusion trick
is used: the ``alpha^{cycles}`` weight does not factor through Ryser's
formula for non-integer ``alpha``.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from .chain import ChainSpec, GreenKernel, ValidatedChain, as_validated, green_matrix, validate_chain
from .errors import OutOfDomain, TooLarge

__all__ = [
    "DEFAULT_CAP",
    "alpha_permanent",
    "cycle_polynomial",
    "permanental_moment",
    "cyclic_mu_moment",
    "q_moment",
    "soup_mgf_exact",
    "mgf_log_series",
    "soup_laplace_exact",
    "laplace_kernel",
]

DEFAULT_CAP = 10


@lru_cache(maxsize=None)
def _permutation_table(k: int) -> tuple[np.ndarray, np.ndarray]:
    """All permutations of ``range(k)`` as rows, with their cycle counts."""
    perms = np.array(list(itertools.permutations(range(k))), dtype=np.intp).reshape(-1, k)
    # position j is the least element of its cycle iff the orbit of j
    # returns to j without visiting a smaller index
    leader = np.ones(perms.shape, dtype=bool)
    rows = np.arange(perms.shape[0])
    for j in range(k):
        cur = perms[:, j].copy()
        for _ in range(k - 1):
            leader[:, j] &= cur >= j
            cur = perms[rows, cur]
    cycles = leader.sum(axis=1)
    perms.setflags(write=False)
    cycles.setflags(write=False)
    return perms, cycles


def _check_size(k: int, cap: int) -> None:
    if k > cap:
        raise TooLarge(f"size {k} exceeds the enumeration cap {cap}")


def _products(A: np.ndarray, perms: np.ndarray) -> np.ndarray:
    k = A.shape[0]
    return A[np.arange(k)[None, :], perms].prod(axis=1)


def alpha_permanent(A, alpha: float, cap: int = DEFAULT_CAP) -> float:
    """``sum_pi alpha^{c(pi)} prod_j A[j][pi(j)]`` over all permutations."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError("A must be a nonempty square matrix")
    _check_size(A.shape[0], cap)
    perms, cycles = _permutation_table(A.shape[0])
    return float(np.dot(float(alpha) ** cycles, _products(A, perms)))


def cycle_polynomial(A, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Coefficients ``c[j]`` with ``alpha_permanent(A, a) = sum_j c[j] a^j``."""
    A = np.asarray(A, dtype=float)
    _check_size(A.shape[0], cap)
    perms, cycles = _permutation_table(A.shape[0])
    return np.bincount(cycles, weights=_products(A, perms), minlength=A.shape[0] + 1)


def _kernel(u) -> np.ndarray:
    return np.asarray(u, dtype=float)


def permanental_moment(u, pts, alpha: float, cap: int = DEFAULT_CAP) -> float:
    """``E prod_j theta_{x_j}`` for an alpha-permanental process with kernel ``u``."""
    pts = list(pts)
    U = _kernel(u)[np.ix_(pts, pts)]
    return alpha_permanent(U, alpha, cap)


def _chain_sum(U: np.ndarray, head: int, middle: list, tail: int, cap: int) -> float:
    """``sum_pi U[head, m_pi1] U[m_pi1, m_pi2] ... U[m_pik, tail]``."""
    k = len(middle)
    if k == 0:
        return float(U[head, tail])
    _check_size(k, cap)
    perms, _ = _permutation_table(k)
    seq = np.asarray(middle)[perms]
    val = U[head, seq[:, 0]] * U[seq[:, -1], tail]
    for j in range(k - 1):
        val = val * U[seq[:, j], seq[:, j + 1]]
    return float(val.sum())


def cyclic_mu_moment(u, pts, cap: int = DEFAULT_CAP) -> float:
    """Loop-measure moment ``mu(prod_j L^{y_j})``: closed walks anchored at the last point."""
    pts = list(pts)
    if not pts:
        raise ValueError("need at least one point")
    return _chain_sum(_kernel(u), pts[-1], pts[:-1], pts[-1], cap)


def q_moment(u, x: int, y: int, pts, cap: int = DEFAULT_CAP) -> float:
    """``Q^{x,y}(prod_j L^{x_j})``; with no points this is the total mass ``u(x, y)``."""
    return _chain_sum(_kernel(u), x, list(pts), y, cap)


def _mgf_matrix(u, pts, z) -> np.ndarray:
    pts = list(pts)
    if len(set(pts)) != len(pts):
        raise ValueError("points must be distinct")
    z = np.asarray(z, dtype=float)
    if z.shape != (len(pts),):
        raise ValueError("z must have one entry per point")
    return _kernel(u)[np.ix_(pts, pts)] * z[None, :]


def _spectral_radius(M: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(M)).max()) if M.size else 0.0


def soup_mgf_exact(u, pts, z, alpha: float) -> float:
    """``det(I - U diag(z))^{-alpha}`` with ``U`` the kernel on ``pts``.

    Raises :class:`OutOfDomain` unless the spectral radius of ``U diag(z)``
    is below one.
    """
    M = _mgf_matrix(u, pts, z)
    rho = _spectral_radius(M)
    if rho >= 1:
        raise OutOfDomain(f"spectral radius {rho:.6g} >= 1")
    sign, logdet = np.linalg.slogdet(np.eye(M.shape[0]) - M)
    if sign <= 0:
        raise OutOfDomain("determinant is not positive")
    return float(np.exp(-alpha * logdet))


def mgf_log_series(u, pts, z, alpha: float, tol: float = 1e-15, max_terms: int = 100_000):
    """``alpha * sum_{r>=1} trace((U diag z)^r) / r``, summed until terms fall below ``tol``.

    Independent check of the log of :func:`soup_mgf_exact`.  Returns
    ``(value, terms_used)``.
    """
    M = _mgf_matrix(u, pts, z)
    if _spectral_radius(M) >= 1:
        raise OutOfDomain("series diverges")
    total = 0.0
    power = np.eye(M.shape[0])
    for r in range(1, max_terms + 1):
        power = power @ M
        term = np.trace(power) / r
        total += term
        if abs(term) < tol and np.abs(power).max() < tol:
            return alpha * total, r
    raise OutOfDomain("series did not converge")


def laplace_kernel(chain: ValidatedChain, c) -> GreenKernel:
    """Green kernel of the chain with extra killing rate ``c[x] / m[x]``.

    This is the Feynman-Kac kernel for the weight ``exp(-sum_x c[x] L^x)``;
    densities stay with respect to ``m``.
    """
    chain = as_validated(chain)
    c = np.asarray(c, dtype=float)
    if c.shape != (chain.n,) or np.any(c < 0):
        raise ValueError("c must be a nonnegative vector with one entry per state")
    spec = ChainSpec(chain.states, chain.q, chain.k + c / chain.m, chain.m)
    return green_matrix(validate_chain(spec))


def soup_laplace_exact(chain: ValidatedChain, c, alpha: float) -> float:
    """``E exp(-<c, L_hat>) = det(I + U diag(c))^{-alpha}`` for the full kernel ``U``."""
    chain = as_validated(chain)
    c = np.asarray(c, dtype=float)
    if c.shape != (chain.n,):
        raise ValueError("c must have one entry per state")
    U = green_matrix(chain).u
    sign, logdet = np.linalg.slogdet(np.eye(chain.n) + U * c[None, :])
    if sign <= 0:
        raise OutOfDomain("determinant is not positive")
    return float(np.exp(-alpha * logdet))
