"""Small reference chains with known kernels, plus a random-chain generator."""

from __future__ import annotations

import numpy as np

from .chain import ChainSpec, ValidatedChain, validate_chain

__all__ = ["C2_SPEC", "C2", "three_cycle", "single_state", "asymmetric3", "random_chain"]

C2_SPEC = ChainSpec(states=("a", "b"), q=[[0, 1], [1, 0]], k=[1, 1], m=[1, 1])


def C2() -> ValidatedChain:
    """Two states, unit jump rates both ways, unit killing; ``u = [[2/3, 1/3], [1/3, 2/3]]``."""
    return validate_chain(C2_SPEC)


def three_cycle() -> ValidatedChain:
    """Directed cycle ``a -> b -> c -> a`` with unit rates and unit killing; ``u`` is not symmetric."""
    q = np.roll(np.eye(3), 1, axis=1)
    return validate_chain(ChainSpec(("a", "b", "c"), q, np.ones(3), np.ones(3)))


def single_state(k: float = 1.0, m: float = 1.0) -> ValidatedChain:
    """One state killed at rate ``k``; no nontrivial loops."""
    return validate_chain(ChainSpec(("a",), [[0.0]], [k], [m]))


def asymmetric3() -> ValidatedChain:
    """Three states with unequal rates, killing and weights, all transitions present."""
    q = [[0.0, 2.0, 0.5], [0.3, 0.0, 1.0], [1.5, 0.2, 0.0]]
    return validate_chain(ChainSpec(("a", "b", "c"), q, [0.5, 1.0, 0.3], [1.0, 2.0, 0.5]))


def random_chain(rng: np.random.Generator, n: int | None = None, max_n: int = 6) -> ValidatedChain:
    """Random valid chain: dense positive rates, positive killing, positive weights."""
    if n is None:
        n = int(rng.integers(1, max_n + 1))
    q = rng.uniform(0.05, 2.0, size=(n, n))
    np.fill_diagonal(q, 0.0)
    k = rng.uniform(0.05, 1.0, size=n)
    m = rng.uniform(0.2, 3.0, size=n)
    return validate_chain(ChainSpec(tuple(f"s{i}" for i in range(n)), q, k, m))
