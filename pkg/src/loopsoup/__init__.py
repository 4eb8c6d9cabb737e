"""Loop measures and Poisson loop soups of finite transient Markov chains.

Exact kernels, an exact soup sampler, closed-form permanental formulas and
an experiment harness that checks the sampler against them.
"""

from .chain import (
    ChainSpec,
    GreenKernel,
    ValidatedChain,
    green_matrix,
    killed_chain,
    resolvent_matrix,
    transition_density,
    validate_chain,
)
from .loops import Path, RootedLoop, build_loop_table, campbell_estimate, rotate, truncate
from .permanent import alpha_permanent, cyclic_mu_moment, permanental_moment, q_moment
from .soup import SoupBatch, SoupRealization, restrict_soup, sample_soup, sample_soup_batch, spawn_rng

__version__ = "0.1.0"
