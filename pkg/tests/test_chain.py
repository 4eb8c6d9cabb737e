import numpy as np
import pytest
import scipy.integrate
from hypothesis import given
from hypothesis import strategies as st

from loopsoup.chain import (
    ChainSpec,
    green_matrix,
    hitting_h,
    killed_chain,
    resolvent_matrix,
    sample_local_times,
    sample_path,
    sample_Q,
    sample_Q_batch,
    transition_density,
    validate_chain,
)
from loopsoup.errors import BadRates, EmptySubset, NotIrreducible, SingularGenerator
from loopsoup.fixtures import random_chain
from loopsoup.loops import Path, local_times

from conftest import mean_se, within

chains = st.integers(0, 2**32 - 1).map(lambda s: random_chain(np.random.default_rng(s)))


# -- validation -------------------------------------------------------------


def test_single_state_is_valid(single):
    assert single.lam.tolist() == [1.0]
    assert single.P.tolist() == [[0.0]]


def test_c2_rates_and_jump_matrix(c2):
    assert c2.lam.tolist() == [2.0, 2.0]
    assert np.array_equal(c2.P, [[0, 0.5], [0.5, 0]])


def test_no_killing_is_recurrent():
    with pytest.raises(SingularGenerator):
        validate_chain(ChainSpec(("a", "b"), [[0, 1], [1, 0]], [0, 0], [1, 1]))


@pytest.mark.parametrize(
    "q, k, m, entry",
    [
        ([[1, 1], [1, 0]], [1, 1], [1, 1], "q[0][0]"),
        ([[0, -1], [1, 0]], [1, 1], [1, 1], "q[0][1]"),
        ([[0, 1], [1, 0]], [-1, 1], [1, 1], "k[0]"),
        ([[0, 1], [1, 0]], [1, 1], [1, 0], "m[1]"),
    ],
)
def test_bad_rates_name_the_entry(q, k, m, entry):
    with pytest.raises(BadRates) as info:
        validate_chain(ChainSpec(("a", "b"), q, k, m))
    assert info.value.entry == entry


def test_zero_total_rate_rejected():
    with pytest.raises(BadRates):
        validate_chain(ChainSpec(("a", "b"), [[0, 0], [1, 0]], [0, 1], [1, 1]))


def test_one_way_graph_is_not_irreducible():
    with pytest.raises(NotIrreducible):
        validate_chain(ChainSpec(("a", "b"), [[0, 1], [0, 0]], [1, 1], [1, 1]))


def test_state_unable_to_die_is_recurrent():
    # b and c only talk to each other and never die
    with pytest.raises(SingularGenerator):
        validate_chain(ChainSpec(("a", "b", "c"), [[0, 1, 0], [0, 0, 1], [0, 1, 0]], [1, 0, 0], [1, 1, 1]))


# -- kernels ----------------------------------------------------------------


def test_green_examples(single, c2):
    assert green_matrix(single).u.tolist() == [[1.0]]
    assert np.allclose(green_matrix(c2).u, np.array([[2, 1], [1, 2]]) / 3, atol=1e-15)
    weighted = validate_chain(ChainSpec(("a", "b"), [[0, 1], [1, 0]], [1, 1], [2, 1]))
    assert np.allclose(green_matrix(weighted).u, [[1 / 3, 1 / 3], [1 / 6, 2 / 3]], atol=1e-15)


def test_green_csv_has_label_header(c2):
    lines = green_matrix(c2).to_csv().splitlines()
    assert lines[0] == ",a,b"
    assert lines[1].startswith("a,0.666666")


@given(chains)
def test_green_inverts_generator_and_is_positive(chain):
    G = chain.G
    assert np.abs(chain.neg_L @ G - np.eye(chain.n)).max() < 1e-10
    assert np.all(green_matrix(chain).u > 0)


@given(chains)
def test_row_identity_is_expected_lifetime(chain):
    u = green_matrix(chain).u
    assert np.allclose(u @ chain.m, np.linalg.solve(chain.neg_L, np.ones(chain.n)), rtol=1e-12)


def test_resolvent_examples(single, c2):
    assert resolvent_matrix(single, 1.0).u.tolist() == [[0.5]]
    assert np.allclose(resolvent_matrix(c2, 1e-9).u, green_matrix(c2).u, atol=1e-8)
    ua, ub = resolvent_matrix(c2, 1.0).u, resolvent_matrix(c2, 2.0).u
    M = np.diag(c2.m)
    assert np.abs((ua - ub) / (2 - 1) - ua @ M @ ub).max() < 1e-12


def test_resolvent_rejects_nonpositive_beta(c2):
    with pytest.raises(ValueError):
        resolvent_matrix(c2, 0.0)


@given(chains, st.floats(0.01, 5), st.floats(0.01, 5))
def test_resolvent_identity(chain, a, b):
    if abs(a - b) < 1e-3:
        b = a + 1.0
    ua, ub = resolvent_matrix(chain, a).u, resolvent_matrix(chain, b).u
    M = np.diag(chain.m)
    lhs = (ua - ub) / (b - a)
    assert np.abs(lhs - ua @ M @ ub).max() < 1e-10
    assert np.abs(lhs - ub @ M @ ua).max() < 1e-10


@given(chains)
def test_resolvent_increases_as_beta_decreases(chain):
    prev = resolvent_matrix(chain, 4.0).u
    for beta in (2.0, 1.0, 0.5, 0.1):
        cur = resolvent_matrix(chain, beta).u
        assert np.all(cur >= prev - 1e-14)
        prev = cur
    assert np.all(green_matrix(chain).u >= prev - 1e-14)


def test_transition_density_examples(single, c2):
    assert np.allclose(transition_density(c2, 0.0), np.diag(1 / c2.m))
    assert np.isclose(transition_density(single, 1.0)[0, 0], np.exp(-1), rtol=1e-12)
    val, _ = scipy.integrate.quad(lambda t: transition_density(c2, t)[0, 1], 0, np.inf)
    assert abs(val - 1 / 3) < 1e-6


@given(chains, st.floats(0, 3), st.floats(0, 3))
def test_chapman_kolmogorov(chain, s, t):
    M = np.diag(chain.m)
    lhs = transition_density(chain, s) @ M @ transition_density(chain, t)
    assert np.allclose(lhs, transition_density(chain, s + t), rtol=1e-10, atol=1e-12)


# -- killed chains ----------------------------------------------------------


def test_killed_c2(c2):
    kc = killed_chain(c2, ["a"])
    assert np.isclose(kc.u_tilde.u[0, 0], 0.5)
    assert np.isclose(kc.u_tilde_hitting[0, 0], 2 / 3 - 0.5 * 1 / 3)
    assert np.isclose(killed_chain(c2, ["b"]).u_tilde.u[0, 0], 0.5)
    full = killed_chain(c2, ["a", "b"])
    assert np.allclose(full.u_tilde.u, green_matrix(c2).u)


def test_killed_empty_subset(c2):
    with pytest.raises(EmptySubset):
        killed_chain(c2, [])


def test_killed_reducible_restriction(cycle3):
    with pytest.raises(NotIrreducible):
        killed_chain(cycle3, ["a", "b"])
    kc = killed_chain(cycle3, ["a", "b"], irreducible=False)
    assert np.allclose(kc.u_tilde.u, [[0.5, 0.25], [0.0, 0.5]])
    assert kc.route_gap < 1e-12


@given(chains, st.data())
def test_killed_routes_agree_and_are_dominated(chain, data):
    B = data.draw(st.lists(st.sampled_from(chain.states), min_size=1, unique=True))
    kc = killed_chain(chain, B, irreducible=False)
    assert kc.route_gap < 1e-10
    u = green_matrix(chain).u[np.ix_(kc.B, kc.B)]
    assert np.all(kc.u_tilde.u <= u + 1e-12)


# -- hitting ----------------------------------------------------------------


def test_hitting_h(c2, single):
    assert np.allclose(hitting_h(c2, "b"), [0.5, 1.0])
    assert hitting_h(single, "a").tolist() == [1.0]


@given(chains)
def test_hitting_h_bounds(chain):
    for y in range(chain.n):
        h = hitting_h(chain, y)
        assert h[y] == 1.0
        assert np.all(h > 0) and np.all(h <= 1 + 1e-12)


# -- local times and samplers ----------------------------------------------


def test_local_times_examples():
    path = Path((0,), (2.0,))
    assert local_times(path, [1.0]).tolist() == [2.0]
    assert local_times(path, [4.0]).tolist() == [0.5]


@given(st.lists(st.tuples(st.integers(0, 2), st.floats(0.01, 3)), min_size=1, max_size=8))
def test_occupation_identity(pieces):
    skel, holds = [], []
    for s, h in pieces:
        if skel and skel[-1] == s:
            continue
        skel.append(s)
        holds.append(h)
    path = Path(tuple(skel), tuple(holds))
    m = np.array([0.5, 2.0, 1.5])
    f = np.array([1.0, -2.0, 3.0])
    integral = sum(f[s] * h for s, h in zip(skel, holds))
    assert np.isclose(np.dot(f, local_times(path, m) * m), integral)


def test_single_state_lifetime_is_exponential(single, rng):
    zeta = [sample_path(single, "a", rng).zeta for _ in range(20000)]
    mu, se = mean_se(zeta)
    assert within(mu, se, 1.0, z=3)


def test_c2_expected_lifetime(c2, rng):
    lt, zeta = sample_local_times(c2, "a", 100_000, rng)
    mu, se = mean_se(zeta)
    assert within(mu, se, 1.0, z=3)
    mu, se = mean_se(lt[:, 1])
    assert within(mu, se, 1 / 3, z=3)


def test_forced_death_state_never_jumps(rng):
    chain = validate_chain(ChainSpec(("a", "b"), [[0, 0], [1, 0]], [1, 1], [1, 1]), irreducible=False)
    for _ in range(200):
        assert len(sample_path(chain, "a", rng)) == 1


def test_scalar_and_batch_samplers_agree_in_law(c2, rng):
    scalar = [local_times(sample_path(c2, "a", rng), c2.m)[1] for _ in range(20000)]
    batch, _ = sample_local_times(c2, "a", 20000, rng)
    m1, s1 = mean_se(scalar)
    m2, s2 = mean_se(batch[:, 1])
    assert abs(m1 - m2) <= 4 * np.hypot(s1, s2)


@pytest.mark.parametrize("fixture", ["c2", "cycle3", "asym3"])
def test_green_is_expected_total_local_time(fixture, request):
    chain = request.getfixturevalue(fixture)
    u = green_matrix(chain).u
    rng = np.random.default_rng(7)
    for x in range(chain.n):
        lt, _ = sample_local_times(chain, x, 100_000, rng)
        for y in range(chain.n):
            mu, se = mean_se(lt[:, y])
            assert within(mu, se, u[x, y])


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_gamma_identity(asym3, t):
    """E^x[L^y_t] equals the time integral of the transition density."""
    rng = np.random.default_rng(11)
    for x in range(asym3.n):
        lt, _ = sample_local_times(asym3, x, 100_000, rng, t=t)
        for y in range(asym3.n):
            rhs, _ = scipy.integrate.quad(lambda s: transition_density(asym3, s)[x, y], 0, t, epsabs=1e-12)
            mu, se = mean_se(lt[:, y])
            assert within(mu, se, rhs)


def test_sample_Q_acceptance_and_mass(c2, rng):
    batch = sample_Q_batch(c2, "a", "b", 100_000, rng)
    p, se = mean_se(batch.accepted)
    assert within(p, se, 0.5, z=3)
    same = sample_Q_batch(c2, "a", "a", 10_000, rng)
    assert same.accepted.all()
    assert np.isclose(green_matrix(c2).u[0, 0] * same.accepted.mean(), 2 / 3)


def test_sample_Q_ends_at_target(c2, rng):
    for _ in range(300):
        p = sample_Q(c2, "a", "b", rng)
        if p is not None:
            assert p.skeleton[-1] == 1


def test_scalar_and_batch_Q_agree(asym3, rng):
    xs = []
    for _ in range(20000):
        p = sample_Q(asym3, "a", "c", rng)
        if p is not None:
            xs.append(local_times(p, asym3.m)[1])
    b = sample_Q_batch(asym3, "a", "c", 20000, rng)
    m1, s1 = mean_se(xs)
    m2, s2 = mean_se(b.lt[b.accepted, 1])
    assert abs(m1 - m2) <= 4 * np.hypot(s1, s2)
