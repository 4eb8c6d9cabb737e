import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import loopsoup.soup as soup_mod
from loopsoup.chain import green_matrix, killed_chain
from loopsoup.errors import EmptySubset
from loopsoup.fixtures import asymmetric3, random_chain
from loopsoup.harness import ExperimentConfig, run_experiment
from loopsoup.loops import build_loop_table, local_times, rotate
from loopsoup.permanent import permanental_moment
from loopsoup.soup import (
    local_times_to_csv,
    realizations_from_jsonl,
    realizations_to_jsonl,
    restrict_soup,
    sample_soup,
    sample_soup_batch,
    soup_local_times,
    spawn_rng,
)

from conftest import mean_se, within


def _batch(chain, alpha, rng, size=100_000):
    return sample_soup_batch(chain, alpha, build_loop_table(chain, 1e-12, alpha), rng, size)


def test_single_state_gamma(single, rng):
    b1 = _batch(single, 1.0, rng)
    assert b1.n_loops == 0
    lt = b1.local_times()[:, 0]
    mu, se = mean_se(lt)
    assert within(mu, se, 1.0)
    mu, se = mean_se(lt > 1.0)
    assert within(mu, se, math.exp(-1))  # Exponential(1) survival
    lt2 = _batch(single, 2.0, rng).local_times()[:, 0]
    mu, se = mean_se(lt2)
    assert within(mu, se, 2.0)
    var, var_se = mean_se((lt2 - 2.0) ** 2)
    assert within(var, var_se, 2.0)


def test_c2_loop_count(c2, rng):
    mu, se = mean_se(_batch(c2, 1.0, rng).loop_counts())
    assert within(mu, se, math.log(4 / 3))


def test_c2_local_time_moments(c2, rng):
    lt = _batch(c2, 1.0, rng).local_times()
    mu, se = mean_se(lt[:, 0])
    assert within(mu, se, 2 / 3)
    mu, se = mean_se(lt[:, 0] * lt[:, 1])
    assert within(mu, se, 5 / 9)


@pytest.mark.parametrize("fixture", ["c2", "cycle3", "asym3"])
@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_moments_are_permanents(fixture, alpha, request, rng):
    chain = request.getfixturevalue(fixture)
    u = green_matrix(chain).u
    lt = _batch(chain, alpha, rng).local_times()
    for pts in [(0,), (0, 1), (1, 1), (0, 1, 1), (1, 0, 0)] + ([(0, 1, 2), (2, 2)] if chain.n > 2 else []):
        mu, se = mean_se(np.prod(lt[:, list(pts)], axis=1))
        assert within(mu, se, permanental_moment(u, list(pts), alpha)), pts


def test_batch_and_realizations_agree(asym3, rng):
    batch = _batch(asym3, 1.5, rng, 300)
    reals = list(batch.realizations())
    lt = np.array([soup_local_times(r).lt for r in reals])
    assert np.allclose(lt, batch.local_times(), rtol=1e-12, atol=0)
    assert [len(r.loops) for r in reals] == batch.loop_counts().tolist()
    assert all(len(loop) >= 2 for r in reals for loop in r.loops)


def test_state_at_matches_loop_trajectory(asym3, rng):
    batch = _batch(asym3, 1.0, rng, 500)
    loops = [loop for r in batch.realizations() for loop in r.loops]
    for t in (0.0, 0.3, 1.7):
        got = batch.state_at(t)
        want = [loop.value_at(t) for loop in loops]
        assert got.tolist() == [-1 if w is None else w for w in want]
        wrapped = batch.state_at(t, wrap=True)
        assert wrapped.tolist() == [rotate(loop, t).value_at(0.0) for loop in loops]


def test_empty_realization_lt_is_trivial(c2, rng):
    table = build_loop_table(c2, 1e-12, 0.01)
    for _ in range(50):
        r = sample_soup(c2, 0.01, table, rng)
        if not r.loops:
            assert np.array_equal(soup_local_times(r).lt, r.trivial_lt)
            return
    pytest.fail("no empty realization at alpha=0.01")


def test_table_budget_checked(c2, asym3, rng):
    with pytest.raises(ValueError):
        sample_soup_batch(c2, 2.0, build_loop_table(c2, 1e-10, 1.0), rng, 10)
    with pytest.raises(ValueError):
        sample_soup_batch(c2, 1.0, build_loop_table(asym3), rng, 10)


# -- restriction ----------------------------------------------------------


def test_restrict_full_set_is_identity(asym3, rng):
    r = sample_soup(asym3, 2.0, build_loop_table(asym3, 1e-10, 2.0), rng)
    full = restrict_soup(r, asym3.states)
    assert full.loops == r.loops and np.array_equal(full.trivial_lt, r.trivial_lt)
    with pytest.raises(EmptySubset):
        restrict_soup(r, [])


@pytest.mark.parametrize("alpha", [0.5, 2.0])
def test_restrict_c2_to_a(c2, alpha, rng):
    batch = _batch(c2, alpha, rng).restrict(["a"])
    assert batch.n_loops == 0
    lt = batch.local_times()
    assert np.all(lt[:, 1] == 0)
    ku = killed_chain(c2, ["a"], irreducible=False).u_tilde
    assert ku[0, 0] == pytest.approx(0.5, abs=1e-15)
    mu, se = mean_se(lt[:, 0])
    assert within(mu, se, alpha * 0.5)


@pytest.mark.parametrize("fixture,B", [("asym3", ["a", "c"]), ("asym3", ["b", "c"]), ("cycle3", ["a", "b"])])
def test_restricted_moments_use_killed_kernel(fixture, B, request, rng):
    chain = request.getfixturevalue(fixture)
    kc = killed_chain(chain, B, irreducible=False)
    idx = list(kc.B)
    lt = _batch(chain, 1.0, rng).restrict(B).local_times()[:, idx]
    for pts in [(0,), (1,), (0, 1), (0, 0)]:
        mu, se = mean_se(np.prod(lt[:, list(pts)], axis=1))
        assert within(mu, se, permanental_moment(kc.u_tilde, list(pts), 1.0)), pts


@given(st.integers(0, 2**32 - 1), st.data())
def test_restriction_never_increases(seed, data):
    chain = random_chain(np.random.default_rng(seed))
    B = data.draw(st.lists(st.sampled_from(chain.states), min_size=1, unique=True))
    batch = sample_soup_batch(chain, 1.0, build_loop_table(chain, 1e-8), spawn_rng(seed), 50)
    full, sub = batch.local_times(), batch.restrict(B).local_times()
    assert np.all(np.isfinite(full)) and np.all(full >= 0)
    assert np.all(sub <= full + 1e-12)
    for r in batch.realizations():
        rr = restrict_soup(r, B)
        assert np.all(rr.local_times() <= r.local_times() + 1e-12)


def test_batch_restrict_matches_realization_restrict(asym3, rng):
    batch = _batch(asym3, 2.0, rng, 200)
    sub = batch.restrict(["a", "b"])
    got = np.array([restrict_soup(r, ["a", "b"]).local_times() for r in batch.realizations()])
    assert np.allclose(sub.local_times(), got, rtol=1e-12, atol=0)


# -- infinite divisibility -----------------------------------------------


def test_superposition_is_sum_of_intensities(asym3, rng):
    u = green_matrix(asym3).u
    lt = _batch(asym3, 0.5, rng).superpose(_batch(asym3, 1.0, rng)).local_times()
    for pts in [(0,), (2,), (0, 1), (2, 2)]:
        mu, se = mean_se(np.prod(lt[:, list(pts)], axis=1))
        assert within(mu, se, permanental_moment(u, list(pts), 1.5)), pts


# -- serialization and determinism ---------------------------------------


def test_jsonl_round_trip(asym3, rng):
    reals = list(_batch(asym3, 1.0, rng, 50).realizations())
    text = realizations_to_jsonl(reals)
    back = realizations_from_jsonl(text, asym3)
    assert realizations_to_jsonl(back) == text
    for a, b in zip(reals, back):
        assert np.array_equal(a.local_times(), b.local_times())
    first = json.loads(text.splitlines()[0])
    assert set(first) == {"alpha", "trivial_lt", "loops"}


def test_local_times_csv(c2):
    assert local_times_to_csv(np.array([[0.5, 1.0]]), c2.states) == "a,b\n0.5,1.0\n"


def test_stream_determinism(asym3):
    table = build_loop_table(asym3)
    a = sample_soup_batch(asym3, 1.0, table, spawn_rng(7, "x", 3), 1000).local_times()
    b = sample_soup_batch(asym3, 1.0, table, spawn_rng(7, "x", 3), 1000).local_times()
    c = sample_soup_batch(asym3, 1.0, table, spawn_rng(7, "x", 4), 1000).local_times()
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_loops_have_uniform_root_phase(asym3, rng):
    """Loop-local occupation seen from the root must be rotation invariant."""
    batch = _batch(asym3, 2.0, rng)
    for t in (0.05, 0.4):
        now = batch.state_at(t)
        alive = now >= 0
        shifted = batch.state_at(t + 0.7, wrap=True)[alive]
        here = now[alive]
        for x in range(3):
            d = (here == x).astype(float) - (shifted == x)
            mu, se = mean_se(d)
            assert within(mu, se, 0.0)


def test_rotation_experiment_detects_fixed_roots(monkeypatch):
    """Negative control: rooting every loop at its first jump must fail the rotation suite."""
    cfg = ExperimentConfig(
        name="rotation/asym3", experiment="rotation", chain=asymmetric3(), alpha=1.0, samples=100_000, seed=3
    )
    assert run_experiment(cfg).passed
    original = soup_mod._reroot
    monkeypatch.setattr(soup_mod, "_reroot", lambda s, h, phase: original(s, h, np.zeros_like(phase)))
    rep = run_experiment(cfg)
    assert not rep.passed
    assert max(abs(r.z) for r in rep.rows if r.z is not None) > 6
