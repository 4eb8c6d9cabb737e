import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopsoup.chain import ChainSpec
from loopsoup.fixtures import C2, asymmetric3, single_state, three_cycle
from loopsoup.harness import (
    EXPERIMENTS,
    ExperimentConfig,
    Row,
    RunningStats,
    run_experiment,
    run_suite,
)
from loopsoup.harness.core import SHARD_SIZE, _shard_sizes
from loopsoup.harness.experiments import isomorphism_exact


def cfg(experiment, chain=None, alpha=1.0, samples=20_000, seed=5, **params):
    chain = C2() if chain is None else chain
    return ExperimentConfig(
        name=f"{experiment}/test", experiment=experiment, chain=chain, alpha=alpha, samples=samples, seed=seed, params=params
    )


def rows(report):
    return {r.label: r for r in report.rows}


# -- statistics -----------------------------------------------------------


@given(st.lists(st.floats(-1e3, 1e3), min_size=0, max_size=40), st.integers(0, 40))
def test_running_stats_merge(xs, cut):
    a, b = xs[:cut], xs[cut:]
    merged = RunningStats.of(np.array(a)).merge(RunningStats.of(np.array(b)))
    whole = RunningStats.of(np.array(xs))
    assert merged.count == len(xs)
    if xs:
        assert math.isclose(merged.mean, np.mean(xs), rel_tol=1e-9, abs_tol=1e-9)
        assert math.isclose(merged.m2, whole.m2, rel_tol=1e-7, abs_tol=1e-6)


def test_shard_sizes():
    assert _shard_sizes(25_000) == [SHARD_SIZE, SHARD_SIZE, 5_000]
    assert sum(_shard_sizes(123_457)) == 123_457


def test_row_rules():
    assert Row("x", 1.0, 1.1, 0.05).judge(4.0).passed
    assert not Row("x", 1.0, 1.3, 0.05).judge(4.0).passed
    r = Row("x", 1.0, 1.0, 0.0).judge(4.0)
    assert r.passed and r.z == 0.0
    assert not Row("x", 1.0, 1.001, 0.0).judge(4.0).passed  # zero variance must be exact
    assert not Row("x", 1.0, float("nan"), 0.1).judge(4.0).passed
    assert Row("x", 2.0, 2.0001, kind="exact", tol=1e-4, rel=True).judge(4.0).passed
    assert not Row("x", 2.0, 2.001, kind="exact", tol=1e-4, rel=True).judge(4.0).passed


# -- individual experiments ----------------------------------------------


def test_moments_examples():
    rep = run_experiment(cfg("moments", points=["a", "b"]))
    assert rep.passed
    r = rows(rep)
    assert r["E[L^a]"].exact == pytest.approx(2 / 3)
    assert r["E[L^a L^b]"].exact == pytest.approx(5 / 9)
    full = rows(run_experiment(cfg("moments")))
    assert full["E[L^a L^a]"].exact == pytest.approx(8 / 9)
    assert len(run_experiment(cfg("moments", order=2)).rows) == 5


def test_mgf_examples():
    rep = run_experiment(cfg("mgf", chain=single_state(), z=[[0.5]], c=[[0.0], [1.0]]))
    assert rep.passed
    r = rows(rep)
    series = r["det form vs trace-log series z=(0.5) (%d terms)" % int(next(
        l.split("(")[-1].split()[0] for l in r if l.startswith("det form")))]
    assert series.exact == pytest.approx(2.0) and series.passed
    assert any("infinite variance" in n for n in rep.notes)
    assert r["E exp(-<c,L>) c=(0)"].stderr == 0 and r["E exp(-<c,L>) c=(0)"].estimate == 1.0
    c2 = rows(run_experiment(cfg("mgf")))
    assert c2["E exp(-<c,L>) c=(1,0)"].exact == pytest.approx(3 / 5)
    series = [row for row in c2.values() if row.kind == "exact"]
    assert series and all(row.passed for row in series)


def test_mgf_out_of_domain_is_an_error_report():
    rep = run_experiment(cfg("mgf", z=[[1.0, 1.0]]))
    assert not rep.passed and rep.error.startswith("OutOfDomain")


@pytest.mark.parametrize("alpha", [1.0, 2.0])
def test_isomorphism_four_routes(alpha):
    rep = run_experiment(cfg("isomorphism", alpha=alpha))
    assert rep.passed
    r = rows(rep)
    lhs = r["LHS Q^xx[F(Lhat+L)] x=a c=(1,0)"]
    rhs = r["RHS E[Lhat^x F(Lhat)]/alpha x=a c=(1,0)"]
    exact_lhs, exact_rhs = isomorphism_exact(C2(), 0, [1.0, 0.0], alpha)
    assert lhs.exact == exact_lhs and rhs.exact == exact_rhs
    assert math.isclose(exact_lhs, exact_rhs, rel_tol=1e-4)


def test_isomorphism_constant_functional():
    lhs, rhs = isomorphism_exact(C2(), 0, [0.0, 0.0], 1.0)
    assert lhs == pytest.approx(2 / 3, abs=1e-15)
    assert rhs == pytest.approx(2 / 3, rel=1e-9)


def test_qmu_examples():
    rep = run_experiment(cfg("qmu"))
    assert rep.passed
    r = rows(rep)
    assert r["Campbell mu(L^x H) x=a H=1"].exact == pytest.approx(2 / 3)
    assert r["Campbell mu(L^x H) x=a H=L^b"].exact == pytest.approx(1 / 9)
    assert r["Campbell mu(L^x H) x=a H=L^a"].exact == pytest.approx(4 / 9)


def test_rotation_examples():
    rep = run_experiment(cfg("rotation"))
    assert rep.passed
    mc = [row for row in rep.rows if row.kind == "mc"]
    assert len(mc) == 9
    trivial = [row for row in mc if row.label.endswith("zeta") or " f=1 " in row.label]
    assert len(trivial) == 3 and all(row.estimate == 0 and row.stderr == 0 for row in trivial)


def test_restriction_examples():
    r = rows(run_experiment(cfg("restriction", B=["a"])))
    assert r["restricted E[L^a]"].exact == pytest.approx(0.5)
    assert r["restricted E[L^a L^a]"].exact == pytest.approx(0.5)
    rep = run_experiment(cfg("restriction", chain=three_cycle(), B=["a", "b"]))
    assert rep.passed
    full = run_experiment(cfg("restriction", B=["a", "b"]))
    assert full.passed
    assert run_experiment(cfg("restriction", B=[])).error.startswith("EmptySubset")


def test_spacemap_examples():
    assert run_experiment(cfg("spacemap", map={"a": "b", "b": "a"})).passed
    assert run_experiment(cfg("spacemap", map={"a": "a", "b": "b"})).passed
    rep = run_experiment(cfg("spacemap", chain=asymmetric3()))
    assert rep.passed
    exact = [row for row in rep.rows if row.kind == "exact"]
    assert exact and all(row.estimate <= 1e-12 for row in exact)
    assert run_experiment(cfg("spacemap", map={"a": "a", "b": "a"})).error.startswith("NotABijection")


def test_timechange_examples():
    r = rows(run_experiment(cfg("timechange", h=[1.0, 2.0], nu={"a": 1.0})))
    assert r["trace-chain soup E[L^a]"].exact == pytest.approx(2 / 3)
    assert all(row.passed for row in r.values())
    assert run_experiment(cfg("timechange", h=[3.0, 3.0])).passed
    assert run_experiment(cfg("timechange", h=[1.0, 0.0])).error.startswith("BadDensity")
    assert run_experiment(cfg("timechange", nu={"a": 0.0})).error.startswith("BadSupport")


def test_unitweight_examples():
    rep = run_experiment(cfg("unitweight"))
    assert rep.passed
    r = rows(rep)
    assert r["Campbell mu(F) F=zeta"].exact == pytest.approx(4 / 3)
    assert r["Campbell mu(F) F=zeta L^a"].exact == pytest.approx(5 / 9)
    assert r["Campbell mu(F) F=0"].estimate == 0


def test_bridge_examples():
    rep = run_experiment(cfg("bridge", chain=single_state(), cases=[{"f": ["a"], "t": [0.5]}]))
    from scipy.special import exp1

    row = rep.rows[0]
    assert abs(row.exact - exp1(0.5)) < 1e-10 and rep.passed
    far = run_experiment(cfg("bridge", cases=[{"f": ["a"], "t": [40.0]}]))
    assert far.rows[0].exact < 1e-16
    assert run_experiment(cfg("bridge", cases=[{"f": ["a", "b"], "t": [0.3, 0.7]}])).passed


# -- suites ---------------------------------------------------------------


def test_empty_suite():
    assert run_suite([]) == []


def test_invalid_chain_gives_error_row():
    bad = ChainSpec(states=("a", "b"), q=[[1, 1], [1, 0]], k=[1, 1], m=[1, 1])
    rep = run_experiment(cfg("moments", chain=bad))
    assert not rep.passed and rep.error.startswith("BadRates")
    assert [r.label for r in rep.rows] == ["error"]


def test_suite_over_fixtures_passes():
    configs = [
        ExperimentConfig(
            name=f"{e}/{name}/{a}", experiment=e, chain=chain, alpha=a, samples=10_000, seed=11, chain_name=name
        )
        for name, chain in [("C2", C2()), ("cycle3", three_cycle())]
        for a in (0.5, 1.0, 2.0)
        for e in ("moments", "restriction")
    ]
    reports = run_suite(configs)
    assert all(r.passed for r in reports), [r.name for r in reports if not r.passed]


def test_determinism_and_worker_invariance():
    configs = [cfg(e, samples=25_000) for e in ("moments", "rotation")]
    a = [json.dumps(r.to_dict(), sort_keys=True) for r in run_suite(configs)]
    b = [json.dumps(r.to_dict(), sort_keys=True) for r in run_suite(configs)]
    c = [json.dumps(r.to_dict(), sort_keys=True) for r in run_suite(configs, workers=2)]
    assert a == b == c


def test_multiple_comparison_note():
    rep = run_experiment(cfg("qmu"))
    assert any("multiple comparisons" in n for n in rep.notes)


def test_registry_covers_every_experiment():
    from loopsoup.harness.core import REGISTRY

    assert set(REGISTRY) == set(EXPERIMENTS)
