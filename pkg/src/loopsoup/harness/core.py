"""Experiment configs, report rows and the sharded Monte Carlo driver."""

from __future__ import annotations

import dataclasses
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np

from ..chain import ChainSpec, ValidatedChain, as_validated
from ..errors import LoopSoupError
from ..soup import spawn_rng
from .stats import RunningStats

SHARD_SIZE = 10_000
Z_MAX = 4.0
ZERO_STDERR_ATOL = 1e-12
MULTIPLE_COMPARISON_ROWS = 20

EXPERIMENTS = (
    "moments",
    "mgf",
    "isomorphism",
    "qmu",
    "rotation",
    "restriction",
    "spacemap",
    "timechange",
    "unitweight",
    "bridge",
)


@dataclass(eq=False)
class ExperimentConfig:
    """One experiment on one chain at one ``alpha``.

    ``name`` is unique within a suite and, with ``seed``, determines every
    random stream of the run.  A raw :class:`ChainSpec` is validated when
    the experiment runs, so an invalid chain yields an error report.
    """

    name: str
    experiment: str
    chain: Union[ValidatedChain, ChainSpec] = field(repr=False)
    alpha: float
    samples: int
    seed: int
    chain_name: str = ""
    params: dict = field(default_factory=dict)
    eps_tail: float = 1e-10


@dataclass
class Row:
    """One compared quantity.

    ``kind`` is ``"mc"`` (pass iff ``|z| <= z_max``) or ``"exact"`` (pass
    iff the absolute, or relative when ``rel``, deviation is at most ``tol``).
    A Monte Carlo row with zero standard error passes only if it matches to
    ``tol`` (default ``ZERO_STDERR_ATOL``).
    """

    label: str
    exact: float
    estimate: float
    stderr: float = 0.0
    kind: str = "mc"
    tol: Optional[float] = None
    rel: bool = False
    z: Optional[float] = None
    passed: bool = False

    def judge(self, z_max: float) -> "Row":
        if self.kind == "mc":
            diff = self.estimate - self.exact
            if not math.isfinite(self.estimate):
                self.z, self.passed = None, False
            elif not self.stderr > 1e-15 * (1.0 + abs(self.estimate)):
                self.stderr = 0.0
                atol = ZERO_STDERR_ATOL if self.tol is None else self.tol
                self.passed = abs(diff) <= atol * max(1.0, abs(self.exact))
                self.z = 0.0 if self.passed else None
            else:
                self.z = diff / self.stderr
                self.passed = abs(self.z) <= z_max
        else:
            err = abs(self.estimate - self.exact)
            if self.rel:
                err /= max(abs(self.exact), 1e-300)
            self.passed = bool(err <= self.tol)
        return self

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "kind": self.kind,
            "exact": _num(self.exact),
            "estimate": _num(self.estimate),
            "stderr": _num(self.stderr),
            "z": _num(self.z),
            "tol": self.tol,
            "rel": self.rel,
            "passed": bool(self.passed),
        }


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class ExperimentReport:
    name: str
    experiment: str
    chain: str
    alpha: float
    samples: int
    seed: int
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    error: Optional[str] = None
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return self.error is None and all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        """Machine form; ``runtime`` is left out so reports are reproducible byte for byte."""
        return {
            "name": self.name,
            "experiment": self.experiment,
            "chain": self.chain,
            "alpha": self.alpha,
            "samples": self.samples,
            "seed": self.seed,
            "passed": bool(self.passed),
            "error": self.error,
            "notes": list(self.notes),
            "rows": [r.to_dict() for r in self.rows],
        }


@dataclass
class McRow:
    """Row whose estimate is ``offset + scale * mean(column)`` over realizations."""

    label: str
    column: str
    exact: float
    scale: float = 1.0
    offset: float = 0.0
    atol: Optional[float] = None  # allowed gap if the column has no variance


@dataclass
class Plan:
    setup: Any
    mc_rows: list
    exact_rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)


# prepare(cfg) -> Plan; observe(setup, rng, size) -> {column: values of shape (size,)}
REGISTRY: dict[str, tuple[Callable, Callable]] = {}


def register(name: str):
    def deco(pair):
        REGISTRY[name] = pair
        return pair

    return deco


def _shard_sizes(samples: int) -> list[int]:
    full, rest = divmod(samples, SHARD_SIZE)
    return [SHARD_SIZE] * full + ([rest] if rest else [])


def _run_shard(experiment: str, setup, seed: int, name: str, shard: int, size: int) -> dict:
    _, observe = REGISTRY[experiment]
    cols = observe(setup, spawn_rng(seed, name, shard), size)
    return {k: RunningStats.of(v) for k, v in cols.items()}


def _reduce(parts: list[dict]) -> dict:
    out: dict[str, RunningStats] = {}
    for part in parts:
        for key, st in part.items():
            out[key] = out.get(key, RunningStats()).merge(st)
    return out


def run_experiment(
    cfg: ExperimentConfig, z_max: float = Z_MAX, executor: Optional[ProcessPoolExecutor] = None
) -> ExperimentReport:
    """Run one experiment; library errors become an error report, not an exception."""
    t0 = time.perf_counter()
    report = ExperimentReport(
        name=cfg.name,
        experiment=cfg.experiment,
        chain=cfg.chain_name,
        alpha=cfg.alpha,
        samples=cfg.samples,
        seed=cfg.seed,
    )
    try:
        prepare, _ = REGISTRY[cfg.experiment]
        if not isinstance(cfg.chain, ValidatedChain):
            cfg = dataclasses.replace(cfg, chain=as_validated(cfg.chain))
        plan = prepare(cfg)
        sizes = _shard_sizes(cfg.samples)
        args = [(cfg.experiment, plan.setup, cfg.seed, cfg.name, i, s) for i, s in enumerate(sizes)]
        if executor is None:
            parts = [_run_shard(*a) for a in args]
        else:
            parts = list(executor.map(_run_shard, *zip(*args)))
        stats = _reduce(parts)
        for spec in plan.mc_rows:
            st = stats[spec.column]
            report.rows.append(
                Row(
                    spec.label,
                    spec.exact,
                    spec.offset + spec.scale * st.mean,
                    abs(spec.scale) * st.stderr,
                    tol=spec.atol,
                ).judge(z_max)
            )
        report.rows.extend(r.judge(z_max) for r in plan.exact_rows)
        report.notes.extend(plan.notes)
        n_mc = sum(r.kind == "mc" for r in report.rows)
        if n_mc > MULTIPLE_COMPARISON_ROWS:
            expected = n_mc * math.erfc(z_max / math.sqrt(2))
            report.notes.append(
                f"multiple comparisons: {n_mc} Monte Carlo rows at |z| <= {z_max:g}; "
                f"{expected:.2g} chance failures expected under the null"
            )
    except LoopSoupError as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        report.rows.append(Row("error", float("nan"), float("nan"), kind="exact", tol=0.0))
    report.runtime = time.perf_counter() - t0
    return report


def run_suite(configs, z_max: float = Z_MAX, workers: int = 1) -> list:
    """Run every config in order; the result is independent of ``workers``."""
    configs = list(configs)
    if workers > 1 and configs:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return [run_experiment(c, z_max, ex) for c in configs]
    return [run_experiment(c, z_max) for c in configs]


# -- shared helpers for experiments --------------------------------------


def multisets(points: list, order: int) -> list:
    """All nondecreasing tuples of ``points`` of length ``1..order``."""
    out = []
    for k in range(1, order + 1):
        out.extend(itertools.combinations_with_replacement(points, k))
    return out


def product_column(lt: np.ndarray, pts) -> np.ndarray:
    out = np.ones(lt.shape[0])
    for p in pts:
        out = out * lt[:, p]
    return out


def moment_label(prefix: str, states, pts) -> str:
    return f"{prefix}[" + " ".join(f"L^{states[p]}" for p in pts) + "]"
