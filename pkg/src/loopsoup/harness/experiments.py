"""The experiments: each pits a sampled quantity against a closed form or a second route.

Every experiment is a pair ``(prepare, observe)``.  ``prepare`` computes
exact values and the deterministic rows once; ``observe`` turns one shard
of random input into per-realization columns whose means are the Monte
Carlo estimates.  Both are module-level functions so shards can run in
worker processes.
"""

from __future__ import annotations

import numpy as np

from ..chain import (
    green_matrix,
    killed_chain,
    relabel_chain,
    sample_Q_batch,
    time_changed_chain,
    trace_chain,
    trace_chain_from_green,
)
from ..errors import OutOfDomain
from ..loops import bridge_marginal, build_loop_table, trivial_bridge_term, trivial_loop_integral
from ..permanent import (
    laplace_kernel,
    mgf_log_series,
    permanental_moment,
    q_moment,
    soup_laplace_exact,
    soup_mgf_exact,
)
from ..soup import sample_soup_batch
from .core import ExperimentConfig, McRow, Plan, Row, moment_label, multisets, product_column, register

FD_STEP = 1e-6
ISO_RTOL = 1e-4
BRIDGE_TOL = 1e-10


def _vec(v) -> str:
    return "(" + ",".join(f"{float(x):g}" for x in np.atleast_1d(v)) + ")"


def _soup_setup(cfg: ExperimentConfig, chain=None) -> dict:
    chain = cfg.chain if chain is None else chain
    return {"chain": chain, "table": build_loop_table(chain, cfg.eps_tail, cfg.alpha), "alpha": cfg.alpha}


def _draw(soup: dict, rng, size):
    return sample_soup_batch(soup["chain"], soup["alpha"], soup["table"], rng, size)


def _moment_rows(prefix: str, key: str, u, states, sets, alpha, exact_kernel=None) -> list:
    kernel = u if exact_kernel is None else exact_kernel
    return [
        McRow(moment_label(prefix, states, pts), f"{key}{i}", permanental_moment(kernel, pts, alpha))
        for i, pts in enumerate(sets)
    ]


def _moment_columns(key: str, lt, sets) -> dict:
    return {f"{key}{i}": product_column(lt, pts) for i, pts in enumerate(sets)}


def _max_dev(a, b) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


# -- moments --------------------------------------------------------------


def prepare_moments(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    if "points" in cfg.params:
        pts = chain.indices(cfg.params["points"])
        sets = [tuple(pts[: j + 1]) for j in range(len(pts))]
    else:
        sets = multisets(list(range(chain.n)), int(cfg.params.get("order", 3)))
    u = green_matrix(chain).u
    setup = dict(_soup_setup(cfg), sets=sets)
    return Plan(setup, _moment_rows("E", "m", u, chain.states, sets, cfg.alpha))


def observe_moments(setup, rng, size) -> dict:
    return _moment_columns("m", _draw(setup, rng, size).local_times(), setup["sets"])


register("moments")((prepare_moments, observe_moments))


# -- moment generating function and Laplace transform ---------------------


def _rho(M) -> float:
    return float(np.abs(np.linalg.eigvals(M)).max()) if np.size(M) else 0.0


def prepare_mgf(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    u = green_matrix(chain).u
    pts = chain.indices(cfg.params.get("points", chain.states))
    U = u[np.ix_(pts, pts)]
    zs = [np.asarray(z, dtype=float) for z in cfg.params.get("z", [np.full(len(pts), 0.4 / _rho(U))])]
    cs = [np.asarray(c, dtype=float) for c in cfg.params.get("c", _default_cs(chain.n))]
    mc, exact, notes = [], [], []
    for i, z in enumerate(zs):
        closed = soup_mgf_exact(u, pts, z, cfg.alpha)
        log_series, terms = mgf_log_series(u, pts, z, cfg.alpha)
        # a z-score needs a finite second moment, i.e. 2 z^+ inside the domain as well
        if _rho(U * (2 * np.clip(z, 0, None))[None, :]) < 1:
            mc.append(McRow(f"E exp(<z,L>) z={_vec(z)}", f"z{i}", closed))
        else:
            notes.append(f"z = {_vec(z)}: exp(<z, L>) has infinite variance; Monte Carlo row omitted")
        exact.append(
            Row(f"det form vs trace-log series z={_vec(z)} ({terms} terms)", closed, float(np.exp(log_series)),
                kind="exact", tol=1e-8, rel=True)
        )
    for i, c in enumerate(cs):
        if c.shape != (chain.n,) or np.any(c < 0):
            raise OutOfDomain("Laplace vectors need one nonnegative entry per state")
        mc.append(McRow(f"E exp(-<c,L>) c={_vec(c)}", f"c{i}", soup_laplace_exact(chain, c, cfg.alpha)))
    setup = dict(_soup_setup(cfg), pts=pts, zs=zs, cs=cs)
    return Plan(setup, mc, exact, notes)


def _default_cs(n: int) -> list:
    e0 = np.zeros(n)
    e0[0] = 1.0
    return [np.zeros(n), e0, np.full(n, 0.5)]


def observe_mgf(setup, rng, size) -> dict:
    lt = _draw(setup, rng, size).local_times()
    cols = {f"z{i}": np.exp(lt[:, setup["pts"]] @ z) for i, z in enumerate(setup["zs"])}
    cols.update({f"c{i}": np.exp(-(lt @ c)) for i, c in enumerate(setup["cs"])})
    return cols


register("mgf")((prepare_mgf, observe_mgf))


# -- isomorphism ----------------------------------------------------------


def _iso_grid(n: int) -> list:
    first, last = np.zeros(n), np.zeros(n)
    first[0] = 1.0
    last[-1] = 2.0
    return [first, np.full(n, 0.5), last]


def isomorphism_exact(chain, x: int, c, alpha: float, step: float = FD_STEP) -> tuple[float, float]:
    """``(LHS, RHS)`` of the isomorphism identity for ``F = exp(-<c, .>)``.

    LHS is ``u_c(x, x) det(I + U diag c)^(-alpha)``; RHS is ``1/alpha`` times
    a central difference of the Laplace functional in direction ``e_x``.
    """
    c = np.asarray(c, dtype=float)
    lhs = laplace_kernel(chain, c).u[x, x] * soup_laplace_exact(chain, c, alpha)
    e = np.zeros(chain.n)
    e[x] = step
    deriv = (soup_laplace_exact(chain, c - e, alpha) - soup_laplace_exact(chain, c + e, alpha)) / (2 * step)
    return float(lhs), float(deriv / alpha)


def prepare_isomorphism(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    u = green_matrix(chain).u
    xs = chain.indices(cfg.params.get("x", chain.states))
    cs = [np.asarray(c, dtype=float) for c in cfg.params.get("c", _iso_grid(chain.n))]
    mc, exact = [], []
    for x in xs:
        for i, c in enumerate(cs):
            lhs, rhs = isomorphism_exact(chain, x, c, cfg.alpha)
            tag = f"x={chain.states[x]} c={_vec(c)}"
            mc.append(McRow(f"LHS Q^xx[F(Lhat+L)] {tag}", f"l{x}_{i}", lhs, scale=u[x, x]))
            mc.append(McRow(f"RHS E[Lhat^x F(Lhat)]/alpha {tag}", f"r{x}_{i}", rhs, scale=1.0 / cfg.alpha))
            mc.append(McRow(f"LHS - RHS paired {tag}", f"d{x}_{i}", 0.0))
            exact.append(Row(f"exact LHS vs finite-difference RHS {tag}", rhs, lhs, kind="exact", tol=ISO_RTOL, rel=True))
    setup = dict(_soup_setup(cfg), xs=xs, cs=cs, uxx=[u[x, x] for x in xs])
    return Plan(setup, mc, exact)


def observe_isomorphism(setup, rng, size) -> dict:
    chain, alpha = setup["chain"], setup["alpha"]
    lt = _draw(setup, rng, size).local_times()
    cols = {}
    for x, uxx in zip(setup["xs"], setup["uxx"]):
        q = sample_Q_batch(chain, x, x, size, rng)
        for i, c in enumerate(setup["cs"]):
            left = np.exp(-((lt + q.lt) @ c))
            right = lt[:, x] * np.exp(-(lt @ c))
            cols[f"l{x}_{i}"] = left
            cols[f"r{x}_{i}"] = right
            cols[f"d{x}_{i}"] = uxx * left - right / alpha
    return cols


register("isomorphism")((prepare_isomorphism, observe_isomorphism))


# -- mu(L^x H) three ways -------------------------------------------------


def _h_value(h: dict, lt) -> np.ndarray:
    if "exp" in h:
        return np.exp(-(lt @ h["exp"]))
    return product_column(lt, h["poly"])


def prepare_qmu(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    u = green_matrix(chain).u
    xs = chain.indices(cfg.params.get("x", chain.states))
    raw = cfg.params.get("H")
    if raw is None:
        raw = [{"poly": []}] + [{"poly": [s]} for s in chain.states] + [{"exp": [0.5] * chain.n}]
    hs = []
    for h in raw:
        if "exp" in h:
            hs.append({"exp": np.asarray(h["exp"], dtype=float), "label": f"exp(-<{_vec(h['exp'])},L>)"})
        else:
            pts = chain.indices(h["poly"])
            hs.append({"poly": pts, "label": " ".join(f"L^{chain.states[p]}" for p in pts) or "1"})
    mc = []
    for x in xs:
        for i, h in enumerate(hs):
            exact = laplace_kernel(chain, h["exp"]).u[x, x] if "exp" in h else q_moment(u, x, x, h["poly"])
            triv = _trivial_qmu(chain, x, h)
            tag = f"x={chain.states[x]} H={h['label']}"
            mc.append(McRow(f"Campbell mu(L^x H) {tag}", f"c{x}_{i}", exact, scale=1.0 / cfg.alpha, offset=triv))
            mc.append(McRow(f"Q^xx sampler u(x,x) E[H] {tag}", f"q{x}_{i}", exact, scale=u[x, x]))
            mc.append(McRow(f"Campbell - Q^xx {tag}", f"d{x}_{i}", 0.0, offset=triv))
    setup = dict(_soup_setup(cfg), xs=xs, hs=hs, uxx=[u[x, x] for x in xs])
    return Plan(setup, mc)


def _trivial_qmu(chain, x: int, h: dict) -> float:
    """Trivial-loop part of ``mu(L^x H)``: only loops sitting at ``x`` contribute."""
    m = chain.m[x]
    e = np.zeros(chain.n)
    e[x] = 1.0

    def F(y, t):
        if y != x:
            return 0.0
        lt = (t / m) * e
        return float((t / m) * _h_value(h, lt[None, :])[0])

    return trivial_loop_integral(chain, F)


def observe_qmu(setup, rng, size) -> dict:
    chain, alpha = setup["chain"], setup["alpha"]
    batch = _draw(setup, rng, size)
    loop_lt = batch.loop_local_times()
    cols = {}
    for x, uxx in zip(setup["xs"], setup["uxx"]):
        q = sample_Q_batch(chain, x, x, size, rng)
        for i, h in enumerate(setup["hs"]):
            camp = batch.per_realization(loop_lt[:, x] * _h_value(h, loop_lt))
            qv = _h_value(h, q.lt)
            cols[f"c{x}_{i}"] = camp
            cols[f"q{x}_{i}"] = qv
            cols[f"d{x}_{i}"] = camp / alpha - uxx * qv
    return cols


register("qmu")((prepare_qmu, observe_qmu))


# -- rotation invariance --------------------------------------------------


def _rotation_cases(states) -> list:
    s0, s1, sl = states[0], states[min(1, len(states) - 1)], states[-1]
    return [
        {"f": s0, "g": ["le", 1.0], "v": 0.3},
        {"f": s0, "g": ["exp", 1.0], "v": 1.0},
        {"f": sl, "g": ["le", 0.5], "v": 2.5},
        {"f": s1, "g": ["exp", 2.0], "v": 0.7},
        {"f": s0, "g": ["le", 2.0], "v": 5.0},
        {"f": sl, "g": ["exp", 0.5], "v": 0.1},
        {"f": None, "g": ["le", 1.0], "v": 0.3},
        {"f": s0, "g": ["le", 1.0], "v_mult": 1},
        {"f": sl, "g": ["exp", 1.0], "v_mult": 2},
    ]


def _g(spec, zeta):
    kind, a = spec[0], float(spec[1])
    if kind == "le":
        return (zeta <= a).astype(float)
    if kind == "exp":
        return np.exp(-a * zeta)
    raise ValueError(f"unknown lifetime functional {kind!r}")


def prepare_rotation(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    cases = []
    mc = []
    for i, case in enumerate(cfg.params.get("cases", _rotation_cases(chain.states))):
        f = None if case.get("f") is None else chain.index(case["f"])
        if ("v" in case) == ("v_mult" in case):
            raise ValueError("each rotation case needs exactly one of v, v_mult")
        shift = f"v={case['v']:g}" if "v" in case else f"v={case['v_mult']}*zeta"
        label = f"mu(F) - mu(F o rho_v) f={'1' if f is None else '1_' + str(chain.states[f])} g={case['g'][0]}({case['g'][1]:g}) {shift}"
        cases.append(dict(case, f=f))
        mc.append(McRow(label, f"r{i}", 0.0, scale=1.0 / cfg.alpha))
    return Plan(dict(_soup_setup(cfg), cases=cases), mc)


def observe_rotation(setup, rng, size) -> dict:
    batch = _draw(setup, rng, size)
    zeta = batch.lifetimes()
    x0 = batch.state_at(0.0)
    cols = {}
    for i, case in enumerate(setup["cases"]):
        v = case["v"] if "v" in case else case["v_mult"] * zeta
        xv = batch.state_at(v, wrap=True)
        g = _g(case["g"], zeta)
        if case["f"] is None:
            diff = g - g
        else:
            diff = g * ((x0 == case["f"]).astype(float) - (xv == case["f"]).astype(float))
        cols[f"r{i}"] = batch.per_realization(diff)
    return cols


register("rotation")((prepare_rotation, observe_rotation))


# -- restriction ----------------------------------------------------------


def _default_B(states) -> list:
    n = len(states)
    if n == 1:
        return list(states)
    return list(states[: max(1, n - 1)]) if n > 2 else [states[0]]


def prepare_restriction(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    kc = killed_chain(chain, cfg.params.get("B", _default_B(chain.states)), irreducible=False)
    ut = kc.u_tilde.u
    sub_states = kc.chain.states
    sets = multisets(list(range(len(kc.B))), 2)
    mc = _moment_rows("restricted E", "r", ut, sub_states, sets, cfg.alpha)
    mc += _moment_rows("killed-chain soup E", "k", ut, sub_states, sets, cfg.alpha)
    mc.append(McRow("restriction increased a coordinate", "inc", 0.0))
    exact = [Row("killed kernel: hitting route vs inverse route", 0.0, kc.route_gap, kind="exact", tol=1e-10)]
    setup = dict(_soup_setup(cfg), B=list(kc.B), sets=sets, killed=_soup_setup(cfg, kc.chain))
    return Plan(setup, mc, exact)


def observe_restriction(setup, rng, size) -> dict:
    batch = _draw(setup, rng, size)
    B = setup["B"]
    full = batch.local_times()
    restricted = batch.restrict([setup["chain"].states[b] for b in B]).local_times()
    cols = _moment_columns("r", restricted[:, B], setup["sets"])
    cols.update(_moment_columns("k", _draw(setup["killed"], rng, size).local_times(), setup["sets"]))
    cols["inc"] = np.any(restricted > full, axis=1).astype(float)
    return cols


register("restriction")((prepare_restriction, observe_restriction))


# -- space map ------------------------------------------------------------


def prepare_spacemap(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    states = chain.states
    mapping = cfg.params.get("map") or {s: states[(i + 1) % len(states)] for i, s in enumerate(states)}
    mapping = {_label(chain, k): v for k, v in mapping.items()}
    image = relabel_chain(chain, mapping)
    u, ubar = green_matrix(chain).u, green_matrix(image).u
    fwd = [image.index(mapping[s]) for s in states]
    dev = _max_dev(ubar[np.ix_(fwd, fwd)], u)
    exact = [Row("kernel of image chain vs relabelled kernel (max abs)", 0.0, dev, kind="exact", tol=1e-12)]
    inv = np.argsort(fwd)
    sets = multisets(list(range(image.n)), 2)
    # exact values come from the original kernel at the preimages
    mc = [
        McRow(moment_label("image soup E", image.states, pts), f"s{i}",
              permanental_moment(u, [int(inv[p]) for p in pts], cfg.alpha))
        for i, pts in enumerate(sets)
    ]
    return Plan(dict(_soup_setup(cfg, image), sets=sets), mc, exact)


def _label(chain, key):
    """Config keys are strings; match them to the chain's own labels."""
    for s in chain.states:
        if s == key or str(s) == str(key):
            return s
    return key


def observe_spacemap(setup, rng, size) -> dict:
    return _moment_columns("s", _draw(setup, rng, size).local_times(), setup["sets"])


register("spacemap")((prepare_spacemap, observe_spacemap))


# -- time change ----------------------------------------------------------


def prepare_timechange(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    n = chain.n
    u = green_matrix(chain).u
    h = np.asarray(cfg.params.get("h", 1.0 + np.arange(n) if n > 1 else [2.0]), dtype=float)
    nu = cfg.params.get("nu", {chain.states[0]: 1.0 if n > 1 else 2.0})
    mc, exact = [], []

    tc = time_changed_chain(chain, h)
    exact.append(Row(f"time change h={_vec(h)}: kernel vs original (max abs)", 0.0,
                     _max_dev(green_matrix(tc).u, u), kind="exact", tol=1e-12))
    sets_h = multisets(list(range(n)), 2)
    mc += _moment_rows(f"h={_vec(h)} E", "h", u, chain.states, sets_h, cfg.alpha)

    tr = trace_chain(chain, nu)
    tr_inv = trace_chain_from_green(chain, nu)
    a = [chain.index(s) for s in tr.states]
    target = u[np.ix_(a, a)] * tr.m[None, :]
    counting = green_matrix(tr).u * tr.m[None, :]
    exact.append(Row("trace chain (Schur route): counting Green vs u nu_A (max abs)", 0.0,
                     _max_dev(counting, target), kind="exact", tol=1e-10))
    exact.append(Row("trace chain (inversion route): counting Green vs u nu_A (max abs)", 0.0,
                     _max_dev(green_matrix(tr_inv).u * tr_inv.m[None, :], target), kind="exact", tol=1e-10))
    exact.append(Row("trace chain generators: Schur vs inversion (relative max abs)", 0.0,
                     _max_dev(tr.L, tr_inv.L) / np.abs(tr.L).max(), kind="exact", tol=1e-10))
    sets_a = multisets(list(range(len(a))), 3)
    ua = u[np.ix_(a, a)]
    mc += _moment_rows("trace-chain soup E", "a", ua, tr.states, sets_a, cfg.alpha)
    setup = {"h": dict(_soup_setup(cfg, tc), sets=sets_h), "a": dict(_soup_setup(cfg, tr), sets=sets_a)}
    return Plan(setup, mc, exact)


def observe_timechange(setup, rng, size) -> dict:
    cols = {}
    for key in ("h", "a"):
        part = setup[key]
        cols.update(_moment_columns(key, _draw(part, rng, size).local_times(), part["sets"]))
    return cols


register("timechange")((prepare_timechange, observe_timechange))


# -- unit weights ---------------------------------------------------------


def prepare_unitweight(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    n = chain.n
    u = green_matrix(chain).u
    m = chain.m
    h = np.asarray(cfg.params.get("h", 1.0 + np.arange(n)), dtype=float)
    if h.shape != (n,) or np.any(h <= 0):
        raise ValueError("unit-weight density h must be positive, one entry per state")
    funcs = [("zeta", None)] + [(f"zeta L^{chain.states[y]}", y) for y in range(n)] + [("0", "zero")]
    mc = []
    for i, (name, y) in enumerate(funcs):
        if y == "zero":
            exact, triv = 0.0, 0.0
        elif y is None:
            exact = float(np.sum(m * np.diag(u)))
            triv = trivial_loop_integral(chain, lambda x, t: t)
        else:
            exact = float(sum(m[x] * q_moment(u, x, x, [y]) for x in range(n)))
            triv = trivial_loop_integral(chain, lambda x, t, y=y: t * t / m[y] if x == y else 0.0)
        mc.append(McRow(f"Campbell mu(F) F={name}", f"c{i}", exact, scale=1.0 / cfg.alpha, offset=triv))
        mc.append(McRow(f"sum_x m_x Q^xx(T F) T=1/zeta F={name}", f"z{i}", exact))
        mc.append(McRow(f"sum_x m_x Q^xx(T F) T=h(X_0)/A_zeta h={_vec(h)} F={name}", f"h{i}", exact))
    setup = dict(_soup_setup(cfg), funcs=funcs, h=h, w=m * np.diag(u))
    return Plan(setup, mc)


def _path_functional(y, lt, zeta):
    if y == "zero":
        return np.zeros_like(zeta)
    if y is None:
        return zeta
    return zeta * lt[:, y]


def observe_unitweight(setup, rng, size) -> dict:
    chain = setup["chain"]
    batch = _draw(setup, rng, size)
    loop_lt, zeta = batch.loop_local_times(), batch.lifetimes()
    qs = [sample_Q_batch(chain, x, x, size, rng) for x in range(chain.n)]
    hm = setup["h"] * chain.m
    cols = {}
    for i, (_, y) in enumerate(setup["funcs"]):
        cols[f"c{i}"] = batch.per_realization(_path_functional(y, loop_lt, zeta))
        zq = np.zeros(size)
        hq = np.zeros(size)
        for x, q in enumerate(qs):
            F = _path_functional(y, q.lt, q.zeta)
            zq += setup["w"][x] * F / q.zeta
            hq += setup["w"][x] * F * setup["h"][x] / (q.lt @ hm)
        cols[f"z{i}"] = zq
        cols[f"h{i}"] = hq
    return cols


register("unitweight")((prepare_unitweight, observe_unitweight))


# -- bridge time marginals ------------------------------------------------


def _bridge_cases(states) -> list:
    cases = [{"f": [s], "t": [0.5]} for s in states]
    if len(states) > 1:
        cases.append({"f": [states[0], states[1]], "t": [0.3, 0.7]})
        cases.append({"f": [states[0], states[0]], "t": [0.2, 0.9]})
    if len(states) > 2:
        cases.append({"f": list(states[:3]), "t": [0.2, 0.5, 1.1]})
    return cases


def prepare_bridge(cfg: ExperimentConfig) -> Plan:
    chain = cfg.chain
    cases, mc, exact, notes = [], [], [], []
    for i, case in enumerate(cfg.params.get("cases", _bridge_cases(chain.states))):
        f = chain.indices(case["f"])
        t = [float(x) for x in case["t"]]
        quad = bridge_marginal(chain, f, t, tol=BRIDGE_TOL)
        triv = trivial_bridge_term(chain, f, t)
        tag = f"f=({','.join(str(chain.states[j]) for j in f)}) t={_vec(t)}"
        mc.append(McRow(f"Campbell + trivial E1 vs quadrature {tag}", f"b{i}", quad.value,
                        scale=1.0 / cfg.alpha, offset=triv, atol=BRIDGE_TOL))
        if chain.n == 1:
            exact.append(Row(f"quadrature vs E1 closed form {tag}", triv, quad.value, kind="exact", tol=1e-6))
        notes.append(
            f"quadrature {tag}: cut at T={quad.t_cut:g}, tail bound {quad.tail_bound:.2g}, "
            f"error estimate {quad.abserr:.2g}, {quad.evaluations} evaluations"
        )
        cases.append((f, t))
    return Plan(dict(_soup_setup(cfg), cases=cases), mc, exact, notes)


def observe_bridge(setup, rng, size) -> dict:
    batch = _draw(setup, rng, size)
    cols = {}
    for i, (f, t) in enumerate(setup["cases"]):
        hit = np.ones(batch.n_loops, dtype=bool)
        for fj, tj in zip(f, t):
            hit &= batch.state_at(tj) == fj
        cols[f"b{i}"] = batch.per_realization(hit.astype(float))
    return cols


register("bridge")((prepare_bridge, observe_bridge))
