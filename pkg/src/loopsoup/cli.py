"""Command-line front end: ``loopsoup {validate, green, sample-soup, run, report}``.

Exit status is 0 on success (for ``run``: every experiment passed), 1 when
some experiment failed and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .chain import ValidatedChain, green_matrix, resolvent_matrix
from .config import CONFIG_SCHEMA_VERSION, named_chains, parse_config
from .errors import LoopSoupError, SchemaError
from .harness import EXPERIMENTS, Z_MAX, ExperimentReport, run_suite
from .loops import build_loop_table
from .soup import realizations_to_jsonl, sample_soup_batch, spawn_rng

REPORT_SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loopsoup", description="Loop soups of finite Markov chains: kernels, sampling, verification.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check chains and print lambda, the spectral bound and u")
    v.add_argument("--config", required=True, help="config document or bare chain JSON")
    v.add_argument("--chain", help="only this named chain")

    g = sub.add_parser("green", help="write the Green kernel (or resolvent) as CSV")
    g.add_argument("--config", required=True)
    g.add_argument("--chain", help="named chain (required if the document has several)")
    g.add_argument("--beta", type=float, help="resolvent parameter; omit for the Green kernel")
    g.add_argument("--output", help="file to write; default stdout")

    s = sub.add_parser("sample-soup", help="write soup realizations as JSON lines")
    s.add_argument("--config", required=True)
    s.add_argument("--chain")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("-n", "--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps-tail", type=float, default=1e-10)
    s.add_argument("--output", help="file to write; default stdout")

    r = sub.add_parser("run", help="run the experiment suite and write reports")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir", default="reports")
    r.add_argument("--seed", type=int, help="override every experiment seed")
    r.add_argument("--filter", nargs="+", metavar="EXPERIMENT", help=f"experiment kinds to run ({', '.join(EXPERIMENTS)})")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--z-max", type=float, default=Z_MAX)

    rp = sub.add_parser("report", help="pretty-print a stored report.json")
    rp.add_argument("path")
    return p


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from exc


def _pick_chain(text: str, name: Optional[str]) -> tuple[str, ValidatedChain]:
    chains = named_chains(text)
    if name is None:
        if len(chains) != 1:
            raise SchemaError(f"several chains ({', '.join(chains)}); choose one with --chain", "$.chains")
        return next(iter(chains.items()))
    if name not in chains:
        raise SchemaError(f"unknown chain {name!r}", "$.chains")
    return name, chains[name]


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _fmt_matrix(a: np.ndarray, labels) -> str:
    width = max(12, max(len(str(s)) for s in labels) + 1)
    head = " " * width + "".join(f"{str(s):>{width}}" for s in labels)
    rows = [f"{str(s):>{width}}" + "".join(f"{v:>{width}.8g}" for v in row) for s, row in zip(labels, a)]
    return "\n".join([head] + rows)


def cmd_validate(args) -> int:
    text = _read(args.config)
    chains = named_chains(text)
    if args.chain is not None:
        chains = dict([_pick_chain(text, args.chain)])
    for name, chain in chains.items():
        table = build_loop_table(chain)
        G = chain.G
        residual = float(np.abs(chain.neg_L @ G - np.eye(chain.n)).sum(axis=1).max())
        print(f"chain {name}: {chain.n} states, valid")
        print("  lambda:", " ".join(f"{s}={v:.8g}" for s, v in zip(chain.states, chain.lam)))
        print(f"  spectral bound sigma_hat = {table.sigma_hat:.8g} (loop lengths up to {table.N_max})")
        print(f"  residual ||(-L)G - I||_inf = {residual:.3g}")
        print("  u:")
        print("\n".join("    " + line for line in _fmt_matrix(green_matrix(chain).u, chain.states).splitlines()))
    return EXIT_OK


def cmd_green(args) -> int:
    _, chain = _pick_chain(_read(args.config), args.chain)
    kernel = green_matrix(chain) if args.beta is None else resolvent_matrix(chain, args.beta)
    _emit(kernel.to_csv(), args.output)
    return EXIT_OK


def sample_realizations(chain: ValidatedChain, alpha: float, samples: int, seed: int, eps_tail: float = 1e-10):
    """The realizations written by ``sample-soup`` for these arguments."""
    table = build_loop_table(chain, eps_tail, alpha)
    batch = sample_soup_batch(chain, alpha, table, spawn_rng(seed, "sample-soup"), samples)
    return list(batch.realizations())


def cmd_sample_soup(args) -> int:
    if args.samples < 0:
        raise SchemaError("--samples must be nonnegative")
    _, chain = _pick_chain(_read(args.config), args.chain)
    reals = sample_realizations(chain, args.alpha, args.samples, args.seed, args.eps_tail)
    _emit(realizations_to_jsonl(reals), args.output)
    return EXIT_OK


def report_document(reports: Sequence[ExperimentReport], config_text: str, seed: Optional[int], z_max: float) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config_schema_version": CONFIG_SCHEMA_VERSION,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed_override": seed,
        "z_max": z_max,
        "passed": all(r.passed for r in reports),
        "experiments": [r.to_dict() for r in reports],
    }


def _cell(x, fmt="{:.6g}") -> str:
    return "-" if x is None else fmt.format(x)


def format_text(doc: dict) -> str:
    out = []
    for rep in doc["experiments"]:
        status = "PASS" if rep["passed"] else "FAIL"
        out.append(f"== {rep['name']} [{status}]  chain={rep['chain']} alpha={rep['alpha']:g} "
                   f"samples={rep['samples']} seed={rep['seed']}")
        if rep["error"]:
            out.append(f"   error: {rep['error']}")
        rows = [r for r in rep["rows"] if r["label"] != "error"]
        if rows:
            width = max(len(r["label"]) for r in rows)
            out.append(f"   {'quantity':<{width}}  {'exact':>13} {'estimate':>13} {'stderr':>10} {'z / tol':>9}  ok")
            for r in rows:
                dev = _cell(r["z"], "{:+.2f}") if r["kind"] == "mc" else f"<={r['tol']:.0e}"
                out.append(
                    f"   {r['label']:<{width}}  {_cell(r['exact']):>13} {_cell(r['estimate']):>13} "
                    f"{_cell(r['stderr'], '{:.3g}'):>10} {dev:>9}  {'yes' if r['passed'] else 'NO'}"
                )
        for note in rep["notes"]:
            out.append(f"   note: {note}")
    n_pass = sum(r["passed"] for r in doc["experiments"])
    out.append(f"{n_pass}/{len(doc['experiments'])} experiments passed")
    return "\n".join(out) + "\n"


def rows_csv(doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "label", "kind", "exact", "estimate", "stderr", "z", "tol", "passed"])
    for rep in doc["experiments"]:
        for r in rep["rows"]:
            w.writerow([rep["name"], r["label"], r["kind"]] + [
                "" if r[k] is None else repr(r[k]) for k in ("exact", "estimate", "stderr", "z", "tol")
            ] + [r["passed"]])
    return buf.getvalue()


def cmd_run(args) -> int:
    if args.workers < 1:
        raise SchemaError("--workers must be at least 1")
    unknown = sorted(set(args.filter or []) - set(EXPERIMENTS))
    if unknown:
        raise SchemaError(f"unknown experiment(s) in --filter: {', '.join(unknown)}")
    text = _read(args.config)
    configs = parse_config(text)
    if args.filter:
        configs = [c for c in configs if c.experiment in args.filter]
    if args.seed is not None:
        for c in configs:
            c.seed = args.seed
    try:
        os.makedirs(args.output_dir, exist_ok=True)
        probe = os.path.join(args.output_dir, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise SchemaError(f"output directory {args.output_dir!r} is not writable: {exc.strerror}") from exc
    reports = run_suite(configs, z_max=args.z_max, workers=args.workers)
    doc = report_document(reports, text, args.seed, args.z_max)
    text_report = format_text(doc)
    files = {
        "report.json": json.dumps(doc, indent=2, sort_keys=True) + "\n",
        "report.txt": text_report,
        "rows.csv": rows_csv(doc),
        "timings.json": json.dumps({r.name: r.runtime for r in reports}, indent=2) + "\n",
    }
    for fname, content in files.items():
        _emit(content, os.path.join(args.output_dir, fname))
    sys.stdout.write(text_report)
    return EXIT_OK if doc["passed"] else EXIT_FAIL


def cmd_report(args) -> int:
    try:
        doc = json.loads(_read(args.path))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{args.path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise SchemaError(f"{args.path}: unsupported report schema version", "$.schema_version")
    sys.stdout.write(format_text(doc))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "green": cmd_green,
    "sample-soup": cmd_sample_soup,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except LoopSoupError as exc:
        print(f"loopsoup {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
