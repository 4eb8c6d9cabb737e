"""JSON configuration documents: schema, validation and expansion into experiment configs."""

from __future__ import annotations

import json
from typing import Any

import jsonschema

from .chain import ChainSpec, ValidatedChain, validate_chain
from .errors import BadChain, SchemaError, UnknownExperiment
from .harness.core import EXPERIMENTS, ExperimentConfig

CONFIG_SCHEMA_VERSION = 1

_NUMBER_LIST = {"type": "array", "items": {"type": "number"}}
_LABEL = {"type": ["string", "integer"]}

CHAIN_SCHEMA = {
    "type": "object",
    "required": ["states", "q", "k", "m"],
    "additionalProperties": False,
    "properties": {
        "states": {"type": "array", "items": _LABEL, "minItems": 1},
        "q": {"type": "array", "items": _NUMBER_LIST},
        "k": _NUMBER_LIST,
        "m": _NUMBER_LIST,
    },
}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "loop soup experiment suite",
    "type": "object",
    "required": ["experiments"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": CONFIG_SCHEMA_VERSION},
        "chains": {"type": "object", "additionalProperties": CHAIN_SCHEMA},
        "defaults": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1000},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "alpha": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"$ref": "#/$defs/alphas"}]},
                "eps_tail": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "experiments": {"type": "array", "items": {"$ref": "#/$defs/experiment"}},
    },
    "$defs": {
        "alphas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "experiment": {
            "type": "object",
            "required": ["experiment", "chain"],
            "additionalProperties": False,
            "properties": {
                "experiment": {"enum": list(EXPERIMENTS)},
                "name": {"type": "string", "minLength": 1},
                "chain": {"oneOf": [{"type": "string"}, CHAIN_SCHEMA]},
                "alpha": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"$ref": "#/$defs/alphas"}]},
                "samples": {"type": "integer", "minimum": 1000},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "eps_tail": {"type": "number", "exclusiveMinimum": 0},
                "params": {"type": "object"},
            },
        },
    },
}

DEFAULTS = {"samples": 100_000, "seed": 0, "alpha": 1.0, "eps_tail": 1e-10}


def json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _schema_check(doc) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is None:
        return
    path = json_path(error.absolute_path)
    if error.validator == "enum" and list(error.absolute_path)[-1:] == ["experiment"]:
        raise UnknownExperiment(f"unknown experiment {error.instance!r}; expected one of {', '.join(EXPERIMENTS)}", path)
    raise SchemaError(error.message, path)


def _chain(doc: dict, path: str) -> ValidatedChain:
    try:
        return validate_chain(ChainSpec.from_dict(doc))
    except ValueError as exc:  # ChainError, or ragged arrays rejected by numpy
        entry = getattr(exc, "entry", None)
        where = f"{path}.{entry}" if entry else path
        raise BadChain(f"{type(exc).__name__}: {exc}", where) from exc


def parse_config(text: str) -> list[ExperimentConfig]:
    """Validate a JSON document and expand it into one config per (experiment, alpha).

    Named chains are validated once and shared.  Error messages carry a
    JSON path to the offending entry.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    _schema_check(doc)
    defaults = dict(DEFAULTS, **doc.get("defaults", {}))
    chains: dict[str, ValidatedChain] = {}
    configs: list[ExperimentConfig] = []
    seen: dict[str, str] = {}
    for i, entry in enumerate(doc["experiments"]):
        path = f"$.experiments[{i}]"
        ref = entry["chain"]
        if isinstance(ref, str):
            if ref not in doc.get("chains", {}):
                raise SchemaError(f"unknown chain {ref!r}", f"{path}.chain")
            if ref not in chains:
                chains[ref] = _chain(doc["chains"][ref], f"$.chains.{ref}")
            chain, chain_name = chains[ref], ref
        else:
            chain, chain_name = _chain(ref, f"{path}.chain"), f"inline{i}"
        alphas = entry.get("alpha", defaults["alpha"])
        alphas = alphas if isinstance(alphas, list) else [alphas]
        base = entry.get("name", f"{entry['experiment']}/{chain_name}")
        for a in alphas:
            name = f"{base}/alpha={a:g}"
            if name in seen:
                raise SchemaError(f"duplicate experiment name {name!r} (also at {seen[name]})", path)
            seen[name] = path
            configs.append(
                ExperimentConfig(
                    name=name,
                    experiment=entry["experiment"],
                    chain=chain,
                    alpha=float(a),
                    samples=int(entry.get("samples", defaults["samples"])),
                    seed=int(entry.get("seed", defaults["seed"])),
                    chain_name=chain_name,
                    params=dict(entry.get("params", {})),
                    eps_tail=float(entry.get("eps_tail", defaults["eps_tail"])),
                )
            )
    return configs


def named_chains(text: str) -> dict[str, ValidatedChain]:
    """Every chain under ``chains`` in a config document, validated."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    if not isinstance(doc, dict):
        raise SchemaError("document must be an object")
    if {"states", "q", "k", "m"} <= set(doc):
        return {"chain": _chain(doc, "$")}
    if "experiments" in doc:
        _schema_check(doc)
    raw = doc.get("chains", {})
    if not raw:
        raise SchemaError("no chains found", "$.chains")
    return {name: _chain(c, f"$.chains.{name}") for name, c in raw.items()}
