"""Operator entry point.

Subcommands:

    ganas search --config PATH [--seed N] [--resume PATH]
    ganas decode --genome TEXT --input-shape CxHxW --classes N --format dot|json
    ganas cache-stats --cache PATH

The CLI is a thin shell: every behaviour is a library call plus
formatting. Configuration is a JSON document with strict unknown-key
rejection; absent keys fall back to the reference defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

from ganas import cache as cache_mod
from ganas import evolution, graph
from ganas.evaluators import (
    SurrogateEvaluator,
    TrainingBudget,
    WorkerConnection,
    WorkerEvaluator,
)
from ganas.genome import GenomeParseError, SearchSpaceConfig, parse, serialize

WORKER_ENV_VAR = "GANAS_WORKER"

_SEARCH_SPACE_KEYS = {
    "feature_maps": "feature_maps",
    "max_length": "max_length",
    "max_pools": "max_pools",
    "input_shape": "input_shape",
    "num_classes": "num_classes",
    "pool_stride": "pool_stride",
}
_EVOLUTION_KEYS = {
    "pop_size": "pop_size",
    "generations": "generations",
    "p_c": "p_crossover",
    "p_m": "p_mutation",
    "l_m": "mutation_ops",
    "p_l": "mutation_probs",
    "elitism_count": "elitism_count",
    "seed": "seed",
}
_RUN_KEYS = {"epochs", "dataset", "evaluator", "cache_path", "checkpoint_path", "output_dir"}


class ConfigError(Exception):
    pass


@dataclass
class EvaluatorSpec:
    kind: str = "surrogate"  # surrogate | external
    command: str | None = None
    address: str | None = None
    timeout: float = 3600.0
    deterministic: bool | None = None


@dataclass
class RunConfig:
    search_space: SearchSpaceConfig
    params: evolution.EvolutionParams
    evaluator: EvaluatorSpec
    epochs: int = 600
    dataset: dict | None = None
    cache_path: str | None = None
    checkpoint_path: str | None = None
    output_dir: str = "search-output"


def load_config(path: str) -> RunConfig:
    """Load and validate a run configuration, applying defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_doc(doc)


def config_from_doc(doc: dict) -> RunConfig:
    known = set(_SEARCH_SPACE_KEYS) | set(_EVOLUTION_KEYS) | _RUN_KEYS
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    space_kwargs = {}
    for key, attr in _SEARCH_SPACE_KEYS.items():
        if key in doc and doc[key] is not None:
            value = doc[key]
            if key in ("feature_maps", "input_shape"):
                value = tuple(value)
            space_kwargs[attr] = value
    evo_kwargs = {}
    for key, attr in _EVOLUTION_KEYS.items():
        if key in doc and doc[key] is not None:
            value = doc[key]
            if key in ("l_m", "p_l"):
                value = tuple(value)
            evo_kwargs[attr] = value
    try:
        search_space = SearchSpaceConfig(**space_kwargs)
        params = evolution.EvolutionParams(**evo_kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    epochs = doc.get("epochs", 600)
    if not isinstance(epochs, int) or epochs < 1:
        raise ConfigError(f"epochs must be a positive integer, got {epochs!r}")
    dataset = doc.get("dataset")
    if dataset is not None and not isinstance(dataset, dict):
        raise ConfigError("dataset must be an object or null")

    evaluator = _parse_evaluator_spec(doc.get("evaluator", "surrogate"))
    return RunConfig(
        search_space=search_space,
        params=params,
        evaluator=evaluator,
        epochs=epochs,
        dataset=dataset,
        cache_path=doc.get("cache_path"),
        checkpoint_path=doc.get("checkpoint_path"),
        output_dir=doc.get("output_dir", "search-output"),
    )


def _parse_evaluator_spec(raw) -> EvaluatorSpec:
    if isinstance(raw, str):
        raw = {"type": raw}
    if not isinstance(raw, dict):
        raise ConfigError("evaluator must be a string or an object")
    unknown = sorted(set(raw) - {"type", "command", "address", "timeout", "deterministic"})
    if unknown:
        raise ConfigError(f"unknown evaluator keys: {', '.join(unknown)}")
    kind = raw.get("type", "surrogate")
    if kind not in ("surrogate", "external"):
        raise ConfigError(f"evaluator type must be surrogate or external, got {kind!r}")
    spec = EvaluatorSpec(
        kind=kind,
        command=raw.get("command"),
        address=raw.get("address"),
        timeout=float(raw.get("timeout", 3600.0)),
        deterministic=raw.get("deterministic"),
    )
    if spec.kind == "external" and not spec.command and not spec.address:
        spec.command = os.environ.get(WORKER_ENV_VAR)
        if not spec.command:
            raise ConfigError(
                "external evaluator needs a command or address "
                f"(or set ${WORKER_ENV_VAR})"
            )
    return spec


def build_evaluator(config: RunConfig):
    spec = config.evaluator
    if spec.kind == "surrogate":
        return SurrogateEvaluator(config.search_space)
    if spec.address:
        host, _, port = spec.address.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"worker address must be host:port, got {spec.address!r}")
        connection = WorkerConnection.from_address(host, int(port))
    else:
        connection = WorkerConnection.from_command(spec.command)
    deterministic = bool(spec.deterministic) if spec.deterministic is not None else False
    return WorkerEvaluator(connection, timeout=spec.timeout, deterministic=deterministic)


def cmd_search(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config.params = dataclasses.replace(config.params, seed=args.seed)

    try:
        evaluator = build_evaluator(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    fingerprint = config.search_space.fingerprint()
    strict = evaluator.deterministic
    if config.cache_path and os.path.exists(config.cache_path):
        fitness_cache = cache_mod.restore(config.cache_path, expected_fingerprint=fingerprint,
                                          strict=strict)
    else:
        fitness_cache = cache_mod.FitnessCache(fingerprint=fingerprint, strict=strict)

    budget = TrainingBudget(epochs=config.epochs, dataset=config.dataset)

    def progress(record):
        print(
            f"gen={record.generation} best={record.best_fitness:.6f} "
            f"hits={record.cache_hits} misses={record.cache_misses}",
            flush=True,
        )

    os.makedirs(config.output_dir, exist_ok=True)
    checkpoint_path = config.checkpoint_path or os.path.join(config.output_dir, "checkpoint.json")
    try:
        result = evolution.run_search(
            config.search_space, config.params, evaluator, fitness_cache,
            budget=budget, checkpoint_path=checkpoint_path,
            cache_path=config.cache_path, resume_from=args.resume,
            progress=progress,
        )
    except evolution.EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.checkpoint_path:
            print(f"resumable checkpoint kept at {exc.checkpoint_path}", file=sys.stderr)
        return 1
    finally:
        if hasattr(evaluator, "close"):
            evaluator.close()

    best_graph = graph.decode(result.best.genome, config.search_space)
    _write(os.path.join(config.output_dir, "best_genome.txt"),
           serialize(result.best.genome) + "\n")
    _write(os.path.join(config.output_dir, "best_architecture.json"),
           graph.render(best_graph, "json"))
    _write(os.path.join(config.output_dir, "history.json"), result.history.to_json())
    if config.cache_path:
        fitness_cache.persist(config.cache_path)
    print(f"best={serialize(result.best.genome)} fitness={result.best.fitness:.6f}")
    return 0


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValueError(f"input shape must be CxHxW, got {text!r}")
    return tuple(int(p) for p in parts)


def cmd_decode(args) -> int:
    try:
        genome = parse(args.genome)
        shape = _parse_shape(args.input_shape)
        # channel widths come from the genome itself here; the feature-map
        # set is a search-space concern, not a decoding one
        widths = {f for g in genome for f in (getattr(g, "f1", None), getattr(g, "f2", None))}
        widths.discard(None)
        cfg = SearchSpaceConfig(
            feature_maps=tuple(widths) or (64,),
            max_length=max(len(genome), 1),
            input_shape=shape,
            num_classes=args.classes,
        )
        decoded = graph.decode(genome, cfg)
        sys.stdout.write(graph.render(decoded, args.format))
        print(
            f"layers={graph.count_layers(genome)} params={graph.count_params(decoded)}",
            file=sys.stderr,
        )
    except (GenomeParseError, graph.DecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_cache_stats(args) -> int:
    try:
        fitness_cache = cache_mod.restore(args.cache)
    except (OSError, cache_mod.CacheFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    values = sorted(fitness_cache.entries.values())
    if not values:
        print("entries=0")
        return 0
    mean = sum(values) / len(values)
    print(
        f"entries={len(values)} fitness_min={values[0]:.6f} "
        f"fitness_mean={mean:.6f} fitness_max={values[-1]:.6f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ganas",
        description="Genetic-algorithm search over variable-length CNN architectures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="run an architecture search")
    p_search.add_argument("--config", required=True, help="JSON run configuration")
    p_search.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_search.add_argument("--resume", default=None, help="resume from a checkpoint file")
    p_search.set_defaults(func=cmd_search)

    p_decode = sub.add_parser("decode", help="decode a genome to DOT or JSON")
    p_decode.add_argument("--genome", required=True, help="genome text, e.g. S64.128|Pmax")
    p_decode.add_argument("--input-shape", default="3x32x32", help="CxHxW")
    p_decode.add_argument("--classes", type=int, default=7)
    p_decode.add_argument("--format", choices=("dot", "json"), default="dot")
    p_decode.set_defaults(func=cmd_decode)

    p_stats = sub.add_parser("cache-stats", help="summarize a fitness cache file")
    p_stats.add_argument("--cache", required=True, help="cache file path")
    p_stats.set_defaults(func=cmd_cache_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
