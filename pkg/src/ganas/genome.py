"""Variable-length genetic encoding of convolutional architectures.

A genome is an ordered sequence of layer genes. Two gene kinds exist: skip
genes (two 3x3 convolutions bridged by a residual connection) and pooling
genes (a 2x2 max or mean pooling window). The text form, e.g.
``S64.128|Pmax``, is both the serialization format and the canonical
identity used by the fitness cache.

All values here are immutable after construction; random generation takes
an explicit seeded source so nothing depends on hidden global state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from random import Random
from typing import Iterator, Union

POOL_MAX = "max"
POOL_MEAN = "mean"
POOL_KINDS = (POOL_MAX, POOL_MEAN)

DEFAULT_FEATURE_MAPS = (64, 128, 256, 512)

# Chance that a freshly drawn gene is a skip gene rather than a pooling
# gene. A network needs convolutional capacity before it needs
# downsampling, so the mix leans toward skip genes.
SKIP_GENE_BIAS = 0.7


class GenomeParseError(ValueError):
    """Raised when genome text cannot be parsed."""


@dataclass(frozen=True)
class SkipGene:
    """Two 3x3 convolutions of width ``f1`` then ``f2`` plus a residual add."""

    f1: int
    f2: int


@dataclass(frozen=True)
class PoolGene:
    """A single 2x2 pooling layer, either ``max`` or ``mean``."""

    kind: str


LayerGene = Union[SkipGene, PoolGene]


@dataclass(frozen=True)
class Genome:
    """An ordered, immutable sequence of layer genes."""

    genes: tuple[LayerGene, ...]

    def __len__(self) -> int:
        return len(self.genes)

    def __iter__(self) -> Iterator[LayerGene]:
        return iter(self.genes)

    def __getitem__(self, index):
        return self.genes[index]


def _pool_budget(height: int, width: int, pool_stride: int) -> int:
    """Largest pooling count that keeps every pooled map at least 1x1."""
    side = min(height, width)
    if pool_stride <= 1:
        return max(side - 1, 0)
    count = 0
    while side >= pool_stride:
        side //= pool_stride
        count += 1
    return count


@dataclass(frozen=True)
class SearchSpaceConfig:
    """Bounds of the architecture space genomes are drawn from.

    ``max_pools`` defaults to the largest count that cannot shrink a
    feature map below 1x1 for the configured input size and stride.
    """

    feature_maps: tuple[int, ...] = DEFAULT_FEATURE_MAPS
    max_length: int = 20
    max_pools: int | None = None
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 7
    pool_stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "feature_maps", tuple(sorted(set(self.feature_maps))))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if not self.feature_maps:
            raise ValueError("feature_maps must be non-empty")
        if any(f < 1 for f in self.feature_maps):
            raise ValueError("feature_maps must be positive integers")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ValueError("input_shape must be three positive integers (channels, height, width)")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.pool_stride < 1:
            raise ValueError("pool_stride must be >= 1")
        budget = _pool_budget(self.input_shape[1], self.input_shape[2], self.pool_stride)
        if self.max_pools is None:
            object.__setattr__(self, "max_pools", budget)
        elif self.max_pools < 0:
            raise ValueError("max_pools must be >= 0")
        elif self.pool_stride > 1 and self.max_pools > budget:
            raise ValueError(
                f"max_pools={self.max_pools} exceeds the pooling budget {budget} "
                f"for input {self.input_shape} with stride {self.pool_stride}"
            )

    def fingerprint(self) -> str:
        """Short stable digest of the config, recorded in cache files."""
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("ascii")).hexdigest()[:16]


def random_genome(cfg: SearchSpaceConfig, rng: Random) -> Genome:
    """Draw a uniform-length genome of random genes.

    Each gene is a skip gene with probability ``SKIP_GENE_BIAS``, otherwise
    a pooling gene; pooling genes beyond ``cfg.max_pools`` are replaced by
    skip genes so the draw always satisfies the genome invariants.
    """
    length = rng.randint(1, cfg.max_length)
    genes: list[LayerGene] = []
    pools = 0
    for _ in range(length):
        want_pool = rng.random() >= SKIP_GENE_BIAS
        if want_pool and pools < cfg.max_pools:
            genes.append(PoolGene(rng.choice(POOL_KINDS)))
            pools += 1
        else:
            genes.append(SkipGene(rng.choice(cfg.feature_maps), rng.choice(cfg.feature_maps)))
    return Genome(tuple(genes))


def validate(genome: Genome, cfg: SearchSpaceConfig) -> list[str]:
    """Return the list of invariant violations; empty means valid."""
    violations = []
    if len(genome) < 1:
        violations.append("length < 1")
    if len(genome) > cfg.max_length:
        violations.append(f"length {len(genome)} exceeds max_length {cfg.max_length}")
    pools = 0
    allowed = set(cfg.feature_maps)
    for i, gene in enumerate(genome):
        if isinstance(gene, SkipGene):
            if gene.f1 not in allowed:
                violations.append(f"gene {i}: f1 not in feature-map set")
            if gene.f2 not in allowed:
                violations.append(f"gene {i}: f2 not in feature-map set")
        elif isinstance(gene, PoolGene):
            pools += 1
            if gene.kind not in POOL_KINDS:
                violations.append(f"gene {i}: unknown pool kind {gene.kind!r}")
        else:
            violations.append(f"gene {i}: unknown gene type {type(gene).__name__}")
    if pools > cfg.max_pools:
        violations.append(f"pool count {pools} exceeds max_pools {cfg.max_pools}")
    return violations


def repair(genome: Genome, cfg: SearchSpaceConfig, rng: Random) -> Genome:
    """Minimally adjust a genome until it satisfies all invariants.

    Valid genomes are returned unchanged. An empty genome receives one
    random skip gene, an over-long genome is truncated, pooling genes are
    removed from the tail until the pooling cap holds, and out-of-set
    channel counts are resampled.
    """
    genes: list[LayerGene] = []
    allowed = set(cfg.feature_maps)
    changed = False
    for gene in genome:
        if isinstance(gene, SkipGene) and (gene.f1 not in allowed or gene.f2 not in allowed):
            f1 = gene.f1 if gene.f1 in allowed else rng.choice(cfg.feature_maps)
            f2 = gene.f2 if gene.f2 in allowed else rng.choice(cfg.feature_maps)
            genes.append(SkipGene(f1, f2))
            changed = True
        elif isinstance(gene, PoolGene) and gene.kind not in POOL_KINDS:
            genes.append(PoolGene(rng.choice(POOL_KINDS)))
            changed = True
        else:
            genes.append(gene)

    if not genes:
        genes = [SkipGene(rng.choice(cfg.feature_maps), rng.choice(cfg.feature_maps))]
        changed = True
    if len(genes) > cfg.max_length:
        del genes[cfg.max_length:]
        changed = True
    pools = sum(1 for g in genes if isinstance(g, PoolGene))
    for i in range(len(genes) - 1, -1, -1):
        if pools <= cfg.max_pools:
            break
        if isinstance(genes[i], PoolGene):
            del genes[i]
            pools -= 1
            changed = True

    return Genome(tuple(genes)) if changed else genome


def serialize(genome: Genome) -> str:
    """Render a genome as ASCII text: genes joined by ``|``."""
    parts = []
    for gene in genome:
        if isinstance(gene, SkipGene):
            parts.append(f"S{gene.f1}.{gene.f2}")
        else:
            parts.append(f"P{gene.kind}")
    return "|".join(parts)


def canonical_id(genome: Genome) -> str:
    """Canonical identity of a genome; equal iff gene sequences are equal."""
    return serialize(genome)


def parse(text: str) -> Genome:
    """Inverse of :func:`serialize`; raises :class:`GenomeParseError`."""
    if not text:
        raise GenomeParseError("empty genome text")
    genes: list[LayerGene] = []
    for token in text.split("|"):
        if token.startswith("S"):
            body = token[1:].split(".")
            if len(body) != 2:
                raise GenomeParseError(f"malformed skip gene {token!r}")
            try:
                f1, f2 = int(body[0]), int(body[1])
            except ValueError:
                raise GenomeParseError(f"non-integer channel count in {token!r}") from None
            if f1 < 1 or f2 < 1:
                raise GenomeParseError(f"non-positive channel count in {token!r}")
            genes.append(SkipGene(f1, f2))
        elif token.startswith("P"):
            kind = token[1:]
            if kind not in POOL_KINDS:
                raise GenomeParseError(f"unknown pool kind {token!r}")
            genes.append(PoolGene(kind))
        else:
            raise GenomeParseError(f"unknown gene tag {token!r}")
    return Genome(tuple(genes))
