"""Global fitness cache: genome identity -> fitness, persisted as ndjson.

The cache is write-once per identity. A differing fitness for a known
identity means the evaluator broke its determinism contract, which is an
error by default; stochastic evaluators can downgrade the conflict to
keep-first with a warning.

File format: UTF-8, one JSON object per line. The first line is a header
record carrying a format tag and an optional search-space fingerprint;
every following line is ``{"id": "<genome text>", "fitness": <real>}``.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

_HEADER_FORMAT = "ganas-fitness-cache"
_HEADER_VERSION = 1


class CacheConflictError(Exception):
    """Same identity re-inserted with a different fitness."""


class CacheFormatError(Exception):
    """Cache file is malformed or truncated."""


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    inserts: int = 0


@dataclass
class FitnessCache:
    """Thread-safe map from genome identity to fitness in [0, 1]."""

    fingerprint: str | None = None
    strict: bool = True
    entries: dict[str, float] = field(default_factory=dict)
    stats: CacheStats = field(default_factory=CacheStats)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, genome_id: str) -> float | None:
        with self._lock:
            fitness = self.entries.get(genome_id)
            if fitness is None:
                self.stats.misses += 1
            else:
                self.stats.hits += 1
            return fitness

    def insert(self, genome_id: str, fitness: float) -> None:
        if not 0.0 <= fitness <= 1.0:
            raise ValueError(f"fitness {fitness} outside [0, 1] for {genome_id!r}")
        with self._lock:
            existing = self.entries.get(genome_id)
            if existing is None:
                self.entries[genome_id] = fitness
                self.stats.inserts += 1
            elif existing != fitness:
                if self.strict:
                    raise CacheConflictError(
                        f"{genome_id!r} already cached with fitness {existing}, "
                        f"refusing to overwrite with {fitness}"
                    )
                log.warning(
                    "keeping first fitness %s for %r, ignoring %s",
                    existing, genome_id, fitness,
                )

    def persist(self, path: str) -> None:
        """Write a consistent snapshot; atomic via rename."""
        with self._lock:
            snapshot = list(self.entries.items())
            fingerprint = self.fingerprint
        header = {"format": _HEADER_FORMAT, "version": _HEADER_VERSION,
                  "fingerprint": fingerprint}
        tmp = f"{path}.tmp"
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(header, sort_keys=True) + "\n")
                for genome_id, fitness in snapshot:
                    fh.write(json.dumps({"id": genome_id, "fitness": fitness}) + "\n")
            os.replace(tmp, path)
        except OSError as exc:
            raise OSError(f"cannot persist cache to {path}: {exc}") from exc


def restore(path: str, expected_fingerprint: str | None = None,
            strict: bool = True) -> FitnessCache:
    """Load a cache file written by :meth:`FitnessCache.persist`.

    Stats start from zero. When ``expected_fingerprint`` is given, a file
    recorded under a different search-space fingerprint is rejected.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read cache from {path}: {exc}") from exc
    if not lines:
        raise CacheFormatError(f"{path}: empty cache file, missing header")
    header = _parse_line(path, 1, lines[0])
    if header.get("format") != _HEADER_FORMAT:
        raise CacheFormatError(f"{path}: not a fitness cache file")
    fingerprint = header.get("fingerprint")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CacheFormatError(
            f"{path}: cache fingerprint {fingerprint!r} does not match "
            f"current search space {expected_fingerprint!r}"
        )
    cache = FitnessCache(fingerprint=fingerprint, strict=strict)
    for lineno, line in enumerate(lines[1:], start=2):
        record = _parse_line(path, lineno, line)
        if "id" not in record or "fitness" not in record:
            raise CacheFormatError(f"{path}:{lineno}: record missing id or fitness")
        genome_id, fitness = record["id"], record["fitness"]
        if not isinstance(genome_id, str) or not isinstance(fitness, (int, float)):
            raise CacheFormatError(f"{path}:{lineno}: malformed record types")
        if not 0.0 <= fitness <= 1.0:
            raise CacheFormatError(f"{path}:{lineno}: fitness {fitness} outside [0, 1]")
        cache.entries[genome_id] = float(fitness)
    return cache


def _parse_line(path: str, lineno: int, line: str) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CacheFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from None
    if not isinstance(record, dict):
        raise CacheFormatError(f"{path}:{lineno}: expected a JSON object")
    return record
