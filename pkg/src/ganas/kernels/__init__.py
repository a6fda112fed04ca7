"""Genome-scoring kernels.

The compiled extension is preferred when present; otherwise the
pure-Python twin is used. ``BACKEND`` names the active implementation.
Both expose ``count_params`` and ``surrogate_fitness`` over a packed gene
representation (see :func:`pack`).
"""

from array import array

from ganas.genome import Genome, PoolGene, SkipGene

try:
    from ganas.kernels import _core as _impl

    BACKEND = "compiled"
except ImportError:  # extension not built; fall back to pure Python
    from ganas.kernels import _pure as _impl

    BACKEND = "pure"

SKIP = 0
POOL_MAX = 1
POOL_MEAN = 2

count_params = _impl.count_params
surrogate_fitness = _impl.surrogate_fitness


def pack(genome: Genome) -> tuple[array, array, array]:
    """Pack a genome into the flat arrays the kernels operate on."""
    kinds = array("B", bytes(len(genome)))
    f1s = array("i", [0]) * len(genome)
    f2s = array("i", [0]) * len(genome)
    for i, gene in enumerate(genome):
        if isinstance(gene, SkipGene):
            kinds[i] = SKIP
            f1s[i] = gene.f1
            f2s[i] = gene.f2
        elif isinstance(gene, PoolGene):
            kinds[i] = POOL_MAX if gene.kind == "max" else POOL_MEAN
        else:
            raise TypeError(f"unknown gene type {type(gene).__name__}")
    return kinds, f1s, f2s
