"""Benchmark the compiled genome-scoring kernel against the pure-Python twin.

Usage: python benchmarks/bench_kernels.py [--genomes N] [--repeats R]

Scores a fixed batch of random genomes with both implementations and
reports per-call latency. The compiled kernel is what the surrogate
evaluator sits on during a search, so this is the engine's hot loop.
"""

import argparse
import time
from random import Random

from ganas import kernels
from ganas.genome import SearchSpaceConfig, random_genome
from ganas.kernels import _pure


def bench(impl, packed, in_channels, num_classes, repeats):
    start = time.perf_counter()
    for _ in range(repeats):
        for kinds, f1s, f2s in packed:
            impl.surrogate_fitness(kinds, f1s, f2s, in_channels, num_classes)
    elapsed = time.perf_counter() - start
    return elapsed / (repeats * len(packed))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--genomes", type=int, default=2000)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    cfg = SearchSpaceConfig()
    rng = Random(0)
    packed = [kernels.pack(random_genome(cfg, rng)) for _ in range(args.genomes)]
    in_channels, num_classes = cfg.input_shape[0], cfg.num_classes

    pure_s = bench(_pure, packed, in_channels, num_classes, args.repeats)
    print(f"pure python : {pure_s * 1e6:9.3f} us/genome")

    if kernels.BACKEND == "compiled":
        from ganas.kernels import _core

        compiled_s = bench(_core, packed, in_channels, num_classes, args.repeats)
        print(f"compiled    : {compiled_s * 1e6:9.3f} us/genome")
        print(f"speedup     : {pure_s / compiled_s:9.1f}x")
    else:
        print("compiled    : extension not built; install with Cython to compare")


if __name__ == "__main__":
    main()
