"""Pure-Python kernels; same contract as the compiled twin in ``_core.pyx``."""

import math

SKIP = 0
POOL_MAX = 1
POOL_MEAN = 2


def count_params(kinds, f1s, f2s, in_channels, num_classes):
    total = 0
    channels = in_channels
    for i in range(len(kinds)):
        if kinds[i] == SKIP:
            f1 = f1s[i]
            f2 = f2s[i]
            total += 9 * channels * f1 + f1
            total += 9 * f1 * f2 + f2
            if channels != f2:
                total += channels * f2 + f2  # 1x1 projection
            channels = f2
    total += channels * num_classes + num_classes
    return total


def surrogate_fitness(kinds, f1s, f2s, in_channels, num_classes):
    length = len(kinds)
    params = count_params(kinds, f1s, f2s, in_channels, num_classes)
    depth_term = math.exp(-((length - 8.0) ** 2) / 8.0)
    width_term = math.exp(-((math.log10(params) - 7.0) ** 2) / 0.5)
    fitness = 0.6 * depth_term + 0.4 * width_term
    return min(max(fitness, 0.0), 1.0)
