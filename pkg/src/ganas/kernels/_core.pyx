# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for genome scoring; contract mirrored by ``_pure.py``."""

from libc.math cimport exp, log10

SKIP = 0
POOL_MAX = 1
POOL_MEAN = 2


def count_params(const unsigned char[:] kinds, const int[:] f1s, const int[:] f2s,
                 int in_channels, int num_classes):
    cdef long long total = 0
    cdef long long channels = in_channels
    cdef long long f1, f2
    cdef Py_ssize_t i
    for i in range(kinds.shape[0]):
        if kinds[i] == 0:
            f1 = f1s[i]
            f2 = f2s[i]
            total += 9 * channels * f1 + f1
            total += 9 * f1 * f2 + f2
            if channels != f2:
                total += channels * f2 + f2
            channels = f2
    total += channels * num_classes + num_classes
    return total


def surrogate_fitness(const unsigned char[:] kinds, const int[:] f1s, const int[:] f2s,
                      int in_channels, int num_classes):
    cdef double length = <double> kinds.shape[0]
    cdef long long params = count_params(kinds, f1s, f2s, in_channels, num_classes)
    cdef double depth_term = exp(-((length - 8.0) ** 2) / 8.0)
    cdef double width_term = exp(-((log10(<double> params) - 7.0) ** 2) / 0.5)
    cdef double fitness = 0.6 * depth_term + 0.4 * width_term
    if fitness < 0.0:
        return 0.0
    if fitness > 1.0:
        return 1.0
    return fitness
