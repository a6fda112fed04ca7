from setuptools import Extension, setup

# The compiled kernel is an optional speedup; the package falls back to
# the pure-Python implementation when the extension is absent.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("ganas.kernels._core", ["src/ganas/kernels/_core.pyx"])],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
