"""Build script for the optional compiled kernel extension.

The package works without the extension (pure-Python kernels are selected at
import time); building it just makes the hot per-step loops much faster.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "cavshield.kernels._speedups",
                ["src/cavshield/kernels/_speedups.pyx"],
                # -ffp-contract=off keeps C arithmetic bit-identical to the
                # pure-Python kernels (no FMA contraction).
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
