"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-Python kernel backend is
selected at import time), so a missing Cython or C toolchain only costs
speed, never functionality.

Numerical note: the extension must stay bit-for-bit compatible with the
pure-Python backend, so FP contraction (fused multiply-add) is disabled
and no -ffast-math style flags are allowed.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "cilbench._kernels._fastk",
                ["src/cilbench/_kernels/_fastk.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
