"""Build script for the optional compiled kernels.

The package works without the extension; wavetx._kernels falls back to a
NumPy implementation when the compiled module is absent. Any failure here
(no Cython, no compiler) therefore degrades to a warning, not an error.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "wavetx._kernels._core",
                sources=["src/wavetx/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - depends on build host
    print(f"wavetx: skipping compiled kernels ({exc}); using NumPy fallback", file=sys.stderr)

setup(ext_modules=ext_modules)
