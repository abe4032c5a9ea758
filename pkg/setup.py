"""Build hook: compiles the optional Cython kernel core when possible.

The package is fully functional without the extension (a NumPy/SciPy
fallback is selected at import time), so any build failure here downgrades
to a pure-Python install instead of aborting.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/rfat/kernels/_core.pyx"],
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [numpy.get_include()]
    for ext in ext_modules:
        ext.include_dirs = include_dirs
        ext.define_macros = [("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")]
except Exception as exc:  # pragma: no cover - depends on build host
    warnings.warn(f"building without the compiled kernel core: {exc}")
    ext_modules = []

setup(ext_modules=ext_modules)
