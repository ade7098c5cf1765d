"""Build script: compiles the Cython simulation kernel when possible.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed extension build should not block installation.
Set GAITFORGE_REQUIRE_EXT=1 to turn a build failure into a hard error.
"""

import os

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "gaitforge._core._kernel",
        ["src/gaitforge/_core/_kernel.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-march=native"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level="3")
except Exception:
    if os.environ.get("GAITFORGE_REQUIRE_EXT") == "1":
        raise

setup(ext_modules=ext_modules)
