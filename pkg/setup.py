"""Build script: compiles the fsmfg._fastcore Cython extension.

The package works without the extension (the pure-numpy backend takes
over); set FSMFG_SKIP_EXT=1 to skip compilation explicitly.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("FSMFG_SKIP_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension(
                "fsmfg._fastcore",
                ["src/fsmfg/_fastcore.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )],
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "language_level": "3",
            },
        )
    except ImportError:
        print("Cython or numpy unavailable; building without the compiled core")
        ext_modules = []

setup(ext_modules=ext_modules)
