"""Build script for the optional Cython kernels.

The package works without them; ``chattymaps._kernels`` falls back to the
numpy implementation when the extension is missing.
"""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CHATTYMAPS_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not installed; building pure-Python package only")
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "chattymaps._speedups",
                    ["src/chattymaps/_speedups.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
