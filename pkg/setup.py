"""Build the Cython tree kernel. Metadata lives in pyproject.toml.

Set AIPWLAB_NO_EXT=1 to skip the extension; the package then runs on the
NumPy fallback.
"""

import os

import numpy as np
from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
if not os.environ.get("AIPWLAB_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "aipwlab.forest._tree",
                [os.path.join("src", "aipwlab", "forest", "_tree.pyx")],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # bitwise agreement with the NumPy fallback needs IEEE ordering
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
