"""Build the optional Cython kernels; the package imports fine without them."""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("IGCL_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "igcl._kernels_cy",
                    ["src/igcl/_kernels_cy.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
