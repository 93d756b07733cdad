"""Build script for the optional Cython stencil kernel.

The extension is marked optional: if no C compiler is available the install
still succeeds and dcpa.kernels falls back to the numpy implementation.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "dcpa.kernels._stencil",
        ["src/dcpa/kernels/_stencil.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
