"""Build script for the compiled nearest-neighbor kernel.

The extension is optional: if Cython or a C compiler is unavailable the
package still installs and falls back to the NumPy backend at import time.
"""

import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None and os.environ.get("PATCHLENS_NO_EXT") != "1":
    extensions = cythonize(
        [
            Extension(
                "patchlens.kernels._nn",
                ["src/patchlens/kernels/_nn.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=extensions)
