"""Build script for the optional compiled scan kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile is tolerated rather than fatal.
"""

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "rawburst.kernels._scan_cy",
        sources=["src/rawburst/kernels/_scan_cy.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


try:
    setup(ext_modules=_extensions())
except SystemExit:
    # Retry as pure Python so a missing toolchain does not block install.
    setup(ext_modules=[])
