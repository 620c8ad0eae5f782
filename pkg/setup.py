"""Build script for the optional compiled kernel backend.

The package is pure Python plus one Cython extension holding the dense-kernel
hot loops. The extension is marked optional: if Cython or a C compiler is
missing the install still succeeds and the package falls back to the Python
kernels at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext = Extension(
        "mmdesign._kernels_cy",
        sources=["src/mmdesign/_kernels_cy.pyx"],
        extra_compile_args=["-O3"],
    )
    ext.optional = True
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
