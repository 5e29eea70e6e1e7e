"""Build script: compiles the optional jet-evaluation extension.

The package works without the extension (a pure NumPy fallback is selected
at import time); building it just makes the hot kernels much faster.  If
Cython or a C compiler is unavailable the extension is skipped silently.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "nullflow._tape_cy",
                ["src/nullflow/_tape_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
