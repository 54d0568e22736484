"""Build script for the optional compiled Monte Carlo core.

The package is fully functional without the extension: chaingrad.mc falls
back to pure-Python loops when `chaingrad.mc._loops` is missing.  Set
CHAINGRAD_NO_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CHAINGRAD_NO_EXT"):
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "chaingrad.mc._loops",
                ["src/chaingrad/mc/_loops.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
