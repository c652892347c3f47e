"""Build script: compiles the optional Cython codec kernels.

The package works without the extension (a numpy fallback is selected at
import time); the extension just makes fake-quantized training a lot faster.
Build in place with:  python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fp4lab.fpquant._kernels",
                ["src/fp4lab/fpquant/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython / numpy at build time: ship pure Python, fallback kicks in.
    ext_modules = []

setup(ext_modules=ext_modules)
