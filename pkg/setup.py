"""Build script for the optional compiled segment-op kernels.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes training noticeably faster.
"""

import os

import numpy
from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
if os.environ.get("DEMINET_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "deminet.kernels._segment",
                    ["src/deminet/kernels/_segment.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
