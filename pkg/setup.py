"""Build script for the optional compiled kernels.

The extension is optional: if Cython or a C compiler is missing the package
installs without it and ``fbzero.kernels`` falls back to numpy.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("FBZERO_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "fbzero.kernels._ext",
                    ["src/fbzero/kernels/_ext.pyx"],
                    include_dirs=["src/fbzero/kernels", np.get_include()],
                    # fast-math lets gcc call the libmvec SIMD expf
                    extra_compile_args=["-O3", "-march=native", "-ffast-math", "-fopenmp-simd"],
                    extra_link_args=["-lmvec"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"fbzero: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
