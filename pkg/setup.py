"""Build script for the optional compiled kernels.

The extension is optional: if Cython, a C compiler or glibc's vector math
library is unavailable, the package installs without it and the numpy
fallback in ``opusketch._fallback`` is used at import time.
"""
import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback", file=sys.stderr)


def extensions():
    if os.environ.get("OPUSKETCH_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    compile_args = ["-O3", "-ffast-math", "-fopenmp-simd"]
    if os.environ.get("OPUSKETCH_PORTABLE") is None:
        compile_args.append("-march=native")
    ext = Extension(
        "opusketch._kernels",
        ["src/opusketch/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=["-lmvec", "-lm"],
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


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
