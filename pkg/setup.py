"""Build script: compiles the optional kernel extension when a toolchain exists.

The package is fully functional without the extension; canphys.kernels falls
back to the NumPy implementations at import time.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the compiled core if possible, otherwise install pure Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or headers missing
            print(f"canphys: skipping compiled kernels ({exc}); "
                  "falling back to NumPy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"canphys: could not build {ext.name} ({exc}); "
                  "falling back to NumPy backend")


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    compile_args = ["-O3", "-fopenmp"]
    link_args = ["-fopenmp"]
    if os.environ.get("CANPHYS_NATIVE", "1") == "1":
        compile_args.append("-march=native")
    ext = Extension(
        "canphys.kernels._core",
        ["src/canphys/kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
