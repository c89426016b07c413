"""Build script for the optional compiled kernel module.

The package is fully functional without the extension; if Cython or a C
compiler is unavailable the build falls back to a pure-Python install and
the runtime selects the NumPy kernel backend instead.
"""
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class _OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, header mismatch, ...
            print(f"warning: compiled kernels skipped ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: compiled kernels skipped ({exc})", file=sys.stderr)


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"warning: compiled kernels skipped ({exc})", file=sys.stderr)
        return []
    from setuptools import Extension

    ext = Extension(
        "hybridskip.kernels._speedups",
        sources=["src/hybridskip/kernels/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions(), cmdclass={"build_ext": _OptionalBuildExt})
