"""Build script for the optional compiled kernels.

The package is pure Python except for cycledb._qsops, a small Cython
extension holding the hot query-set merge loops.  If Cython or a C
compiler is unavailable the build silently falls back to the pure
Python implementation in cycledb._qsops_py; everything still works,
only slower.  Set CYCLEDB_NO_EXT=1 to skip the extension on purpose.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class _OptionalBuildExt(build_ext):
    """build_ext that downgrades compiler failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            print(f"warning: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc})")


def _extensions():
    if os.environ.get("CYCLEDB_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    exts = [
        Extension(
            "cycledb._qsops",
            ["src/cycledb/_qsops.pyx"],
            extra_compile_args=["-O3"],
        )
    ]
    return cythonize(exts, compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions(), cmdclass={"build_ext": _OptionalBuildExt})
