"""Build script: compiles the optional agglomeration kernel.

The compiled extension is a pure speedup; if Cython or a C++ toolchain is
unavailable the package installs anyway and falls back to the Python kernel.
"""
import logging

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

log = logging.getLogger(__name__)


class optional_build_ext(build_ext):
    """build_ext that degrades to the pure-Python backend on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing
            log.warning("skipping compiled kernel (%s); pure-Python backend will be used", exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            log.warning("failed to build %s (%s); pure-Python backend will be used", ext.name, exc)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "csfm._cnm_fast",
                ["src/csfm/_cnm_fast.pyx"],
                language="c++",
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
