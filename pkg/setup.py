"""Builds the optional compiled kernel; the package falls back to pure Python without it."""

import logging

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    """A failed compile must not fail the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing or broken
            logging.warning("compiled kernel not built (%s); using the Python kernel", exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            logging.warning("compiled kernel %s not built (%s); using the Python kernel", ext.name, exc)


extensions = []
if cythonize is not None:
    extensions = cythonize(
        [Extension("ecpsim._ckernels", ["src/ecpsim/_ckernels.pyx"], extra_compile_args=["-O3"])],
        compiler_directives={"language_level": 3},
        quiet=True,
    )

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
