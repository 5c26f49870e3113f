"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a numpy fallback is
selected at import); building it just makes tape execution faster, mostly
for single-state evaluations inside ODE rollouts.  If compilation fails we
install the pure-Python package instead of erroring out.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if we can, warn and continue if we cannot."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or cythonize failure
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"WARNING: compiled core not built ({exc}); "
            "falling back to the pure numpy backend",
            file=sys.stderr,
        )


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        print(f"WARNING: {exc}; skipping compiled core", file=sys.stderr)
        return []
    return cythonize(
        [
            Extension(
                "physnet._core",
                sources=["src/physnet/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # -ffast-math lets gcc vectorize the tanh/sigmoid sweeps
                # through libmvec; kernels are checked against the numpy
                # backend in the test suite.
                extra_compile_args=["-O3", "-ffast-math", "-march=native"],
                extra_link_args=["-lmvec", "-lm"],
            )
        ],
        language_level=3,
    )


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
