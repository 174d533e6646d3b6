"""Build script for the optional compiled attention kernel.

The package works without the extension: kidogo.attention falls back to the
numpy tile loop when `kidogo._streamattn` is not importable. Build failures
(missing compiler, exotic platform) therefore degrade to a warning instead of
aborting the install.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"compiled attention kernel not built ({exc}); "
                          "falling back to the pure numpy implementation")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled attention kernel not built ({exc}); "
                          "falling back to the pure numpy implementation")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "kidogo._streamattn",
        ["src/kidogo/_streamattn.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
