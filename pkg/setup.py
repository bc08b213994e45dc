"""Build script: compiles the banded-kernel extension when Cython and a C
toolchain are available; the package falls back to the numpy kernels
otherwise."""

from setuptools import Extension, setup

extensions = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "slravp._band_cy",
        sources=["src/slravp/_band_cy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
    )
    ext.optional = True
    extensions = cythonize([ext], language_level=3)
except ImportError:
    pass

setup(ext_modules=extensions)
