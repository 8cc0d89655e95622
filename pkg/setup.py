"""Builds the optional compiled kernels; the package works without them."""
from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("facefit._kernels", ["src/facefit/_kernels.pyx"])],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
