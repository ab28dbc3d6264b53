from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "goat_wsi._kernels._native",
        ["src/goat_wsi/_kernels/_native.pyx"],
    ),
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": 3},
    ),
)
