from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "stone_erosion._core",
        ["src/stone_erosion/_core.pyx"],
        extra_compile_args=["-O3"],
        # the package falls back to the pure-Python core when this fails to build
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
