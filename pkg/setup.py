from setuptools import Extension, setup

try:
    import numpy  # noqa: F401
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("lpcfgopt.parser._ckernels", ["src/lpcfgopt/parser/_ckernels.pyx"],
                   extra_compile_args=["-O3"])],
        language_level="3",
    )

setup(ext_modules=ext_modules)
