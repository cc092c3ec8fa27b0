import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext_modules = [
    Extension(
        "photonic_graybox._kernels",
        ["src/photonic_graybox/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-fcx-fortran-rules"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"), ("CYTHON_CCOMPLEX", "1")],
        optional=True,  # no compiler: the numpy fallback is used
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
