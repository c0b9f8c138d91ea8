"""Build the optional compiled convolution kernels.

If Cython or a C compiler is missing the package still installs and falls back
to the NumPy kernels at import time.
"""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("plca._kernels", ["src/plca/_kernels.pyx"],
                   include_dirs=[np.get_include()], extra_compile_args=["-O3"])],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
