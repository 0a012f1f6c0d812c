import os

from setuptools import setup

ext_modules = []
if os.environ.get("NATROBUST_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        # no -march=native / -ffast-math: the kernels must agree bit-for-bit
        # with the numpy fallback, so FMA contraction is off the table.
        ext_modules = cythonize(
            [
                Extension(
                    "natrobust._kernels",
                    ["src/natrobust/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
