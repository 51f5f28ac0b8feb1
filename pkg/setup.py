import os

from setuptools import Extension, setup

# TSSELECT_NO_EXT=1 skips the compiled kernels; the package then runs on the
# pure-Python fallback.
ext_modules = []
if os.environ.get("TSSELECT_NO_EXT") != "1":
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tsselect._ckernels",
                ["src/tsselect/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math or FMA contraction: results must match _pykernels bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
