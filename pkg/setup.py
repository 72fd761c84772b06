"""Build script: compiles the integration kernel when Cython is available."""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension
    import numpy
except ImportError:
    pass
else:
    ext_modules = cythonize(
        [Extension(
            "dpra._ckernel",
            ["src/dpra/_ckernel.pyx"],
            include_dirs=[numpy.get_include()],
            # no fused multiply-add so results match the Python fallback bit for bit
            extra_compile_args=["-O2", "-ffp-contract=off"],
        )],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
