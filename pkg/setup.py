from setuptools import setup

# The compiled assembly kernel is optional: when Cython (or a C compiler) is
# unavailable the package falls back to the numpy implementation at import.
try:
    from setuptools import Extension
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mlsgfem._kernels._assembly_cy",
                ["src/mlsgfem/_kernels/_assembly_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
