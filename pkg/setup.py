import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "supportnet._dualcd",
        ["src/supportnet/_dualcd.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
    )
]

if cythonize is not None:
    extensions = cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
    for ext in extensions:
        ext.optional = True  # pure-python fallback is selected at import
else:
    extensions = []

setup(ext_modules=extensions)
