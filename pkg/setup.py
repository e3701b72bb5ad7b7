"""Build script for the optional compiled kernels.

The extension uses typed memoryviews only, so no numpy headers are needed.
If Cython is unavailable the build proceeds without the extension and the
package falls back to the pure numpy kernels at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("mlkg._ckernels", ["src/mlkg/_ckernels.pyx"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
