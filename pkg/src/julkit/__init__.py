"""julkit: joint error/uncertainty learning on a toy inpainting task.

A small, fully gradient-checked stack: a reverse-mode autodiff core over
float64 numpy arrays, per-channel affine feature warping, a Laplacian
uncertainty loss with differentiable-histogram KL matching, adversarial /
perceptual / sync losses, a procedural synthetic dataset, and an Adam
training loop, all wired into the ``julkit`` command line tool.
"""

import os

# Single-threaded BLAS keeps graph evaluation bit-reproducible and avoids
# oversubscription at these tiny matrix sizes. Must run before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from ._kernels import BACKEND_NAME as kernel_backend  # noqa: E402

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
