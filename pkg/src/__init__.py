# SAN-M - Memory-Equipped Self-Attention Encoder-Decoder Toolkit
import os
from typing import MutableMapping

BLAS_THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def pin_blas_threads(environ: MutableMapping[str, str] = os.environ, threads: int = 1) -> MutableMapping[str, str]:
    """Default every BLAS thread pool to ``threads`` unless the variable is already set."""
    for name in BLAS_THREAD_VARIABLES:
        environ.setdefault(name, str(threads))
    return environ


# must run before numpy is first imported
pin_blas_threads()
