"""Console-script entry point.

Lives in its own module so the thread cap can be applied before numpy is
imported anywhere; the BLAS thread pools read their environment variables
at import time.
"""

import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def apply_thread_cap(environ=os.environ) -> None:
    """Propagate EGMAE_THREADS to the BLAS/OpenMP knobs, if set.

    Explicit per-library settings already in the environment win.
    """
    cap = environ.get("EGMAE_THREADS")
    if cap:
        for var in _THREAD_VARS:
            environ.setdefault(var, cap)


def main() -> None:
    apply_thread_cap()
    from .cli import main as cli_main

    sys.exit(cli_main(sys.argv[1:]))
