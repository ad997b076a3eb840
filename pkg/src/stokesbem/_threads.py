"""Thread-cap plumbing shared by the package root and the CLI."""

from __future__ import annotations

import os


def _configure_threads() -> None:
    """Translate ``STOKESBEM_THREADS`` into BLAS/OpenMP thread caps.

    Only effective when it runs before the process first imports
    numpy, so both the package root and the CLI module call it at the
    top of their import.
    """
    n = os.environ.get("STOKESBEM_THREADS")
    if n:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, n)
