"""Select the compiled kernels when available, else the numpy fallback.

Set ``ODOLAB_BACKEND=python`` to force the fallback.
"""

import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("ODOLAB_BACKEND", "").lower() == "python":
    from odolab import _pykernels as kernels

    BACKEND = "python"
else:
    try:
        from odolab import _ckernels as kernels

        BACKEND = "cython"
    except ImportError:  # extension not built
        from odolab import _pykernels as kernels

        BACKEND = "python"
        log.debug("compiled kernels unavailable, using numpy fallback")

__all__ = ["kernels", "BACKEND"]
