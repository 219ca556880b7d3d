"""Backend selection for the hot kernels.

The compiled extension is preferred; setting ``CHATTYMAPS_PURE_PYTHON=1``
forces the numpy fallback.
"""

import os

from chattymaps import _fallback

BACKEND = "python"
capsule_hits = _fallback.capsule_hits

if not os.environ.get("CHATTYMAPS_PURE_PYTHON"):
    try:
        from chattymaps._speedups import capsule_hits  # noqa: F811
    except ImportError:
        pass
    else:
        BACKEND = "cython"
