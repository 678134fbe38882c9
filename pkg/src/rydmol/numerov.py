"""Numerov radial solver front-end.

The compiled kernel (``rydmol._numerov``) is used when it has been built;
otherwise the pure-Python version is imported. ``BACKEND`` names the active one
and ``RYDMOL_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _numerov_py

if os.environ.get("RYDMOL_PURE_PYTHON") == "1":
    _kernel = _numerov_py
else:
    try:
        from . import _numerov as _kernel
    except ImportError:  # extension not built
        _kernel = _numerov_py

BACKEND = "compiled" if _kernel is not _numerov_py else "python"
integrate = _kernel.integrate
