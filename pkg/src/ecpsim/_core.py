"""Selects the step kernel: the compiled extension when built, else pure Python.

Set ``ECPSIM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("ECPSIM_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    evaluate = _compiled.evaluate
    BACKEND = "compiled"
else:
    evaluate = _pykernels.evaluate
    BACKEND = "python"

python_evaluate = _pykernels.evaluate
compiled_evaluate = None if _compiled is None else _compiled.evaluate
