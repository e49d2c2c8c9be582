"""Selects the bit-kernel implementation at import time.

The compiled ``_kernels`` extension is preferred. Setting the environment
variable ``FEDZIP_PURE_PYTHON=1`` forces the pure-Python kernels.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def get(name: str) -> ModuleType:
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("fedzip._kernels is not compiled; reinstall with a C compiler and Cython")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


if os.environ.get("FEDZIP_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

kernels = get(BACKEND)
