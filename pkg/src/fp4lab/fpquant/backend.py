"""Codec backend selection.

The compiled extension is preferred when importable; set ``FP4LAB_BACKEND`` to
``python`` or ``cython`` to force one. Both backends are bitwise-identical, so
the choice only affects speed.
"""

from __future__ import annotations

import os

from . import _kernels_py

_FORCED = os.environ.get("FP4LAB_BACKEND", "").strip().lower()

_compiled = None
if _FORCED != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None
        if _FORCED == "cython":
            raise ImportError(
                "FP4LAB_BACKEND=cython but the compiled kernels are not built; "
                "run `python setup.py build_ext --inplace` or reinstall"
            )

_ACTIVE = _compiled if _compiled is not None else _kernels_py


def active_backend() -> str:
    """Name of the kernel backend in use: 'cython' or 'python'."""
    return "cython" if _ACTIVE is not _kernels_py else "python"


def get_kernels(name: str | None = None):
    """Kernel module for ``name`` ('python', 'cython', or None for active)."""
    if name is None:
        return _ACTIVE
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
