"""Selection of the stepping core.

The compiled extension ``stone_erosion._core`` is used when it imports;
otherwise, or when ``STONE_EROSION_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the numpy/scipy implementation is used.
"""

import os

from . import _core_py

ENV_PURE = "STONE_EROSION_PURE_PYTHON"

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None


def _pure_requested() -> bool:
    return os.environ.get(ENV_PURE, "") not in ("", "0")


def available() -> tuple:
    return ("compiled", "python") if _compiled is not None else ("python",)


def get_core(name: str | None = None):
    """Return the core module for ``name`` ('compiled', 'python' or None for the default)."""
    if name is None:
        name = "python" if (_pure_requested() or _compiled is None) else "compiled"
    if name == "python":
        return _core_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled core not built; reinstall the package with a C compiler")
        return _compiled
    raise ValueError(f"unknown core {name!r}")


DEFAULT = get_core()
