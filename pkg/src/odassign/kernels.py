"""Backend selection for the shortest-path kernels.

The compiled extension is used when it was built; otherwise the pure-Python
reference is imported. Set ``ODASSIGN_BACKEND=python`` to force the fallback.
"""

import os

from . import _pure

BACKEND = "python"
shortest_path_tree = _pure.shortest_path_tree
all_or_nothing = _pure.all_or_nothing

if os.environ.get("ODASSIGN_BACKEND", "").lower() != "python":
    try:
        from . import _core
    except ImportError:  # extension not built
        _core = None
    if _core is not None:
        BACKEND = "cython"
        shortest_path_tree = _core.shortest_path_tree
        all_or_nothing = _core.all_or_nothing


def get_backend(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _pure
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
