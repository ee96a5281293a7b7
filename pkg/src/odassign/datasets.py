"""Lookup of bundled and user-supplied TNTP network files.

Bundled names resolve to files shipped in ``odassign/data``.  Any other name
is looked up under the directory named by ``ODASSIGN_DATA`` using the usual
``<Name>_net.tntp`` / ``<Name>_trips.tntp`` / ``<Name>_node.tntp`` layout.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from . import tntp

DATA_ENV = "ODASSIGN_DATA"
_BUNDLED_DIR = Path(__file__).resolve().parent / "data"
_BUNDLED = {"siouxfalls": "SiouxFalls", "ow": "OWSynthetic"}

# (beta low, beta high) for variable demand, by dataset name
DEFAULT_BETA = {"siouxfalls": (0.5, 1.0), "ow": (0.5, 1.0), "anaheim": (0.5, 1.5)}


@dataclass(frozen=True)
class DatasetFiles:
    name: str
    net: Path
    trips: Path
    node: Path | None


def _candidates(name):
    key = name.lower()
    stem = _BUNDLED.get(key)
    if stem is not None:
        yield _BUNDLED_DIR, stem
    root = os.environ.get(DATA_ENV)
    if root:
        base = Path(root)
        yield base, stem or name
        # also accept a per-network subdirectory and common capitalizations
        for s in {name, name.capitalize(), stem or name}:
            yield base / s, s


def locate(name):
    """Return the file paths for dataset ``name`` or raise FileNotFoundError."""
    for base, stem in _candidates(name):
        net = base / f"{stem}_net.tntp"
        trips = base / f"{stem}_trips.tntp"
        if net.is_file() and trips.is_file():
            node = base / f"{stem}_node.tntp"
            return DatasetFiles(name.lower(), net, trips, node if node.is_file() else None)
    hint = "" if os.environ.get(DATA_ENV) else f" (set {DATA_ENV} to a directory of TNTP files)"
    raise FileNotFoundError(f"dataset {name!r} not found{hint}")


def bundled_names():
    return sorted(_BUNDLED)


def load(name, with_coords=True):
    """Parse dataset ``name``; returns ``(net, dm, coords or None)``."""
    files = locate(name)
    net = tntp.read_network(files.net)
    dm = tntp.read_trips(files.trips, net)
    coords = None
    if with_coords and files.node is not None:
        coords = tntp.read_node_coords(files.node, net)
    return net, dm, coords
