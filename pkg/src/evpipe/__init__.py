"""Event-camera video reconstruction toolkit.

Pure-numpy pipeline: an event simulator, voxel-grid tensorization, filter
baselines, a recurrent reconstruction network trained end to end, and the
evaluation/benchmark harness. Submodules import lazily so the command line
front end can pin BLAS thread counts before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "events",
    "frames",
    "simulate",
    "voxel",
    "reconstruct",
    "net",
    "metrics",
    "errors",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module(f"{__name__}.{name}")
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
