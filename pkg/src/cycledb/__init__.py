"""cycledb: an embedded in-memory relational engine with batched shared execution.

Concurrent queries and updates are collected into batches; each batch
is pushed through one always-on plan of shared operators in a single
execution cycle, with every flowing tuple tagged by the set of queries
it belongs to.  See README.md for the tour.
"""

from __future__ import annotations

from cycledb.querysets import kernel_backend

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "kernel_backend",
    "open_engine",
    "Engine",
    "EngineConfig",
]


def __getattr__(name):
    # runtime pulls in the whole stack; import lazily so the light
    # datamodel modules stay importable on their own
    if name in ("Engine", "EngineConfig", "open_engine"):
        from cycledb import runtime

        return getattr(runtime, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
