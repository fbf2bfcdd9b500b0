"""Query sets: which concurrent queries a flowing tuple belongs to.

A QuerySet is represented as a tuple of strictly ascending query ids.
Tuples sharing a row union their sets; joins intersect them; a tuple
whose set would become empty is dropped instead of flowing on.  Sets
are copy-on-write: kernels return fresh tuples and callers never
mutate one in place.

The merge kernels come from the compiled extension when it built,
otherwise from the pure-Python twin.  CYCLEDB_PURE=1 forces the pure
path (used by the kernel benchmark for its comparison run).
"""

from __future__ import annotations

import os

from cycledb import _qsops_py

if os.environ.get("CYCLEDB_PURE"):
    _impl = _qsops_py
else:
    try:
        from cycledb import _qsops as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _qsops_py

qs_union = _impl.qs_union
qs_intersect = _impl.qs_intersect
qs_contains = _impl.qs_contains
qs_is_sorted_unique = _impl.qs_is_sorted_unique

#: Which kernel implementation is live: "compiled" or "pure".
KERNEL_BACKEND = _impl.BACKEND

QuerySet = tuple  # tuple[int, ...], strictly ascending


def kernel_backend():
    """Name of the active merge-kernel implementation."""
    return KERNEL_BACKEND


def make_queryset(ids):
    """Build a valid QuerySet from any iterable of ids (dedup + sort)."""
    return tuple(sorted(set(ids)))


def check_queryset(qs):
    """Validate the QuerySet invariant; raises ValueError on violation."""
    if not isinstance(qs, tuple):
        raise ValueError(f"query set must be a tuple, got {type(qs).__name__}")
    if not qs_is_sorted_unique(qs):
        raise ValueError(f"query set not strictly ascending: {qs!r}")
    return qs
