"""Pure-Python query-set merge kernels.

Fallback implementation used when the compiled extension
(cycledb._qsops) is unavailable or disabled via CYCLEDB_PURE=1.
A query set is a tuple of strictly ascending ints.  Both
implementations must stay behaviorally identical; the test suite
cross-checks them.
"""

from __future__ import annotations

BACKEND = "pure"


def qs_union(a, b):
    """Merge two sorted id tuples into their sorted union."""
    if not a:
        return b
    if not b:
        return a
    if a is b:
        return a
    out = []
    push = out.append
    i = j = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        x, y = a[i], b[j]
        if x == y:
            push(x)
            i += 1
            j += 1
        elif x < y:
            push(x)
            i += 1
        else:
            push(y)
            j += 1
    if i < na:
        out.extend(a[i:])
    else:
        out.extend(b[j:])
    return tuple(out)


def qs_intersect(a, b):
    """Intersect two sorted id tuples; returns () when disjoint."""
    if not a or not b:
        return ()
    if a is b:
        return a
    # quick reject on ranges
    if a[-1] < b[0] or b[-1] < a[0]:
        return ()
    out = []
    push = out.append
    i = j = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        x, y = a[i], b[j]
        if x == y:
            push(x)
            i += 1
            j += 1
        elif x < y:
            i += 1
        else:
            j += 1
    if len(out) == na:
        return a
    if len(out) == nb:
        return b
    return tuple(out)


def qs_contains(qs, qid):
    """Binary-search membership test."""
    lo, hi = 0, len(qs)
    while lo < hi:
        mid = (lo + hi) // 2
        v = qs[mid]
        if v == qid:
            return True
        if v < qid:
            lo = mid + 1
        else:
            hi = mid
    return False


def qs_is_sorted_unique(qs):
    """True when qs is strictly ascending (the QuerySet invariant)."""
    for i in range(1, len(qs)):
        if qs[i - 1] >= qs[i]:
            return False
    return True
