# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled query-set merge kernels.

Same contract as cycledb._qsops_py: query sets are tuples of strictly
ascending Python ints (they fit in 64 bits; ids come from a monotonic
counter).  These loops run once per flowing tuple per join pair, which
is where a shared-execution engine spends its time, hence the C path.
"""

BACKEND = "compiled"


def qs_union(tuple a, tuple b):
    """Merge two sorted id tuples into their sorted union."""
    cdef Py_ssize_t na = len(a)
    cdef Py_ssize_t nb = len(b)
    cdef Py_ssize_t i = 0, j = 0
    cdef long long x, y
    if na == 0:
        return b
    if nb == 0:
        return a
    if a is b:
        return a
    out = []
    while i < na and j < nb:
        x = a[i]
        y = b[j]
        if x == y:
            out.append(a[i])
            i += 1
            j += 1
        elif x < y:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    if i < na:
        out.extend(a[i:])
    elif j < nb:
        out.extend(b[j:])
    return tuple(out)


def qs_intersect(tuple a, tuple b):
    """Intersect two sorted id tuples; returns () when disjoint."""
    cdef Py_ssize_t na = len(a)
    cdef Py_ssize_t nb = len(b)
    cdef Py_ssize_t i = 0, j = 0
    cdef long long x, y
    if na == 0 or nb == 0:
        return ()
    if a is b:
        return a
    x = a[na - 1]
    y = b[0]
    if x < y:
        return ()
    x = b[nb - 1]
    y = a[0]
    if x < y:
        return ()
    out = []
    while i < na and j < nb:
        x = a[i]
        y = b[j]
        if x == y:
            out.append(a[i])
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


def qs_contains(tuple qs, qid):
    """Binary-search membership test."""
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = len(qs)
    cdef Py_ssize_t mid
    cdef long long target = qid
    cdef long long v
    while lo < hi:
        mid = (lo + hi) // 2
        v = qs[mid]
        if v == target:
            return True
        if v < target:
            lo = mid + 1
        else:
            hi = mid
    return False


def qs_is_sorted_unique(tuple qs):
    """True when qs is strictly ascending (the QuerySet invariant)."""
    cdef Py_ssize_t n = len(qs)
    cdef Py_ssize_t i
    cdef long long prev, cur
    if n < 2:
        return True
    prev = qs[0]
    for i in range(1, n):
        cur = qs[i]
        if prev >= cur:
            return False
        prev = cur
    return True
