"""In-memory B+ tree index: key -> row ids.

Architecture
------------
Classic B+ tree with all row ids stored in the leaves; internal nodes
hold separator keys only.  Leaves are chained left-to-right so ordered
iteration and range scans are a walk along the chain.  Keys are
single-typed comparable values (one column); each leaf slot carries the
list of row ids whose row has (or historically had) that key value, so
the tree supports non-unique attributes.  Null is never indexed.

Invariants
----------
- keys within every node strictly ascending;
- every internal node has len(children) == len(keys) + 1;
- all leaves at the same depth.

Deletion removes a row id from its key's id list and drops the key
when the list empties.  Leaves are not rebalanced on underflow (they
may run short); search and iteration are unaffected, and the engine
deletes only at cycle boundaries where churn is modest.  Splits keep
the tree balanced under growth.
"""

from __future__ import annotations

import bisect

from cycledb.errors import StorageError

ORDER = 64  # max keys per node


class _Node:
    __slots__ = ("keys", "children", "ids", "next_leaf")

    def __init__(self, leaf):
        self.keys = []
        self.children = None if leaf else []
        self.ids = [] if leaf else None  # parallel to keys: list[list[rid]]
        self.next_leaf = None

    @property
    def is_leaf(self):
        return self.children is None


class BPlusTree:
    __slots__ = ("_root", "_len")

    def __init__(self):
        self._root = _Node(leaf=True)
        self._len = 0  # distinct keys

    def __len__(self):
        return self._len

    # -- search ---------------------------------------------------------

    def _find_leaf(self, key):
        node = self._root
        while not node.is_leaf:
            i = bisect.bisect_right(node.keys, key)
            node = node.children[i]
        return node

    def get(self, key):
        """Row ids for key; empty list when absent."""
        leaf = self._find_leaf(key)
        i = bisect.bisect_left(leaf.keys, key)
        if i < len(leaf.keys) and leaf.keys[i] == key:
            return leaf.ids[i]
        return []

    def contains(self, key):
        return bool(self.get(key))

    # -- mutation -------------------------------------------------------

    def insert(self, key, rid):
        if key is None:
            raise StorageError("cannot index a null key")
        split = self._insert(self._root, key, rid)
        if split is not None:
            sep, right = split
            new_root = _Node(leaf=False)
            new_root.keys = [sep]
            new_root.children = [self._root, right]
            self._root = new_root

    def _insert(self, node, key, rid):
        if node.is_leaf:
            i = bisect.bisect_left(node.keys, key)
            if i < len(node.keys) and node.keys[i] == key:
                node.ids[i].append(rid)
                return None
            node.keys.insert(i, key)
            node.ids.insert(i, [rid])
            self._len += 1
            if len(node.keys) > ORDER:
                return self._split_leaf(node)
            return None
        i = bisect.bisect_right(node.keys, key)
        split = self._insert(node.children[i], key, rid)
        if split is None:
            return None
        sep, right = split
        node.keys.insert(i, sep)
        node.children.insert(i + 1, right)
        if len(node.keys) > ORDER:
            return self._split_internal(node)
        return None

    def _split_leaf(self, node):
        mid = len(node.keys) // 2
        right = _Node(leaf=True)
        right.keys = node.keys[mid:]
        right.ids = node.ids[mid:]
        del node.keys[mid:]
        del node.ids[mid:]
        right.next_leaf = node.next_leaf
        node.next_leaf = right
        return right.keys[0], right

    def _split_internal(self, node):
        mid = len(node.keys) // 2
        sep = node.keys[mid]
        right = _Node(leaf=False)
        right.keys = node.keys[mid + 1 :]
        right.children = node.children[mid + 1 :]
        del node.keys[mid:]
        del node.children[mid + 1 :]
        return sep, right

    def remove(self, key, rid):
        """Detach rid from key; drops the key when its id list empties.

        Missing (key, rid) pairs are ignored (idempotent GC).
        """
        leaf = self._find_leaf(key)
        i = bisect.bisect_left(leaf.keys, key)
        if i >= len(leaf.keys) or leaf.keys[i] != key:
            return
        try:
            leaf.ids[i].remove(rid)
        except ValueError:
            return
        if not leaf.ids[i]:
            del leaf.keys[i]
            del leaf.ids[i]
            self._len -= 1

    # -- iteration ------------------------------------------------------

    def _leftmost(self):
        node = self._root
        while not node.is_leaf:
            node = node.children[0]
        return node

    def items(self):
        """All (key, [rids]) in ascending key order."""
        leaf = self._leftmost()
        while leaf is not None:
            yield from zip(leaf.keys, leaf.ids)
            leaf = leaf.next_leaf

    def range(self, lo=None, hi=None):
        """(key, [rids]) with lo <= key <= hi (either bound open)."""
        if lo is None:
            leaf = self._leftmost()
            i = 0
        else:
            leaf = self._find_leaf(lo)
            i = bisect.bisect_left(leaf.keys, lo)
        while leaf is not None:
            while i < len(leaf.keys):
                key = leaf.keys[i]
                if hi is not None and key > hi:
                    return
                yield key, leaf.ids[i]
                i += 1
            leaf = leaf.next_leaf
            i = 0

    def check(self):
        """Validate structural invariants (tests only); returns depth."""
        depths = set()

        def walk(node, depth, lo, hi):
            assert node.keys == sorted(set(node.keys)), "keys not strictly ascending"
            for k in node.keys:
                assert (lo is None or k >= lo) and (hi is None or k < hi)
            if node.is_leaf:
                assert len(node.ids) == len(node.keys)
                depths.add(depth)
                return
            assert len(node.children) == len(node.keys) + 1
            bounds = [lo, *node.keys, hi]
            for i, child in enumerate(node.children):
                walk(child, depth + 1, bounds[i], bounds[i + 1])

        walk(self._root, 0, None, None)
        assert len(depths) == 1, "leaves at unequal depth"
        return depths.pop()
