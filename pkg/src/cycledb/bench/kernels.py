"""Microbenchmark for the query-set merge kernels.

Times union and intersection over seeded workloads of sorted id tuples
for every available implementation: the pure-Python one always, the
compiled extension when it built. The results double as a smoke check
that both give identical answers.
"""

from __future__ import annotations

import random
import time

from cycledb import _qsops_py
from cycledb.querysets import kernel_backend

try:
    from cycledb import _qsops
except ImportError:
    _qsops = None


def make_pairs(n_pairs=2000, max_len=64, id_space=512, seed=7):
    rng = random.Random(seed)
    pairs = []
    for _ in range(n_pairs):
        a = tuple(sorted(rng.sample(range(id_space), rng.randint(0, max_len))))
        b = tuple(sorted(rng.sample(range(id_space), rng.randint(0, max_len))))
        pairs.append((a, b))
    return pairs


def _time_over(func, pairs, repeat):
    best = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        for a, b in pairs:
            func(a, b)
        elapsed = time.perf_counter() - t0
        best = elapsed if best is None else min(best, elapsed)
    return best


def run_kernels(n_pairs=2000, max_len=64, id_space=512, seed=7, repeat=5):
    """Per-backend best-of timings in microseconds per call."""
    pairs = make_pairs(n_pairs, max_len, id_space, seed)
    backends = [("pure", _qsops_py)]
    if _qsops is not None:
        backends.append(("compiled", _qsops))

    results = {}
    for name, mod in backends:
        union_s = _time_over(mod.qs_union, pairs, repeat)
        inter_s = _time_over(mod.qs_intersect, pairs, repeat)
        results[name] = {
            "union_us": 1e6 * union_s / len(pairs),
            "intersect_us": 1e6 * inter_s / len(pairs),
        }

    if _qsops is not None:
        for a, b in pairs:
            if _qsops.qs_union(a, b) != _qsops_py.qs_union(a, b):
                raise AssertionError(f"union disagrees on {a!r} and {b!r}")
            if _qsops.qs_intersect(a, b) != _qsops_py.qs_intersect(a, b):
                raise AssertionError(f"intersect disagrees on {a!r} and {b!r}")

    return {
        "active": kernel_backend(),
        "pairs": len(pairs),
        "backends": results,
    }


def format_kernels(result):
    lines = [
        f"active backend: {result['active']}  ({result['pairs']} pairs,"
        f" best of timed repeats)",
        f"{'backend':<12}{'union us/call':>16}{'intersect us/call':>20}",
    ]
    for name, timings in result["backends"].items():
        lines.append(
            f"{name:<12}{timings['union_us']:>16.3f}"
            f"{timings['intersect_us']:>20.3f}"
        )
    if "compiled" in result["backends"]:
        pure = result["backends"]["pure"]
        fast = result["backends"]["compiled"]
        speedup = pure["union_us"] / fast["union_us"] if fast["union_us"] else 0
        lines.append(f"compiled union speedup: {speedup:.1f}x")
    else:
        lines.append("compiled extension unavailable; pure kernels only")
    return "\n".join(lines)
