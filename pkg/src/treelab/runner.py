"""Replica execution with deterministic, worker-count-independent results.

Replicas are independent tasks over shared immutable inputs.  Each replica
gets its own counter-based stream from (master seed, replica index), and
records are reduced in replica-index order, so the aggregate is bit-identical
whether 1 or 8 workers ran the replicas.
"""

import threading
from concurrent.futures import ThreadPoolExecutor

from .rng import seed_stream


def map_replicas(n_replicas, master_seed, replica_fn, threads=1, spawn_prefix=()):
    """Run replica_fn(rng, index) for index 0..n-1; list in index order.

    `spawn_prefix` namespaces the streams so different estimators inside one
    experiment never share a stream even under the same master seed.
    """
    indices = range(n_replicas)

    def task(i):
        return replica_fn(seed_stream(master_seed, *spawn_prefix, i), i)

    if threads <= 1:
        return [task(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, indices))


class PerThread:
    """Lazily constructed per-thread workspace (reusable scratch arrays)."""

    def __init__(self, factory):
        self._factory = factory
        self._local = threading.local()

    def get(self):
        ws = getattr(self._local, "ws", None)
        if ws is None:
            ws = self._factory()
            self._local.ws = ws
        return ws
