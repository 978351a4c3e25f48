"""Deterministic, splittable random number streams.

Every replica of every experiment draws from its own counter-based stream,
derived from (master seed, replica index) and nothing else.  Aggregation is
then done in replica-index order, so results are bit-identical no matter how
many worker threads executed the replicas.
"""

import numpy as np

# Identity string recorded in output metadata so a result can name the
# exact generator that produced it.
GENERATOR_ID = "philox4x64-256/SeedSequence(spawn_key)"


def seed_stream(master_seed, *spawn_key):
    """Return the np.random.Generator for one replica.

    Parameters
    ----------
    master_seed : int
        Experiment-level seed.
    *spawn_key : int
        Replica index, optionally followed by sub-indices for estimators
        that need several independent configurations per replica.

    The same (master_seed, spawn_key) always yields the same stream, and
    distinct spawn keys yield streams that are independent by construction
    of the Philox counter.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
