"""Seed stream splitting.

All randomness in an experiment derives from one integer root seed::

    dataset stream          SeedSequence(root, spawn_key=(0,))
    model init              SeedSequence(root, spawn_key=(1,))
    client c in round r     SeedSequence(root, spawn_key=(2, r, c))

A client's stream depends only on (root, round, client), so the order or
concurrency in which clients run cannot change what they draw.
"""

import numpy as np

_DATASET, _INIT, _CLIENT = 0, 1, 2


def dataset_rng(root):
    return np.random.default_rng(np.random.SeedSequence(root, spawn_key=(_DATASET,)))


def init_seed(root):
    return np.random.SeedSequence(root, spawn_key=(_INIT,))


def client_seed(root, round_index, client_id):
    return np.random.SeedSequence(root, spawn_key=(_CLIENT, round_index, client_id))
