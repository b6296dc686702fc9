"""Per-epoch batch plans for local training.

Two strategies are supported:

``vl``       shuffle all examples and cut consecutive chunks; a batch may mix
             sequence lengths and is padded to its longest member.
``aligned``  bucket examples by exact length, shuffle and chunk each bucket,
             then shuffle the order of the resulting batches' buckets. Every
             batch holds a single length, so no padding is ever needed.
"""

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("vl", "aligned")


@dataclass(frozen=True)
class Batch:
    features: np.ndarray  # (T_max, B, d), zero beyond each sequence's length
    lengths: np.ndarray  # (B,)
    mask: np.ndarray  # (T_max, B) bool
    labels: np.ndarray  # (B,)

    @property
    def size(self):
        return len(self.lengths)

    @property
    def d(self):
        return self.features.shape[2]


@dataclass(frozen=True)
class BatchPlan:
    strategy: str
    batches: tuple  # tuple of int64 index arrays

    def __len__(self):
        return len(self.batches)

    def sizes(self):
        return [len(b) for b in self.batches]


def _check(dataset, batch_size):
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if len(dataset.examples) == 0:
        raise ValueError(f"client {dataset.client_id} has no examples")


def _chunks(idx, batch_size):
    return [idx[i : i + batch_size] for i in range(0, len(idx), batch_size)]


def plan_varying(dataset, batch_size=32, seed=None):
    _check(dataset, batch_size)
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(dataset.examples)).astype(np.int64)
    return BatchPlan("vl", tuple(_chunks(idx, batch_size)))


def plan_aligned(dataset, batch_size=32, seed=None):
    """Length-pure batches.

    Buckets are visited in a seeded random order; a bucket's batches stay
    contiguous in the plan. With a single bucket this draws the same
    permutation as :func:`plan_varying` and yields an identical plan.
    """
    _check(dataset, batch_size)
    rng = np.random.default_rng(seed)
    lengths = dataset.lengths()
    buckets = np.unique(lengths)
    groups = []
    for length in buckets:
        members = np.flatnonzero(lengths == length).astype(np.int64)
        groups.append(_chunks(members[rng.permutation(len(members))], batch_size))
    if len(groups) > 1:
        order = rng.permutation(len(groups))
        groups = [groups[i] for i in order]
    return BatchPlan("aligned", tuple(b for group in groups for b in group))


def make_plan(strategy, dataset, batch_size=32, seed=None):
    if strategy == "vl":
        return plan_varying(dataset, batch_size, seed)
    if strategy == "aligned":
        return plan_aligned(dataset, batch_size, seed)
    raise ValueError(f"unknown batching strategy {strategy!r}; expected one of {STRATEGIES}")


def collate(sequences):
    """Pad a list of LabeledSequence into a Batch."""
    if not sequences:
        raise ValueError("cannot collate an empty batch")
    lengths = np.array([s.length for s in sequences], dtype=np.int64)
    d = sequences[0].features.shape[1]
    t_max = int(lengths.max())
    features = np.zeros((t_max, len(sequences), d))
    for j, s in enumerate(sequences):
        features[: s.length, j, :] = s.features
    mask = np.arange(t_max)[:, None] < lengths[None, :]
    labels = np.array([s.label for s in sequences], dtype=np.int64)
    return Batch(features, lengths, mask, labels)


def materialize(dataset, indices):
    n = len(dataset.examples)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"batch index out of range for client with {n} examples")
    return collate([dataset.examples[i] for i in indices])
