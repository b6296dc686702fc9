import numpy as np
import pytest

from fedseq.batching import collate
from fedseq.sequence_data import ClientDataset, LabeledSequence


def random_sequences(rng, lengths, k, d=1):
    return [
        LabeledSequence(rng.normal(size=(int(t), d)), int(rng.integers(k))) for t in lengths
    ]


def random_batch(rng, lengths, k, d=1):
    return collate(random_sequences(rng, lengths, k, d))


def client_from_lengths(lengths, k=3, seed=0, client_id=0):
    rng = np.random.default_rng(seed)
    return ClientDataset(client_id, random_sequences(rng, lengths, k))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_federation(construction="vl", n_clients=5, per_client=20, menu=(2, 3, 4, 5, 6), seed=0, test=30):
    """Small synthetic federation with short sequences, for fast end-to-end runs."""
    from fedseq import sequence_data as sd

    imgs, labels = sd.generate_synthetic_digits(n_clients * per_client, seed)
    t_imgs, t_labels = sd.generate_synthetic_digits(test, seed + 1)
    build = sd.build_vl_dataset if construction == "vl" else sd.build_fl_dataset
    return build(imgs, labels, t_imgs, t_labels, n_clients, menu, seed)


ACCEPTANCE = {}


def record(criterion, name, ok, detail=""):
    """Store a pass/fail line for the acceptance summary and print it."""
    line = f"criterion {criterion} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
