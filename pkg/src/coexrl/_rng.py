"""Labeled RNG substreams derived from a single master seed."""
import numpy as np

# fixed labels; never renumber, recorded runs depend on them
LABELS = {
    "noise": 0,
    "interferer": 1,
    "payload": 2,
    "env": 10,
    "agent": 11,
    "init": 20,
    "explore": 21,
    "replay": 22,
}


def _key(label):
    if isinstance(label, str):
        return LABELS[label]
    return int(label)


def substream(seed, *labels):
    """Return a Generator for ``seed`` split along ``labels`` (names or ints)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(lb) for lb in labels))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *labels):
    """Return a 63-bit integer seed for a labeled child stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(lb) for lb in labels))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
