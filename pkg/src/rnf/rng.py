"""Named, reproducible RNG substreams derived from a single run seed.

Every source of randomness in a run (weight init, dropout, shuffling,
pair sampling, ...) pulls from its own named stream so that components
can be reproduced in isolation and adding a consumer never perturbs the
draws seen by another.
"""

import hashlib

import numpy as np


def _tag(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for the (name, *indices) stream of a run seed.

    The same arguments always produce an identical stream, on any platform.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), _tag(name), *map(int, indices)]))


def derive_seed(seed: int, name: str, *indices: int) -> int:
    """A plain integer seed derived from the named stream (for APIs taking ints)."""
    state = np.random.SeedSequence([int(seed), _tag(name), *map(int, indices)]).generate_state(2)
    return int(state[0]) << 32 | int(state[1])
