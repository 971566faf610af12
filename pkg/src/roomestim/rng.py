"""Reproducible random streams.

Every random draw in the toolkit comes from a Philox-4x64 counter-based
generator (``numpy.random.Philox``) keyed by ``(master_seed, room_index,
stream)``. Streams are therefore independent of generation order, which
keeps parallel dataset builds bit-identical to sequential ones.

The diffuse-rain tracer additionally uses a SplitMix64 counter hash seeded
from its Philox stream (see ``roomestim._kernels``) so the compiled and
numpy kernels consume identical random numbers.
"""
import numpy as np

# stream identifiers; append only, never renumber
ROOM = 0
POSITIONS = 1
RIR = 2
MIX = 3
NOISE = 4
SPLIT = 5
CORPUS = 6
TRAIN = 7
BOOTSTRAP = 8


def stream(master_seed, *key):
    """Philox generator for ``master_seed`` and an integer key path."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(rng):
    """Draw a 63-bit integer seed from ``rng``."""
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))
