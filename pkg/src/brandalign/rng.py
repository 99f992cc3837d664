"""Labeled random substreams.

All randomness in the package flows from one user-supplied 64-bit seed.
Each consumer derives its own generator from (seed, label, ...), so adding
a new consumer never perturbs the draws of an existing one.
"""

import zlib

import numpy as np


def substream(seed: int, *labels) -> np.random.Generator:
    """Return a Generator keyed by the seed plus a tuple of labels.

    Labels may be strings or integers; strings are hashed with crc32 so the
    derivation is stable across processes and platforms.
    """
    entropy = [seed & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            entropy.append(zlib.crc32(label.encode("utf-8")))
        else:
            entropy.append(int(label) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
