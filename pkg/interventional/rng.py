"""Named counter-based random streams

Every random draw in the package comes from ``stream(seed, *names)``. A stream is a Philox generator
keyed by the seed and a digest of its name, so streams for different columns, folds, replicates or
oracle blocks never overlap and do not depend on the order in which they are created.
"""

import hashlib

import numpy as np


def _name_key(name: object) -> int:
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *names: object) -> np.random.Generator:
    """
    A generator for the stream identified by a seed and a path of names.

    Args:
        seed (int): The run seed, a non-negative integer
        names: The stream path, e.g. ("bootstrap", 17) or ("covariate", 0)

    Returns:
        np.random.Generator: A Philox-backed generator
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed)] + [_name_key(name) for name in names]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
