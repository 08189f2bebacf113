"""
Counter-based random sub-streams.

Every draw in the package comes from a numpy ``Philox`` generator whose
``SeedSequence`` is keyed by ``(master seed, *prefix, *key)``. Initialization
uses the key layout ``(network, layer, role, head, row)``, so network ``k``
sees the same numbers whatever the total number of networks is.
"""
from enum import IntEnum
from typing import Tuple

import numpy as np


class StreamRole(IntEnum):
    QUERY = 0
    KEY = 1
    VALUE = 2
    W1 = 3
    B1 = 4
    W2 = 5
    B2 = 6
    FINAL = 7
    DATA = 10
    MONTE_CARLO = 11
    PERTURBATION = 12
    BOOTSTRAP = 13
    SIGNS = 14
    THETAS = 15
    TRAINING = 16
    VALIDATION = 17


class RandomStreams:
    def __init__(self, seed: int, prefix: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.prefix = tuple(int(k) for k in prefix)

    def child(self, *key: int) -> "RandomStreams":
        return RandomStreams(self.seed, self.prefix + tuple(int(k) for k in key))

    def generator(self, *key: int) -> np.random.Generator:
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=self.prefix + tuple(int(k) for k in key)
        )
        return np.random.Generator(np.random.Philox(sequence))

    def derive_seed(self, *key: int) -> int:
        """Derive a 64-bit integer seed for a nested component."""
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=self.prefix + tuple(int(k) for k in key)
        )
        low, high = (int(word) for word in sequence.generate_state(2, dtype=np.uint32))
        return low | (high << 32)

    def __repr__(self) -> str:
        return f"RandomStreams(seed={self.seed}, prefix={self.prefix})"
