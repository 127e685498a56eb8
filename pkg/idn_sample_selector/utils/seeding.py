"""
Named random streams derived from a single root seed
"""
import zlib

import numpy as np


class SeedStreams:
    """
    Hands out one independent numpy Generator per stream name.

    The same (root seed, name) pair always yields the same sequence, so changing
    how one stream is consumed never perturbs another.
    """

    def __init__(self, root_seed):
        """
        Args:
            root_seed: Non-negative integer root seed
        """
        self.root_seed = int(root_seed)

    def sequence(self, name):
        return np.random.SeedSequence([self.root_seed, zlib.crc32(name.encode("utf-8"))])

    def generator(self, name):
        """
        Create a fresh generator for a named stream

        Args:
            name: Stream name, e.g. "data", "noise", "model-init"

        Returns:
            numpy.random.Generator positioned at the start of the stream
        """
        return np.random.default_rng(self.sequence(name))

    def child_seed(self, name):
        """Integer seed for APIs that take a plain seed rather than a generator"""
        return int(self.sequence(name).generate_state(1, dtype=np.uint32)[0])
