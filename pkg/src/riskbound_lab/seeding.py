"""Seed derivation shared by every randomized routine."""
import numpy as np


def mix_seed(*parts):
    """Deterministically mix nonnegative integers into one 64-bit seed.

    Backed by numpy's SeedSequence hashing, so the mapping is fixed across
    platforms and independent of call order.
    """
    for p in parts:
        if int(p) < 0:
            raise ValueError(f"seed parts must be nonnegative, got {p}")
    # the length prefix keeps (a, b) and (a, b, 0) apart; SeedSequence pads with zeros
    ss = np.random.SeedSequence([len(parts)] + [int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(*parts):
    return np.random.default_rng(mix_seed(*parts))
