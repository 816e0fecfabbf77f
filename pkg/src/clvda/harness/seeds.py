"""Per-component random streams derived from one master seed.

A stream is keyed by ``(master_seed, crc32(component), replicate)`` through
``numpy.random.SeedSequence``'s spawn key, so adding a component or a grid
point never shifts the draws of another.
"""
import zlib

import numpy as np


def seed_sequence(master_seed: int, component: str, replicate: int = 0) -> np.random.SeedSequence:
    key = zlib.crc32(component.encode("utf-8"))
    return np.random.SeedSequence(int(master_seed), spawn_key=(key, int(replicate)))


def stream(master_seed: int, component: str, replicate: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, component, replicate))


def derived_seed(master_seed: int, component: str, replicate: int = 0) -> int:
    """A 63-bit integer seed for APIs that take plain integers."""
    state = seed_sequence(master_seed, component, replicate).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def fmt_param(value: float) -> str:
    return repr(float(value))
