"""Deterministic seed derivation.

Every random stream in the package is keyed by a tuple of integers fed to
:class:`numpy.random.SeedSequence`.  The first key is a domain tag so that
oracle runs and experiment runs can never share a stream.
"""

import struct

import numpy as np

DOMAIN_COMPONENT = 0x0C0
DOMAIN_EXPERIMENT = 0xE1
DOMAIN_ORACLE = 0x0A
DOMAIN_CHECK = 0xC4


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 63-bit seed."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def float_key(x: float) -> int:
    """Bit pattern of a float, usable as a seed key."""
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]
