"""Counter-based random streams.

Every random draw in the package comes from a stream keyed by
``(seed, sample index, role)``, so a sample's data never depends on which
batch it lands in or how work is scheduled.
"""

import numpy as np

ROLES = {
    "position": 0,
    "channel": 1,
    "noise": 2,
    "theta": 3,
    "init": 4,
    "warmup": 5,
    "crlb": 6,
}


def stream(seed: int, index: int, role: str) -> np.random.Generator:
    if role not in ROLES:
        raise KeyError(f"unknown stream role {role!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), ROLES[role]))
    return np.random.Generator(np.random.Philox(ss))


def complex_normal(gen: np.random.Generator, size) -> np.ndarray:
    """Standard circular complex Gaussian, E|z|^2 = 1."""
    z = gen.standard_normal((2,) + tuple(np.atleast_1d(size)))
    return (z[0] + 1j * z[1]) / np.sqrt(2.0)
