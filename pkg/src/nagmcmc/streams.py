"""Counter-based random streams keyed by (master seed, SNR index, trial, role).

Each stochastic draw in a simulation comes from its own Philox stream so that
results do not depend on batch layout, worker count, or on how many numbers
another role consumed.
"""

from __future__ import annotations

import enum

import numpy as np

_MASK64 = (1 << 64) - 1


class Role(enum.IntEnum):
    CHANNEL = 0
    BITS = 1
    NOISE = 2
    ESTIMATION_ERROR = 3
    INIT = 4
    WALK = 5
    ACCEPT = 6


def trial_rng(seed: int, snr_index: int, trial: int, role: Role, attempt: int = 0) -> np.random.Generator:
    """Generator for one (trial, role) pair.

    ``attempt`` distinguishes redraws after a degenerate channel.
    """
    key = np.array([seed & _MASK64, ((snr_index & 0xFFFF) << 48) | (trial & ((1 << 48) - 1))], dtype=np.uint64)
    counter = np.array([0, 0, int(role), attempt], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given per-entry variance."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    g = rng.standard_normal(shape + (2,)).view(np.complex128)[..., 0]
    return g * np.sqrt(variance / 2.0)
