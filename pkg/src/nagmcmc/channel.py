"""Rayleigh channel draws, noisy observations at a target SNR, and CSI errors."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .streams import complex_normal


@dataclass(frozen=True)
class ChannelInstance:
    H: np.ndarray
    sigma2: float
    snr_db: float
    x_true: np.ndarray
    y: np.ndarray
    bits_true: np.ndarray


def sample_rayleigh(n_rx: int, n_tx: int, rng: np.random.Generator, batch=()) -> np.ndarray:
    """i.i.d. CN(0, 1/N_r) entries; ``batch`` prepends leading axes."""
    if n_rx < 1 or n_tx < 1:
        raise ValueError("antenna counts must be positive")
    batch = (batch,) if np.isscalar(batch) else tuple(batch)
    return complex_normal(rng, batch + (n_rx, n_tx), variance=1.0 / n_rx)


def noise_variance_for_snr(snr_db: float, n_rx: int, n_tx: int) -> float:
    """Noise variance giving ``E||Hx||^2 / E||n||^2 = 10**(snr_db/10)``.

    With CN(0, 1/N_r) fading and unit-energy symbols ``E||Hx||^2 = N_t``,
    while ``E||n||^2 = N_r sigma^2``.
    """
    if not np.isfinite(snr_db):
        if snr_db > 0:
            return 0.0
        raise ValueError("snr_db must be finite or +inf")
    return n_tx / (n_rx * 10.0 ** (snr_db / 10.0))


def transmit(H, x, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """``y = H x + n`` with ``n ~ CN(0, sigma2 I)``."""
    H = np.asarray(H, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    if H.shape[-1] != x.shape[-1]:
        raise ValueError(f"H has {H.shape[-1]} columns but x has length {x.shape[-1]}")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    Hx = np.einsum("...ij,...j->...i", H, x)
    if sigma2 == 0:
        return Hx
    return Hx + complex_normal(rng, Hx.shape, variance=sigma2)


def estimation_error_variance(nmse: float, n_rx: int) -> float:
    """Per-entry variance of the CSI error for a given NMSE.

    ``E||dH||_F^2 = N_r N_t s`` and ``E||H||_F^2 = N_t``, so ``s = nmse / N_r``.
    """
    return nmse / n_rx


def perturb_channel(H, nmse: float, rng: np.random.Generator) -> np.ndarray:
    """Return the receiver's estimate ``H + dH``.

    The error is drawn as a unit-variance matrix scaled afterwards, and it is
    drawn even for ``nmse = 0``, so one stream yields nested perturbations
    across NMSE levels.
    """
    if not 0 <= nmse < 1:
        raise ValueError("nmse must lie in [0, 1)")
    H = np.asarray(H, dtype=np.complex128)
    G = complex_normal(rng, H.shape)
    return H + np.sqrt(estimation_error_variance(nmse, H.shape[-2])) * G


def write_channel_dump(path, instances) -> None:
    """CSV dump of ``H``, ``y`` and ``x_true`` per trial for regression comparisons.

    One row per matrix/vector entry: trial, quantity, row, col, real, imag.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "quantity", "row", "col", "real", "imag"])
        for t, inst in enumerate(instances):
            for (i, j), v in np.ndenumerate(inst.H):
                w.writerow([t, "H", i, j, repr(float(v.real)), repr(float(v.imag))])
            for name in ("y", "x_true"):
                for i, v in enumerate(getattr(inst, name)):
                    w.writerow([t, name, i, 0, repr(float(v.real)), repr(float(v.imag))])
