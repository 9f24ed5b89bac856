"""Max-log bit LLRs from a pooled sample list, with saturation for one-sided bits."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .modem import Constellation, point_indices

SATURATION = 10.0


@dataclass(frozen=True)
class LlrVector:
    """Per-bit a-posteriori LLRs; positive favours logical bit 1."""

    values: np.ndarray
    saturated_mask: np.ndarray

    def extrinsic(self, prior) -> np.ndarray:
        """``L - L_a`` for iterative receivers."""
        return self.values - np.asarray(prior, dtype=np.float64)


def compute_llrs(samples, sqnorms, sigma2: float, constellation: Constellation, prior=None) -> LlrVector:
    """Max-log LLRs over the distinct vectors of a sample list.

    Parameters
    ----------
    samples : array, shape (L, N_t)
        Sample vectors as complex points or integer point indices.
    sqnorms : array, shape (L,)
        Squared residual norm of each sample.
    sigma2 : float
        Noise variance.
    prior : array, shape (N_t * log2 M,), optional
        A-priori LLRs; absent means zero.

    Notes
    -----
    Bit ``k`` gets ``min_{b_k=0} c(x) - min_{b_k=1} c(x)`` with
    ``c(x) = ||y - Hx||^2 / sigma2 - b^T L_a / 2`` and ``b`` in bipolar form.
    When no sample carries one of the two bit values the LLR saturates at
    ``+-10 / sigma2`` toward the value that was seen.
    """
    samples = np.asarray(samples)
    sqnorms = np.asarray(sqnorms, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("sample list must be a non-empty (L, N_t) array")
    if sqnorms.shape != (samples.shape[0],):
        raise ValueError("one squared residual per sample required")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    idx = point_indices(samples, constellation) if np.iscomplexobj(samples) else samples.astype(np.int64)
    uniq, first = np.unique(idx, axis=0, return_index=True)
    sq = sqnorms[first]
    bits = constellation.bit_labels[uniq].reshape(uniq.shape[0], -1).astype(np.float64)
    cost = sq / sigma2
    if prior is not None:
        prior = np.asarray(prior, dtype=np.float64)
        if prior.shape != (bits.shape[1],):
            raise ValueError(f"prior must have {bits.shape[1]} entries")
        cost = cost - 0.5 * ((2.0 * bits - 1.0) @ prior)
    one = bits == 1.0
    c = cost[:, None]
    min_plus = np.where(one, c, np.inf).min(axis=0)
    min_minus = np.where(~one, c, np.inf).min(axis=0)
    sat = SATURATION / sigma2
    values = np.where(
        np.isinf(min_minus), sat, np.where(np.isinf(min_plus), -sat, min_minus - min_plus)
    )
    return LlrVector(values=values, saturated_mask=np.isinf(min_plus) | np.isinf(min_minus))


def write_llr_dump(path, llrs) -> None:
    """CSV with one row per (trial, bit): trial, bit, llr, saturated."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "bit", "llr", "saturated"])
        for t, v in enumerate(llrs):
            for k, (val, s) in enumerate(zip(v.values, v.saturated_mask)):
                w.writerow([t, k, repr(float(val)), int(s)])
