"""Square QAM constellations with per-axis Gray labels, bit mapping and Q(.).

Bit convention: bits are stored as 0/1 integers. Logical bit 1 corresponds to
the "+1" value of a bipolar bit, which is how the soft-output code reads them.
Within a symbol's label the real-axis bits come first, most significant first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64)

# |frac - 0.5| below this is treated as an exact quantizer midpoint
_TIE_TOL = 1e-9


class UnsupportedOrderError(ValueError):
    pass


class NotAConstellationPointError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-energy square QAM alphabet.

    Points are indexed ``k = i_re * side + i_im`` where ``i_re`` and ``i_im``
    index :attr:`axis_levels` (ascending).
    """

    order: int
    points: np.ndarray
    bit_labels: np.ndarray
    axis_levels: np.ndarray
    scale: float
    d_qam: float
    axis_gray: np.ndarray = field(repr=False)

    @property
    def side(self) -> int:
        return self.axis_levels.size

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def bits_per_axis(self) -> int:
        return self.bits_per_symbol // 2

    def point_index(self, idx_re, idx_im):
        return np.asarray(idx_re) * self.side + np.asarray(idx_im)

    def split_index(self, k):
        return np.divmod(np.asarray(k), self.side)


def _gray(i):
    return i ^ (i >> 1)


def _int_to_bits(v, width):
    shifts = np.arange(width - 1, -1, -1)
    return ((np.asarray(v)[..., None] >> shifts) & 1).astype(np.uint8)


@lru_cache(maxsize=None)
def build_constellation(M: int) -> Constellation:
    """Build the Gray-labelled, unit-energy square ``M``-QAM constellation.

    >>> c = build_constellation(16)
    >>> round(c.d_qam, 4)
    0.3162
    """
    if M not in SUPPORTED_ORDERS:
        raise UnsupportedOrderError(f"unsupported QAM order {M}; choose from {SUPPORTED_ORDERS}")
    side = int(round(np.sqrt(M)))
    scale = float(np.sqrt(3.0 / (2.0 * (M - 1))))
    levels = (2.0 * np.arange(side) - (side - 1)) * scale
    i_re, i_im = np.divmod(np.arange(M), side)
    points = levels[i_re] + 1j * levels[i_im]
    axis_gray = _gray(np.arange(side))
    half = int(np.log2(side))
    labels = np.concatenate(
        [_int_to_bits(axis_gray[i_re], half), _int_to_bits(axis_gray[i_im], half)], axis=-1
    )
    for arr in (points, labels, levels, axis_gray):
        arr.setflags(write=False)
    # adjacent lattice points are 2*scale apart
    return Constellation(
        order=M,
        points=points,
        bit_labels=labels,
        axis_levels=levels,
        scale=scale,
        d_qam=scale,
        axis_gray=axis_gray,
    )


def _label_to_index_table(c: Constellation) -> np.ndarray:
    weights = 1 << np.arange(c.bits_per_symbol - 1, -1, -1)
    table = np.empty(c.order, dtype=np.int64)
    table[c.bit_labels.astype(np.int64) @ weights] = np.arange(c.order)
    return table


def modulate(bits, c: Constellation, n_tx: int | None = None) -> np.ndarray:
    """Map consecutive ``log2(M)``-bit groups to constellation points.

    ``bits`` may carry leading batch axes; the last axis holds the bit stream
    of one symbol vector.
    """
    bits = np.asarray(bits)
    bps = c.bits_per_symbol
    if bits.shape[-1] % bps or (n_tx is not None and bits.shape[-1] != n_tx * bps):
        raise ValueError(
            f"bit vector length {bits.shape[-1]} incompatible with {bps} bits/symbol"
            + (f" and N_t={n_tx}" if n_tx is not None else "")
        )
    groups = bits.reshape(bits.shape[:-1] + (-1, bps)).astype(np.int64)
    weights = 1 << np.arange(bps - 1, -1, -1)
    return c.points[_label_to_index_table(c)[groups @ weights]]


def point_indices(x, c: Constellation, atol: float = 1e-9) -> np.ndarray:
    """Return the constellation index of every entry of ``x``.

    Raises
    ------
    NotAConstellationPointError
        If an entry is farther than ``atol`` from every point.
    """
    x = np.asarray(x, dtype=np.complex128)
    k = c.point_index(*quantize_indices(x, c))
    if np.any(np.abs(c.points[k] - x) > atol):
        raise NotAConstellationPointError("input contains values that are not constellation points")
    return k


def demodulate_hard(x, c: Constellation) -> np.ndarray:
    """Inverse of :func:`modulate` for exact constellation points."""
    k = point_indices(x, c)
    return c.bit_labels[k].reshape(k.shape[:-1] + (-1,))


def _axis_quantize(v: np.ndarray, c: Constellation) -> np.ndarray:
    side = c.side
    u = v * (0.5 / c.scale)
    u += (side - 1) / 2.0
    idx = np.rint(u)
    off = np.abs(u - idx)
    tie = off >= 0.5 - _TIE_TOL
    if np.any(tie):
        # midpoint: snap to the smaller-magnitude level; at the origin take the positive one
        lo = np.floor(u)
        centre = (side - 1) / 2.0
        toward = np.where(lo + 0.5 >= centre, lo, lo + 1)
        toward = np.where(np.abs(lo + 0.5 - centre) <= _TIE_TOL, lo + 1, toward)
        idx = np.where(tie, toward, idx)
    np.clip(idx, 0, side - 1, out=idx)
    return idx.astype(np.int64)


def quantize_indices(z, c: Constellation) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis level indices of the nearest constellation point to each entry."""
    z = np.asarray(z, dtype=np.complex128)
    return _axis_quantize(z.real, c), _axis_quantize(z.imag, c)


def qam_quantize(z, c: Constellation) -> np.ndarray:
    """Elementwise nearest-point mapping Q(.) onto the constellation."""
    i_re, i_im = quantize_indices(z, c)
    return c.axis_levels[i_re] + 1j * c.axis_levels[i_im]


def bits_from_indices(k, c: Constellation) -> np.ndarray:
    """Flattened bit labels for an array of point indices (last axis = symbols)."""
    k = np.asarray(k)
    return c.bit_labels[k].reshape(k.shape[:-1] + (-1,))


def label_table_rows(c: Constellation):
    for k in range(c.order):
        yield k, float(c.points[k].real), float(c.points[k].imag), "".join(map(str, c.bit_labels[k]))


def write_label_table(path, M: int) -> None:
    """Write the golden label table: point index, real, imag, bit label."""
    c = build_constellation(M)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "real", "imag", "label"])
        for k, re, im, lab in label_table_rows(c):
            w.writerow([k, f"{re:.17g}", f"{im:.17g}", lab])


if __name__ == "__main__":
    import sys

    if len(sys.argv) != 3:
        sys.exit("usage: python -m nagmcmc.modem ORDER OUT.csv")
    write_label_table(sys.argv[2], int(sys.argv[1]))
