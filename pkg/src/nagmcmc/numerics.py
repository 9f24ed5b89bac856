"""Dense complex linear-algebra kernels and the scaled-column residual cache.

Every function accepts either a single matrix/vector or a stack of them with
arbitrary leading batch axes, so the Monte-Carlo engine can evaluate a whole
batch of channel realizations with one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when array shapes do not agree with an operation's contract."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot falls below :data:`PIVOT_TOL`.

    ``failed`` holds the flat batch indices of the offending matrices so that a
    caller can resample just those channel draws.
    """

    def __init__(self, message, failed=None):
        super().__init__(message)
        self.failed = np.asarray([] if failed is None else failed, dtype=np.int64)


def as_complex_matrix(a) -> np.ndarray:
    """Coerce to a complex128 array with at least two dimensions and finite entries."""
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    if a.shape[-1] == 0 or a.shape[-2] == 0:
        raise DimensionError(f"empty matrix of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def as_complex_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.complex128)
    if v.ndim < 1:
        raise DimensionError("expected a vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def hermitian(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def gram(H) -> np.ndarray:
    """Return ``H^H H``.

    Parameters
    ----------
    H : array_like, shape (..., N_r, N_t)
        Channel matrix or a stack of them.

    Returns
    -------
    ndarray, shape (..., N_t, N_t)
        Hermitian positive semi-definite Gram matrix.
    """
    H = as_complex_matrix(H)
    A = hermitian(H) @ H
    # symmetrize away rounding so downstream factorizations see an exact Hermitian
    return 0.5 * (A + hermitian(A))


def cholesky_lower(A) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^H = A`` and a real positive diagonal.

    Raises
    ------
    NotPositiveDefiniteError
        If any pivot ``L_jj**2`` is at or below :data:`PIVOT_TOL`.
    """
    A = as_complex_matrix(A)
    if A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"Cholesky needs a square matrix, got {A.shape}")
    batch = A.shape[:-2]
    flat = A.reshape((-1,) + A.shape[-2:])
    try:
        L = np.linalg.cholesky(flat)
    except np.linalg.LinAlgError:
        L = np.zeros_like(flat)
        bad = []
        for k, a in enumerate(flat):
            try:
                L[k] = np.linalg.cholesky(a)
            except np.linalg.LinAlgError:
                bad.append(k)
        raise NotPositiveDefiniteError(
            f"{len(bad)} matrix(es) not positive definite", failed=bad
        ) from None
    pivots = np.real(np.diagonal(L, axis1=-2, axis2=-1)) ** 2
    bad = np.flatnonzero(np.any(pivots <= PIVOT_TOL, axis=-1))
    if bad.size:
        raise NotPositiveDefiniteError(
            f"Cholesky pivot <= {PIVOT_TOL:g} in {bad.size} matrix(es)", failed=bad
        )
    return L.reshape(batch + A.shape[-2:])


def _lower_inverse(L: np.ndarray) -> np.ndarray:
    # forward substitution one row at a time, vectorized over the batch axes
    n = L.shape[-1]
    X = np.zeros_like(L)
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    for i in range(n):
        rhs = np.zeros(L.shape[:-2] + (n,), dtype=L.dtype)
        rhs[..., i] = 1.0
        rhs -= np.einsum("...k,...kj->...j", L[..., i, :i], X[..., :i, :])
        X[..., i, :] = rhs / diag[..., i, None]
    return X


def invert_hpd(A) -> np.ndarray:
    """Invert a Hermitian positive-definite matrix through its Cholesky factor.

    ``A^{-1} = L^{-H} L^{-1}`` with ``L^{-1}`` obtained by forward substitution.
    """
    L = cholesky_lower(A)
    Linv = _lower_inverse(L)
    Ainv = hermitian(Linv) @ Linv
    return 0.5 * (Ainv + hermitian(Ainv))


def frobenius_norm(A) -> np.ndarray | float:
    """Square root of the summed squared magnitudes over the last two axes."""
    A = as_complex_matrix(A)
    out = np.sqrt(np.sum(A.real**2 + A.imag**2, axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def lambda_max(A, rtol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Dominant eigenvalue of a Hermitian PSD matrix by power iteration.

    Test utility only; the detector itself uses the Frobenius bound.

    Raises
    ------
    RuntimeError
        If the Rayleigh quotient has not settled to ``rtol`` after ``max_iter``
        iterations.
    """
    A = as_complex_matrix(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected one square matrix, got {A.shape}")
    n = A.shape[0]
    v = np.random.default_rng(0x5EED).standard_normal((n, 2)).view(np.complex128)[:, 0]
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam_new = float(np.real(np.vdot(v, w)))
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            # one more Rayleigh quotient on the refined vector
            return float(np.real(np.vdot(v, A @ v)))
        lam = lam_new
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class ColumnCache:
    """Columns of ``H`` pre-scaled by every distinct positive per-axis QAM amplitude.

    ``scaled[..., j, l, :] = levels[l] * H[..., :, j]``. A constellation point
    on column ``j`` is assembled from two table entries (real and imaginary
    axis) by sign flips and a multiplication by ``1j``, so a residual needs no
    complex multiplications once the table exists. :meth:`product` evaluates
    the same signed sums as one batched product against ``columns``, which
    gives identical values up to rounding and is much faster in numpy.
    """

    scaled: np.ndarray
    levels: np.ndarray
    constellation_order: int
    columns: np.ndarray

    @property
    def n_tx(self) -> int:
        return self.scaled.shape[-3]

    def take(self, rows) -> "ColumnCache":
        """Restrict a batched cache to the given leading-axis rows (or add one with ``None``)."""
        return ColumnCache(self.scaled[rows], self.levels, self.constellation_order, self.columns[rows])

    def entry(self, j: int, idx_re: int, idx_im: int) -> np.ndarray:
        """Column ``j`` times one constellation point, read off the table."""
        side = 2 * self.levels.size
        p_re, s_re = _fold_axis_index(np.asarray(idx_re), side)
        p_im, s_im = _fold_axis_index(np.asarray(idx_im), side)
        return s_re * self.scaled[..., j, p_re, :] + 1j * s_im * self.scaled[..., j, p_im, :]

    def product(self, idx_re, idx_im) -> np.ndarray:
        """Return ``H x`` for vectors given by per-axis level indices.

        Parameters
        ----------
        idx_re, idx_im : int arrays, shape (*batch, ..., N_t)
            Axis-level indices (``0 .. sqrt(M)-1``) of each symbol. The leading
            axes must start with the cache's batch axes.
        """
        idx_re = np.asarray(idx_re)
        idx_im = np.asarray(idx_im)
        full = np.concatenate([-self.levels[::-1], self.levels])
        x = full[idx_re] + 1j * full[idx_im]
        batch_nd = self.columns.ndim - 2
        extra = x.ndim - batch_nd - 1
        if extra == 0:
            return np.einsum("...k,...kr->...r", x, self.columns)
        cols = self.columns.reshape(self.columns.shape[:batch_nd] + (1,) * (extra - 1) + self.columns.shape[batch_nd:])
        return x @ cols


def _fold_axis_index(idx, side):
    # axis index i sits at odd lattice value 2i - (side - 1)
    lattice = 2 * idx - (side - 1)
    return np.abs(lattice) // 2, np.sign(lattice).astype(np.float64)


def build_column_cache(H, constellation) -> ColumnCache:
    """Precompute every column of ``H`` scaled by each positive axis amplitude."""
    H = as_complex_matrix(H)
    levels = constellation.axis_levels[constellation.axis_levels > 0]
    cols = np.ascontiguousarray(np.swapaxes(H, -1, -2))  # (..., N_t, N_r)
    scaled = cols[..., :, None, :] * levels[:, None]
    return ColumnCache(scaled=scaled, levels=levels, constellation_order=constellation.order, columns=cols)


def residual(y, Hx) -> tuple[np.ndarray, np.ndarray | float]:
    """Return ``r = y - Hx`` and ``||r||^2`` over the last axis."""
    y = as_complex_vector(y)
    Hx = as_complex_vector(Hx)
    if y.shape[-1] != Hx.shape[-1]:
        raise DimensionError(f"length mismatch: {y.shape[-1]} vs {Hx.shape[-1]}")
    r = y - Hx
    sq = np.sum(r.real**2 + r.imag**2, axis=-1)
    return r, (float(sq) if sq.ndim == 0 else sq)
