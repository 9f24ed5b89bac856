"""Reference detectors: ZF, MMSE, exhaustive ML, and plain descent traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modem import Constellation, qam_quantize
from .numerics import as_complex_matrix, frobenius_norm, gram, hermitian, invert_hpd
from .opcount import OpCounter, charge

ML_MAX_CANDIDATES = 1 << 24
_ML_CHUNK_ELEMS = 1 << 22


class SearchSpaceTooLargeError(ValueError):
    pass


def _matvec(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def zf_filter(H, y) -> np.ndarray:
    """Unconstrained least-squares solution ``(H^H H)^{-1} H^H y``."""
    H = as_complex_matrix(H)
    return _matvec(invert_hpd(gram(H)), _matvec(hermitian(H), y))


def detect_zf(H, y, constellation: Constellation) -> np.ndarray:
    """Zero-forcing: quantized least-squares solution.

    Raises ``NotPositiveDefiniteError`` for a rank-deficient channel.
    """
    return qam_quantize(zf_filter(H, y), constellation)


def mmse_filter(H, y, sigma2, counter: OpCounter | None = None) -> np.ndarray:
    """Unquantized MMSE estimate ``(H^H H + sigma2 I)^{-1} H^H y`` for unit-energy symbols.

    ``sigma2`` may be a scalar or carry the batch shape of ``H``.
    """
    H = as_complex_matrix(H)
    n_rx, n_tx = H.shape[-2:]
    s2 = np.asarray(sigma2, dtype=np.float64)[..., None, None]
    A = gram(H) + s2 * np.eye(n_tx)
    W = invert_hpd(A)
    charge(counter, "preprocessing", n_rx * n_tx**2 + 2 * (n_tx**3 + n_tx))
    charge(counter, "decision", n_rx * n_tx + n_tx**2)
    return _matvec(W, _matvec(hermitian(H), y))


def detect_mmse(H, y, sigma2, constellation: Constellation, counter: OpCounter | None = None) -> np.ndarray:
    return qam_quantize(mmse_filter(H, y, sigma2, counter), constellation)


def _enumerate(n_sym: int, order: int) -> np.ndarray:
    # lexicographic: first symbol most significant
    k = np.arange(order**n_sym)
    digits = np.empty((k.size, n_sym), dtype=np.int64)
    for j in range(n_sym - 1, -1, -1):
        k, digits[:, j] = np.divmod(k, order)
    return digits


def detect_ml_exhaustive(H, y, constellation: Constellation, return_sqnorm: bool = False):
    """Exact ``argmin ||y - Hx||^2`` over the full product constellation.

    Ties resolve to the lexicographically smallest symbol-index vector. The
    search splits the columns in two halves and evaluates all pairwise costs
    as ``|u|^2 + |v|^2 - 2 Re(u^H v)`` with one matrix product per block.

    Raises
    ------
    SearchSpaceTooLargeError
        If ``M**N_t`` exceeds :data:`ML_MAX_CANDIDATES`.
    """
    H = as_complex_matrix(H)
    y = np.asarray(y, dtype=np.complex128)
    batch = H.shape[:-2]
    n_rx, n_tx = H.shape[-2:]
    M = constellation.order
    if M**n_tx > ML_MAX_CANDIDATES:
        raise SearchSpaceTooLargeError(f"{M}^{n_tx} candidates exceed the 2^24 cap")
    Hf = H.reshape((-1, n_rx, n_tx))
    yf = y.reshape((-1, n_rx))
    n1 = n_tx // 2
    n2 = n_tx - n1
    d1 = _enumerate(n1, M)
    d2 = _enumerate(n2, M)
    X1 = constellation.points[d1]  # (K1, n1)
    X2 = constellation.points[d2]
    K1, K2 = len(d1), len(d2)
    best = np.empty((Hf.shape[0], n_tx), dtype=np.int64)
    best_sq = np.empty(Hf.shape[0])
    chunk = max(1, _ML_CHUNK_ELEMS // (K1 * K2))
    for s in range(0, Hf.shape[0], chunk):
        Hc, yc = Hf[s : s + chunk], yf[s : s + chunk]
        U = yc[:, None, :] - X1 @ np.swapaxes(Hc[:, :, :n1], -1, -2)  # (b, K1, N_r)
        V = X2 @ np.swapaxes(Hc[:, :, n1:], -1, -2)  # (b, K2, N_r)
        cost = (
            np.sum(U.real**2 + U.imag**2, axis=-1)[:, :, None]
            + np.sum(V.real**2 + V.imag**2, axis=-1)[:, None, :]
            - 2.0 * np.real(np.conj(U) @ np.swapaxes(V, -1, -2))
        )
        flat = cost.reshape(cost.shape[0], -1)
        k = np.argmin(flat, axis=1)
        i, j = np.divmod(k, K2)
        best[s : s + chunk] = np.concatenate([d1[i], d2[j]], axis=1)
    x = constellation.points[best]
    r = yf - _matvec(Hf, x)
    best_sq = np.sum(r.real**2 + r.imag**2, axis=-1)
    x = x.reshape(batch + (n_tx,))
    if return_sqnorm:
        return x, best_sq.reshape(batch)
    return x


@dataclass(frozen=True)
class DescentTrace:
    method: str
    residual_norms: np.ndarray


def descent_trace(H, y, z0, method: str, T: int, rho: float = 0.9) -> DescentTrace:
    """Residual norm ``||y - H z_t||`` for ``t = 0..T`` of a continuous descent.

    ``method`` is ``"naive-linesearch"`` (steepest descent with the exact
    quadratic step ``||g||^2 / g^H A g``) or ``"nesterov"`` (lookahead momentum
    ``rho`` with learning rate ``1/||H^H H||_F``).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    H = as_complex_matrix(H)
    y = np.asarray(y, dtype=np.complex128)
    A = gram(H)
    hy = _matvec(hermitian(H), y)
    z = np.asarray(z0, dtype=np.complex128).copy()

    def norm_r(v):
        return np.linalg.norm(y - _matvec(H, v), axis=-1)

    out = [norm_r(z)]
    if method == "naive-linesearch":
        for _ in range(T):
            g = _matvec(A, z) - hy
            gg = np.sum(np.abs(g) ** 2, axis=-1)
            gAg = np.real(np.sum(np.conj(g) * _matvec(A, g), axis=-1))
            step = np.divide(gg, gAg, out=np.zeros_like(gg), where=gAg > 0)
            z = z - step[..., None] * g
            out.append(norm_r(z))
    elif method == "nesterov":
        tau = 1.0 / np.asarray(frobenius_norm(A))
        dz = np.zeros_like(z)
        for _ in range(T):
            p = z + rho * dz
            z_new = p + tau[..., None] * (hy - _matvec(A, p))
            dz = z_new - z
            z = z_new
            out.append(norm_r(z))
    else:
        raise ValueError(f"unknown descent method {method!r}")
    return DescentTrace(method=method, residual_norms=np.stack(out, axis=-1))
