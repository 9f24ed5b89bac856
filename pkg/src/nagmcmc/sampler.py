"""Nesterov-accelerated gradient MCMC detection.

Each of ``P`` parallel samplers repeats, ``S`` times: a burst of ``N_g``
Nesterov descent steps started from the current discrete sample, a Gaussian
random walk shaped by the row-normalized Cholesky factor of ``(H^H H)^{-1}``,
QAM mapping, and a Metropolis-Hastings acceptance test on the squared
residual. Optional sample augmentation quantizes every intermediate descent
iterate into an extra candidate; optional early stopping halts all samplers
once more than half of them agree on a sufficiently small-residual best
sample.

The engine (:func:`sample_batch`) works on whole batches of independent
detections at once: arrays are laid out ``(trial, sampler, ...)``. The
per-detection functions below it are thin views over the same kernels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .detectors import mmse_filter
from .modem import Constellation, bits_from_indices, point_indices, quantize_indices
from .numerics import (
    NotPositiveDefiniteError,
    build_column_cache,
    cholesky_lower,
    frobenius_norm,
    gram,
    hermitian,
    invert_hpd,
    ColumnCache,
)
from .opcount import OpCounter, charge
from .streams import complex_normal

log = logging.getLogger(__name__)

INIT_MODES = ("random", "mmse")
_LOG_ALPHA_FLOOR = -745.0


@dataclass(frozen=True)
class SamplerParams:
    """Sampler configuration.

    ``beta=None`` selects the dimension rule ``(N_t/8)**(-1/3)``.
    The descent momentum is zeroed once per chain and then threaded from one
    burst into the next; ``carry_momentum=False`` zeroes it at the start of
    every burst instead (ablation). ``acceptance_temperature``
    scales the acceptance exponent by ``1/sigma^2`` (sensitivity studies only).
    """

    P: int = 16
    S: int = 8
    Ng: int = 8
    rho: float = 0.9
    beta: float | None = None
    eta: float = 1.5
    enable_sa: bool = False
    enable_es: bool = False
    init_mode: str = "random"
    carry_momentum: bool = True
    acceptance_temperature: bool = False

    def __post_init__(self):
        errors = []
        if self.P < 1:
            errors.append("P must be >= 1")
        if self.S < 1:
            errors.append("S must be >= 1")
        if self.Ng < 1:
            errors.append("Ng must be >= 1")
        if not 0 <= self.rho <= 1:
            errors.append("rho must lie in [0, 1]")
        if self.eta <= 0:
            errors.append("eta must be > 0")
        if self.beta is not None and self.beta <= 0:
            errors.append("beta must be > 0")
        if self.init_mode not in INIT_MODES:
            errors.append(f"init_mode must be one of {INIT_MODES}")
        if errors:
            raise ValueError("; ".join(errors))

    def beta_for(self, n_tx: int) -> float:
        return default_beta(n_tx) if self.beta is None else float(self.beta)


def default_beta(n_tx: int) -> float:
    """Random-walk coefficient ``(N_t/8)**(-1/3)``; 1 at ``N_t=8``, 0.5 at ``N_t=64``."""
    return (n_tx / 8.0) ** (-1.0 / 3.0)


@dataclass(frozen=True, eq=False)
class SamplerContext:
    """Per-channel quantities shared by all samplers of a detection.

    Arrays either describe one detection (``H`` of shape ``(N_r, N_t)``) or
    a batch (``H`` of shape ``(B, N_r, N_t)``, everything else with the same
    leading axis).
    """

    H: np.ndarray
    y: np.ndarray
    sigma2: np.ndarray | float
    gram: np.ndarray
    hy: np.ndarray
    tau: np.ndarray | float
    Mc: np.ndarray
    cache: ColumnCache
    constellation: Constellation

    @property
    def n_rx(self) -> int:
        return self.H.shape[-2]

    @property
    def n_tx(self) -> int:
        return self.H.shape[-1]

    @property
    def d_qam(self) -> float:
        return self.constellation.d_qam

    @property
    def batched(self) -> bool:
        return self.H.ndim == 3

    def as_batch(self) -> "SamplerContext":
        if self.batched:
            return self
        return SamplerContext(
            H=self.H[None],
            y=self.y[None],
            sigma2=np.atleast_1d(np.asarray(self.sigma2, dtype=np.float64)),
            gram=self.gram[None],
            hy=self.hy[None],
            tau=np.atleast_1d(np.asarray(self.tau, dtype=np.float64)),
            Mc=self.Mc[None],
            cache=self.cache.take(None),
            constellation=self.constellation,
        )

    def take(self, rows) -> "SamplerContext":
        """Sub-batch view for the given trial rows (batched contexts only)."""
        return SamplerContext(
            H=self.H[rows],
            y=self.y[rows],
            sigma2=self.sigma2[rows],
            gram=self.gram[rows],
            hy=self.hy[rows],
            tau=self.tau[rows],
            Mc=self.Mc[rows],
            cache=self.cache.take(rows),
            constellation=self.constellation,
        )


def random_walk_factor(A) -> np.ndarray:
    """Row-normalized lower Cholesky factor of ``A^{-1}`` for a Gram matrix ``A``."""
    L = cholesky_lower(invert_hpd(A))
    return L / np.linalg.norm(L, axis=-1, keepdims=True)


def precompute(
    H,
    y,
    sigma2,
    constellation: Constellation,
    params: SamplerParams | None = None,
    *,
    fallback_identity: bool = False,
    counter: OpCounter | None = None,
) -> SamplerContext:
    """Learning rate, random-walk factor and column cache for one or many channels.

    Raises
    ------
    NotPositiveDefiniteError
        If ``H^H H`` is numerically singular, unless ``fallback_identity`` is
        set, in which case the random-walk factor becomes the identity for
        the affected channels (logged).
    """
    H = np.asarray(H, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    A = gram(H)
    n_rx, n_tx = H.shape[-2:]
    try:
        Mc = random_walk_factor(A)
    except NotPositiveDefiniteError as err:
        if not fallback_identity:
            raise
        log.warning("singular channel: falling back to identity random-walk covariance")
        flat = A.reshape((-1, n_tx, n_tx))
        Mc = np.empty_like(flat)
        bad = set(err.failed.tolist())
        for k in range(flat.shape[0]):
            Mc[k] = np.eye(n_tx) if k in bad else random_walk_factor(flat[k])
        Mc = Mc.reshape(A.shape)
    tau = 1.0 / np.asarray(frobenius_norm(A))
    hy = np.einsum("...ij,...j->...i", hermitian(H), y)
    charge(counter, "preprocessing", _preprocessing_cost(n_rx, n_tx, constellation.order))
    if H.ndim > 2:
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), H.shape[:-2]).copy()
    return SamplerContext(
        H=H,
        y=y,
        sigma2=np.asarray(sigma2, dtype=np.float64) if np.ndim(sigma2) else float(sigma2),
        gram=A,
        hy=hy,
        tau=tau if np.ndim(tau) else float(tau),
        Mc=Mc,
        cache=build_column_cache(H, constellation),
        constellation=constellation,
    )


def _align(ctx_arr, x, ctx_batch_nd):
    """Insert singleton axes so a per-channel array broadcasts against ``x``."""
    a = np.asarray(ctx_arr)
    extra = x.ndim - 1 - ctx_batch_nd
    core = a.shape[ctx_batch_nd:]
    return a.reshape(a.shape[:ctx_batch_nd] + (1,) * extra + core)


def _apply(mat, v, batch_nd):
    # mat (*batch, n, n) applied to v (*batch, ..., n)
    extra = v.ndim - 1 - batch_nd
    if batch_nd == 0:
        return v @ mat.T
    m = mat.reshape(mat.shape[:batch_nd] + (1,) * max(extra - 1, 0) + mat.shape[batch_nd:])
    if extra == 0:
        return np.einsum("...ij,...j->...i", mat, v)
    return v @ np.swapaxes(m, -1, -2)


def _descent_step(ctx, z, dz, rho, batch_nd):
    p = z + rho * dz
    z_new = p + _align(ctx.tau, z, batch_nd)[..., None] * (_align(ctx.hy, z, batch_nd) - _apply(ctx.gram, p, batch_nd))
    return z_new, z_new - z


def nesterov_burst(ctx: SamplerContext, x_start, Ng: int, rho: float = 0.9, dz0=None, return_momentum: bool = False):
    """Run ``Ng`` Nesterov steps from ``x_start`` and return the trajectory.

    ``p_t = z_{t-1} + rho dz_{t-1}``, ``z_t = p_t + tau H^H (y - H p_t)``,
    ``dz_t = z_t - z_{t-1}``, with ``dz_0 = 0`` unless ``dz0`` is given.

    Returns
    -------
    ndarray, shape (Ng, ..., N_t)
        ``z_1 .. z_Ng``. With ``return_momentum`` also the final ``dz``.
    """
    if Ng < 1:
        raise ValueError("Ng must be >= 1")
    batch_nd = ctx.H.ndim - 2
    z = np.asarray(x_start, dtype=np.complex128)
    dz = np.zeros_like(z) if dz0 is None else np.asarray(dz0, dtype=np.complex128)
    traj = []
    for _ in range(Ng):
        z, dz = _descent_step(ctx, z, dz, rho, batch_nd)
        traj.append(z)
    traj = np.stack(traj)
    return (traj, dz) if return_momentum else traj


def update_step_size(r_sqnorm, n_rx: int, d_qam: float, beta: float):
    """Random-walk magnitude ``max(d_qam, ||r||/sqrt(N_r)) * beta``."""
    return np.maximum(d_qam, np.sqrt(r_sqnorm) / np.sqrt(n_rx)) * beta


def propose(ctx: SamplerContext, z_grad, gamma, rng: np.random.Generator | None = None, w=None):
    """Perturb ``z_grad`` by ``gamma * Mc w`` and map onto the constellation.

    ``w`` defaults to a fresh standard complex Gaussian draw from ``rng``.
    Returns ``(z_prop, x_prop)``.
    """
    z_grad = np.asarray(z_grad, dtype=np.complex128)
    if w is None:
        w = complex_normal(rng, z_grad.shape)
    batch_nd = ctx.H.ndim - 2
    z_prop = z_grad + np.asarray(gamma)[..., None] * _apply(ctx.Mc, w, batch_nd)
    i_re, i_im = quantize_indices(z_prop, ctx.constellation)
    levels = ctx.constellation.axis_levels
    return z_prop, levels[i_re] + 1j * levels[i_im]


def log_acceptance(r_prop_sqnorm, r_prev_sqnorm, temperature=1.0):
    """``log alpha = min(0, (||r_prev||^2 - ||r_prop||^2) * temperature)``, floored at -745."""
    d = (np.asarray(r_prev_sqnorm) - np.asarray(r_prop_sqnorm)) * temperature
    return np.clip(d, _LOG_ALPHA_FLOOR, 0.0)


def accept_test(r_prop_sqnorm, r_prev_sqnorm, rng: np.random.Generator | None = None, u=None, temperature=1.0):
    """Metropolis-Hastings test on squared residuals.

    Returns ``(accepted, alpha)``; a proposal is accepted iff ``alpha >= u``
    with ``u ~ U(0, 1)``.
    """
    alpha = np.exp(log_acceptance(r_prop_sqnorm, r_prev_sqnorm, temperature))
    if u is None:
        u = rng.random(np.shape(alpha))
    accepted = alpha >= u
    if np.ndim(accepted) == 0:
        return bool(accepted), float(alpha)
    return accepted, alpha


def es_check(best_x, best_sqnorm, n_rx: int, sigma2, eta: float = 1.5, constellation: Constellation | None = None):
    """Early-stopping test over the per-sampler best samples.

    Parameters
    ----------
    best_x : array, shape (..., P, N_t)
        Each sampler's running best sample, as integer constellation indices
        or as complex points (then ``constellation`` is required).
    best_sqnorm : array, shape (..., P)
    n_rx, sigma2, eta
        The residual threshold is ``eta * sqrt(N_r sigma2)``.

    Returns
    -------
    bool or bool array
        True iff more than ``P/2`` samplers hold the overall best sample
        (lowest residual, lowest sampler index on ties) and its residual norm
        is below the threshold.
    """
    best_x = np.asarray(best_x)
    if np.iscomplexobj(best_x):
        if constellation is None:
            raise ValueError("complex samples need the constellation for exact matching")
        best_x = point_indices(best_x, constellation)
    best_sqnorm = np.asarray(best_sqnorm, dtype=np.float64)
    P = best_sqnorm.shape[-1]
    pmin = np.argmin(best_sqnorm, axis=-1)
    x_min = np.take_along_axis(best_x, pmin[..., None, None], axis=-2)
    n_min = np.all(best_x == x_min, axis=-1).sum(axis=-1)
    l_min = np.sqrt(np.take_along_axis(best_sqnorm, pmin[..., None], axis=-1)[..., 0])
    stop = (n_min > P / 2) & (l_min < eta * np.sqrt(n_rx * np.asarray(sigma2)))
    return bool(stop) if np.ndim(stop) == 0 else stop


@dataclass
class SamplerDraws:
    """All random inputs of a batch of detections.

    ``init`` holds point indices ``(B, P, N_t)`` (ignored in MMSE init mode),
    ``w`` the walk noise ``(B, S, P, N_t)`` and ``u`` the acceptance uniforms
    ``(B, S, P)``.
    """

    init: np.ndarray | None
    w: np.ndarray
    u: np.ndarray

    @classmethod
    def from_rng(cls, rng: np.random.Generator, n_trials: int, params: SamplerParams, n_tx: int, order: int):
        init = rng.integers(0, order, size=(n_trials, params.P, n_tx))
        w = complex_normal(rng, (n_trials, params.S, params.P, n_tx))
        u = rng.random((n_trials, params.S, params.P))
        return cls(init=init, w=w, u=u)

    @classmethod
    def from_streams(cls, init_rngs, walk_rngs, accept_rngs, params: SamplerParams, n_tx: int, order: int):
        """Stack per-trial draws from separate per-role generators."""
        init = np.stack([g.integers(0, order, size=(params.P, n_tx)) for g in init_rngs])
        w = np.stack([complex_normal(g, (params.S, params.P, n_tx)) for g in walk_rngs])
        u = np.stack([g.random((params.S, params.P)) for g in accept_rngs])
        return cls(init=init, w=w, u=u)


@dataclass
class BatchOutcome:
    """Result of :func:`sample_batch` for ``B`` detections.

    ``x_hat_idx`` are point indices of the hard decisions; ``iterations`` the
    executed sampling iterations. ``es_fire`` is the first iteration at which
    the early-stopping criterion held (0 if never), evaluated whenever early
    stopping or tracing is on. ``trace_idx[b, s]`` / ``trace_sqnorm[b, s]``
    hold the pooled best after iteration ``s`` (``s = 0`` is the initial
    state); filled only in trace mode. ``samples_idx`` / ``samples_sqnorm``
    hold every sample ``(B, P, L, N_t)`` when requested, where ``L`` is
    ``S*Ng + 1`` with augmentation and ``S + 1`` without; entries past an
    early stop are ``-1`` / ``inf``. ``momentum`` is the final descent
    momentum ``(B, P, N_t)`` unless finished detections were dropped early.
    """

    x_hat_idx: np.ndarray
    x_hat_sqnorm: np.ndarray
    iterations: np.ndarray
    es_fire: np.ndarray
    counter: OpCounter
    trace_idx: np.ndarray | None = None
    trace_sqnorm: np.ndarray | None = None
    samples_idx: np.ndarray | None = None
    samples_sqnorm: np.ndarray | None = None
    accept_count: np.ndarray | None = None
    momentum: np.ndarray | None = None


def _sqnorm_of(ctx, i_re, i_im):
    # residual of quantized vectors through the scaled-column table
    r = ctx.y[:, None, :] - ctx.cache.product(i_re, i_im)
    return np.sum(r.real**2 + r.imag**2, axis=-1)


def sample_batch(
    ctx: SamplerContext,
    params: SamplerParams,
    draws: SamplerDraws,
    *,
    trace: bool = False,
    keep_samples: bool = False,
    counter: OpCounter | None = None,
) -> BatchOutcome:
    """Run ``P`` parallel samplers on each of ``B`` detections.

    With early stopping on and ``trace`` off, finished detections are dropped
    from the working set after the iteration in which they stop. With
    ``trace`` on, every detection runs all ``S`` iterations and the pooled
    best after each iteration is recorded; ``es_fire`` then tells where an
    early stop would have happened, and since stopping never alters the
    chains, the early-stopped decision equals ``trace_idx[b, es_fire[b]]``.
    """
    ctx = ctx.as_batch()
    c = ctx.constellation
    levels = c.axis_levels
    B, n_rx, n_tx = ctx.H.shape
    P, S, Ng = params.P, params.S, params.Ng
    M = c.order
    beta = params.beta_for(n_tx)
    temp = (1.0 / ctx.sigma2)[:, None] if params.acceptance_temperature else np.ones((B, 1))
    sa = params.enable_sa
    stop_early = params.enable_es and not trace
    if counter is None:
        counter = OpCounter(B)
    L = S * Ng + 1 if sa else S + 1

    # initial samples
    if params.init_mode == "mmse":
        z_init = mmse_filter(ctx.H, ctx.y, ctx.sigma2, counter=None)
        counter.add("preprocessing", n_rx * n_tx**2 + 2 * (n_tx**3 + n_tx) + n_rx * n_tx + n_tx**2)
        ir, ii = quantize_indices(np.broadcast_to(z_init[:, None, :], (B, P, n_tx)), c)
    else:
        ir, ii = c.split_index(draws.init)
    ir = np.ascontiguousarray(ir)
    ii = np.ascontiguousarray(ii)
    sq = _sqnorm_of(ctx, ir, ii)
    counter.add("walk", P * M * n_tx)
    counter.add("residual", P * n_rx)
    gamma = update_step_size(sq, n_rx, c.d_qam, beta)
    best_re, best_im, best_sq = ir.copy(), ii.copy(), sq.copy()
    dz = np.zeros((B, P, n_tx), dtype=np.complex128)

    out_idx = np.empty((B, n_tx), dtype=np.int64)
    out_sq = np.empty(B)
    iterations = np.full(B, S, dtype=np.int64)
    es_fire = np.zeros(B, dtype=np.int64)
    accept_count = np.zeros((B, P), dtype=np.int64)
    trace_idx = np.empty((B, S + 1, n_tx), dtype=np.int64) if trace else None
    trace_sq = np.empty((B, S + 1)) if trace else None
    if keep_samples:
        samples_idx = np.full((B, P, L, n_tx), -1, dtype=np.int16)
        samples_sq = np.full((B, P, L), np.inf)
        samples_idx[:, :, 0] = c.point_index(ir, ii)
        samples_sq[:, :, 0] = sq
    else:
        samples_idx = samples_sq = None

    rows = np.arange(B)  # active trial -> original row
    sub = ctx

    def pooled(bre, bim, bsq):
        p = np.argmin(bsq, axis=1)
        pick = p[:, None, None]
        k = c.point_index(np.take_along_axis(bre, pick, 1)[:, 0], np.take_along_axis(bim, pick, 1)[:, 0])
        return k, np.take_along_axis(bsq, p[:, None], 1)[:, 0]

    if trace:
        trace_idx[:, 0], trace_sq[:, 0] = pooled(best_re, best_im, best_sq)

    def absorb(nre, nim, nsq, slot):
        nonlocal best_re, best_im, best_sq
        better = nsq < best_sq
        best_sq = np.where(better, nsq, best_sq)
        best_re = np.where(better[..., None], nre, best_re)
        best_im = np.where(better[..., None], nim, best_im)
        if keep_samples:
            samples_idx[rows, :, slot] = c.point_index(nre, nim)
            samples_sq[rows, :, slot] = nsq

    per_iter_gd = P * Ng * (n_tx**2 + 2 * n_tx)
    per_iter_walk = P * (n_tx**2 + n_tx + M * n_tx)
    per_iter_res = P * (n_rx + ((Ng - 1) * (M * n_tx + n_rx) if sa else 0))

    for i in range(1, S + 1):
        b = rows.size
        counter.add("gd", per_iter_gd, rows)
        counter.add("walk", per_iter_walk, rows)
        counter.add("residual", per_iter_res, rows)

        z = levels[ir] + 1j * levels[ii]
        if not params.carry_momentum:
            dz = np.zeros_like(z)
        for t in range(1, Ng + 1):
            z, dz = _descent_step(sub, z, dz, params.rho, 1)
            if sa and t < Ng:
                sre, sim = quantize_indices(z, c)
                absorb(sre, sim, _sqnorm_of(sub, sre, sim), (i - 1) * Ng + t)

        w = draws.w[rows, i - 1]
        z_prop = z + gamma[..., None] * (w @ np.swapaxes(sub.Mc, -1, -2))
        pre, pim = quantize_indices(z_prop, c)
        psq = _sqnorm_of(sub, pre, pim)
        alpha = np.exp(log_acceptance(psq, sq, temp[rows]))
        acc = alpha >= draws.u[rows, i - 1]
        accept_count[rows] += acc
        ir = np.where(acc[..., None], pre, ir)
        ii = np.where(acc[..., None], pim, ii)
        sq = np.where(acc, psq, sq)
        gamma = update_step_size(sq, n_rx, c.d_qam, beta)
        absorb(ir, ii, sq, i * Ng if sa else i)

        if trace:
            trace_idx[rows, i], trace_sq[rows, i] = pooled(best_re, best_im, best_sq)

        if params.enable_es or trace:
            bk = c.point_index(best_re, best_im)
            fire = es_check(bk, best_sq, n_rx, sub.sigma2, params.eta)
            newly = fire & (es_fire[rows] == 0)
            es_fire[rows[newly]] = i
            if stop_early and (i == S or np.any(fire)):
                done = fire if i < S else np.ones(b, dtype=bool)
                k, s_ = pooled(best_re[done], best_im[done], best_sq[done])
                out_idx[rows[done]], out_sq[rows[done]] = k, s_
                iterations[rows[done]] = i
                keep = ~done
                rows = rows[keep]
                if rows.size == 0:
                    break
                sub = ctx.take(rows)
                ir, ii, sq, gamma, dz = ir[keep], ii[keep], sq[keep], gamma[keep], dz[keep]
                best_re, best_im, best_sq = best_re[keep], best_im[keep], best_sq[keep]

    if not stop_early:
        out_idx[:], out_sq[:] = pooled(best_re, best_im, best_sq)
        if params.enable_es:
            # trace mode with early stopping: report the decision at the stop
            fired = es_fire > 0
            iterations[fired] = es_fire[fired]
            out_idx[fired] = trace_idx[fired, es_fire[fired]]
            out_sq[fired] = trace_sq[fired, es_fire[fired]]
            if keep_samples:
                _blank_after_stop(samples_idx, samples_sq, es_fire, Ng if sa else 1)
            _refund_after_stop(counter, es_fire, S, per_iter_gd, per_iter_walk, per_iter_res)

    return BatchOutcome(
        x_hat_idx=out_idx,
        x_hat_sqnorm=out_sq,
        iterations=iterations,
        es_fire=es_fire,
        counter=counter,
        trace_idx=trace_idx,
        trace_sqnorm=trace_sq,
        samples_idx=samples_idx,
        samples_sqnorm=samples_sq,
        accept_count=accept_count,
        momentum=None if stop_early else dz,
    )


def _blank_after_stop(samples_idx, samples_sq, es_fire, per_iter):
    for b in np.flatnonzero(es_fire > 0):
        cut = es_fire[b] * per_iter + 1
        samples_idx[b, :, cut:] = -1
        samples_sq[b, :, cut:] = np.inf


def _refund_after_stop(counter, es_fire, S, gd, walk, res):
    # trace mode ran every iteration; charge only what an early stop would have run
    fired = es_fire > 0
    skipped = np.where(fired, S - es_fire, 0).astype(np.float64)
    counter.counts[:, 1] -= skipped * gd
    counter.counts[:, 2] -= skipped * walk
    counter.counts[:, 3] -= skipped * res


@dataclass
class ChainState:
    """Final state of one sampler run to completion."""

    x_curr: np.ndarray
    r_sqnorm_curr: float
    gamma: float
    momentum: np.ndarray
    best_x: np.ndarray
    best_sqnorm: float
    samples: np.ndarray
    sample_sqnorms: np.ndarray
    accepted: int = 0


@dataclass
class DetectionResult:
    """Hard decision plus the pooled sample list it was drawn from."""

    x_hat: np.ndarray
    bits_hat: np.ndarray
    samples: np.ndarray
    sample_sqnorms: np.ndarray
    iterations: int
    op_counts: dict = field(default_factory=dict)

    @property
    def x_hat_sqnorm(self) -> float:
        return float(np.min(self.sample_sqnorms))


def init_estimate(ctx: SamplerContext, mode: str, rng: np.random.Generator | None = None, n_samplers: int | None = None):
    """Initial estimate in the constellation product space.

    ``"random"`` draws every symbol uniformly; ``"mmse"`` quantizes the MMSE
    filter output. With ``n_samplers`` the result gets a leading sampler axis.
    """
    c = ctx.constellation
    shape = (ctx.n_tx,) if n_samplers is None else (n_samplers, ctx.n_tx)
    if mode == "random":
        return c.points[rng.integers(0, c.order, size=ctx.H.shape[:-2] + shape)]
    if mode == "mmse":
        x = c.points[c.point_index(*quantize_indices(mmse_filter(ctx.H, ctx.y, ctx.sigma2), c))]
        if n_samplers is not None:
            x = np.broadcast_to(x[..., None, :], ctx.H.shape[:-2] + shape).copy()
        return x
    raise ValueError(f"unknown init mode {mode!r}")


def run_chain(ctx: SamplerContext, params: SamplerParams, rng: np.random.Generator) -> ChainState:
    """Run a single sampler for ``params.S`` iterations, keeping every sample."""
    p1 = replace(params, P=1, enable_es=False)
    draws = SamplerDraws.from_rng(rng, 1, p1, ctx.n_tx, ctx.constellation.order)
    state = _run_single_chain_state(ctx, p1, draws)
    return state


def _run_single_chain_state(ctx, params, draws) -> ChainState:
    out = sample_batch(ctx, params, draws, keep_samples=True)
    c = ctx.constellation
    idx = out.samples_idx[0, 0].astype(np.int64)
    sqs = out.samples_sqnorm[0, 0]
    samples = c.points[idx]
    # replay the last step-size update from the final sample
    last_sq = float(sqs[-1])
    gamma = float(update_step_size(last_sq, ctx.n_rx, c.d_qam, params.beta_for(ctx.n_tx)))
    j = int(np.argmin(sqs))
    return ChainState(
        x_curr=samples[-1],
        r_sqnorm_curr=last_sq,
        gamma=gamma,
        momentum=out.momentum[0, 0],
        best_x=samples[j],
        best_sqnorm=float(sqs[j]),
        samples=samples,
        sample_sqnorms=sqs,
        accepted=int(out.accept_count[0, 0]),
    )


def run_detector(ctx: SamplerContext, params: SamplerParams, rng: np.random.Generator) -> DetectionResult:
    """Detect one symbol vector with ``P`` parallel samplers."""
    if ctx.batched:
        raise ValueError("run_detector takes a single-channel context; use sample_batch for batches")
    c = ctx.constellation
    draws = SamplerDraws.from_rng(rng, 1, params, ctx.n_tx, c.order)
    counter = OpCounter(1)
    charge(counter, "preprocessing", _preprocessing_cost(ctx.n_rx, ctx.n_tx, c.order))
    out = sample_batch(ctx, params, draws, keep_samples=True, counter=counter)
    idx = out.samples_idx[0].reshape(-1, ctx.n_tx)
    sqs = out.samples_sqnorm[0].reshape(-1)
    valid = idx[:, 0] >= 0
    k = out.x_hat_idx[0]
    return DetectionResult(
        x_hat=c.points[k],
        bits_hat=bits_from_indices(k, c),
        samples=c.points[idx[valid].astype(np.int64)],
        sample_sqnorms=sqs[valid],
        iterations=int(out.iterations[0]),
        op_counts=counter.snapshot(0),
    )


def _preprocessing_cost(n_rx, n_tx, M):
    # Gram, inverse via Cholesky, Cholesky of the inverse, H^H y, Frobenius
    # norm, scaled-column table
    return n_rx * n_tx**2 + 2 * (n_tx**3 + n_tx) + 2 * n_tx**3 / 3 + n_rx * n_tx + n_tx**2 + M * n_rx * n_tx
