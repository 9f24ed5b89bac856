"""Monte-Carlo driver: BER sweeps, convergence traces, and complexity accounting.

Trials are drawn from per-trial random streams, processed in fixed-size
batches in trial order, and reduced in that order, so a report depends only
on the configuration and master seed. Batches may be evaluated by a process
pool (worker count from ``NAGMCMC_WORKERS``); batches computed beyond the
stopping point are discarded.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .channel import noise_variance_for_snr, perturb_channel
from .detectors import ML_MAX_CANDIDATES, detect_ml_exhaustive, detect_mmse, detect_zf
from .modem import build_constellation, point_indices
from .numerics import NotPositiveDefiniteError, cholesky_lower, gram
from .opcount import PHASES, OpCounter
from .sampler import SamplerDraws, SamplerParams, precompute, sample_batch
from .streams import Role, complex_normal, trial_rng

__all__ = [
    "ALGORITHMS",
    "CLOSED_FORM_ALGORITHMS",
    "DetectorSpec",
    "OpCounter",
    "ReportRow",
    "SimConfig",
    "SimReport",
    "closed_form_mults",
    "closed_form_phases",
    "convergence_trace",
    "draw_trials",
    "run_ber_sweep",
    "runtime_counter_audit",
    "wilson_interval",
]

WORKERS_ENV = "NAGMCMC_WORKERS"
ALGORITHMS = ("nag-mcmc", "mmse", "zf", "ml")
CLOSED_FORM_ALGORITHMS = ("MMSE", "EP", "MHGD", "NAG-MCMC", "NAG-MCMC w/ SA+ES")
ANALYTIC_ONLY = ("EP", "MHGD")
MAX_CHANNEL_ATTEMPTS = 8


class ConfigError(ValueError):
    """Invalid simulation configuration; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class DetectorSpec:
    """A detector to evaluate: an algorithm tag plus sampler parameters if it samples."""

    algorithm: str = "nag-mcmc"
    params: SamplerParams | None = None
    name: str | None = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.algorithm != "nag-mcmc":
            return self.algorithm.upper()
        p = self.params or SamplerParams()
        tag = "+".join(t for t, on in (("SA", p.enable_sa), ("ES", p.enable_es)) if on)
        base = f"NAG-MCMC(P={p.P},S={p.S},Ng={p.Ng})"
        return f"{base}[{tag}]" if tag else base

    def sampler_params(self) -> SamplerParams:
        return self.params or SamplerParams()


@dataclass(frozen=True)
class SimConfig:
    """Description of one BER experiment.

    The stopping rule at each SNR point and detector is: stop after the first
    batch at which ``bits >= max_bits``, or at which ``errors >= min_errors``
    with ``bits >= min_bits``.
    """

    n_rx: int = 8
    n_tx: int = 8
    order: int = 16
    snr_grid_db: tuple[float, ...] = (25.0,)
    detectors: tuple[DetectorSpec, ...] = (DetectorSpec(),)
    max_bits: int = 10**8
    min_errors: int = 100
    min_bits: int = 10**5
    nmse: float = 0.0
    seed: int = 0
    batch_size: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "detectors", tuple(self.detectors))

    def problems(self) -> list[str]:
        out = []
        if self.n_rx < 1 or self.n_tx < 1:
            out.append("antenna counts must be positive")
        try:
            build_constellation(self.order)
        except ValueError as err:
            out.append(str(err))
        if not self.snr_grid_db:
            out.append("SNR grid must be nonempty")
        if any(math.isnan(s) or s == -math.inf for s in self.snr_grid_db):
            out.append("SNR values must be finite or +inf")
        if not self.detectors:
            out.append("at least one detector is required")
        for d in self.detectors:
            if d.algorithm not in ALGORITHMS:
                out.append(f"unknown detector {d.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
            if d.algorithm == "zf" and self.n_tx > self.n_rx:
                out.append(f"ZF needs n_tx <= n_rx (got {self.n_tx} > {self.n_rx})")
            if d.algorithm == "ml" and self.order in (4, 16, 64) and self.order**self.n_tx > ML_MAX_CANDIDATES:
                out.append(f"ML search over {self.order}^{self.n_tx} candidates exceeds the 2^24 cap")
        labels = [d.label for d in self.detectors]
        if len(set(labels)) != len(labels):
            out.append("detector labels must be unique")
        if self.max_bits <= 0:
            out.append("max_bits must be positive")
        if self.min_errors < 0:
            out.append("min_errors must be non-negative")
        if self.min_bits < 0:
            out.append("min_bits must be non-negative")
        if not 0 <= self.nmse < 1:
            out.append("nmse must lie in [0, 1)")
        if self.batch_size < 1:
            out.append("batch_size must be positive")
        if self.seed < 0:
            out.append("seed must be non-negative")
        return out

    def validate(self) -> "SimConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def bits_per_trial(self) -> int:
        return self.n_tx * int(round(math.log2(self.order)))

    @property
    def max_trials(self) -> int:
        return -(-int(self.max_bits) // self.bits_per_trial)


@dataclass(frozen=True)
class ReportRow:
    snr_db: float
    detector: str
    ber: float
    ser: float
    bits: int
    errors: int
    symbols: int
    symbol_errors: int
    mean_sa: float | None
    mults_runtime: float
    mults_closed_form: float | None
    ber_ci_low: float
    ber_ci_high: float
    analytic_only: bool = False


@dataclass
class SimReport:
    config: SimConfig
    rows: list[ReportRow] = field(default_factory=list)

    def row(self, snr_db: float, detector: str) -> ReportRow:
        for r in self.rows:
            if r.snr_db == snr_db and r.detector == detector:
                return r
        raise KeyError((snr_db, detector))

    def ber_curve(self, detector: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r.detector == detector]
        return np.array([r.snr_db for r in rows]), np.array([r.ber for r in rows])


def wilson_interval(errors: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    from statsmodels.stats.proportion import proportion_confint

    lo, hi = proportion_confint(errors, trials, alpha=1.0 - level, method="wilson")
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# trial generation


@dataclass
class TrialBatch:
    """Everything a detector sees for a block of consecutive trials."""

    trials: np.ndarray
    H: np.ndarray
    H_est: np.ndarray
    idx: np.ndarray
    y: np.ndarray
    sigma2: float


def _channel_draw(cfg: SimConfig, snr_index: int, trial: int):
    for attempt in range(MAX_CHANNEL_ATTEMPTS):
        rng = trial_rng(cfg.seed, snr_index, trial, Role.CHANNEL, attempt)
        H = complex_normal(rng, (cfg.n_rx, cfg.n_tx), variance=1.0 / cfg.n_rx)
        try:
            cholesky_lower(gram(H))
            return H
        except NotPositiveDefiniteError:
            continue
    raise RuntimeError(f"trial {trial}: no full-rank channel in {MAX_CHANNEL_ATTEMPTS} attempts")


def draw_trials(cfg: SimConfig, snr_index: int, trials, snr_db: float) -> TrialBatch:
    """Channels, symbols and observations for the given trial indices.

    Rank-deficient channels (a Gram pivot at or below the Cholesky tolerance)
    are redrawn from the next attempt of the same trial stream.
    """
    trials = np.asarray(trials, dtype=np.int64)
    c = build_constellation(cfg.order)
    sigma2 = noise_variance_for_snr(snr_db, cfg.n_rx, cfg.n_tx)
    H = np.empty((trials.size, cfg.n_rx, cfg.n_tx), dtype=np.complex128)
    H_est = np.empty_like(H)
    idx = np.empty((trials.size, cfg.n_tx), dtype=np.int64)
    noise = np.empty((trials.size, cfg.n_rx), dtype=np.complex128)
    for b, t in enumerate(trials):
        H[b] = _channel_draw(cfg, snr_index, int(t))
        idx[b] = trial_rng(cfg.seed, snr_index, int(t), Role.BITS).integers(0, c.order, cfg.n_tx)
        noise[b] = complex_normal(trial_rng(cfg.seed, snr_index, int(t), Role.NOISE), cfg.n_rx)
        H_est[b] = perturb_channel(H[b], cfg.nmse, trial_rng(cfg.seed, snr_index, int(t), Role.ESTIMATION_ERROR))
    x = c.points[idx]
    y = np.einsum("bij,bj->bi", H, x) + np.sqrt(sigma2) * noise
    return TrialBatch(trials=trials, H=H, H_est=H_est, idx=idx, y=y, sigma2=sigma2)


def sampler_draws(cfg: SimConfig, snr_index: int, trials, params: SamplerParams) -> SamplerDraws:
    def rngs(role):
        return [trial_rng(cfg.seed, snr_index, int(t), role) for t in trials]

    return SamplerDraws.from_streams(
        rngs(Role.INIT), rngs(Role.WALK), rngs(Role.ACCEPT), params, cfg.n_tx, cfg.order
    )


# ---------------------------------------------------------------------------
# detection of one batch


@dataclass
class BatchTally:
    bits: int
    errors: int
    symbols: int
    symbol_errors: int
    iterations: int
    mults: float


def _detect(cfg: SimConfig, spec: DetectorSpec, tb: TrialBatch, snr_index: int):
    c = build_constellation(cfg.order)
    B = tb.trials.size
    counter = OpCounter(B)
    iterations = np.zeros(B, dtype=np.int64)
    if spec.algorithm == "nag-mcmc":
        params = spec.sampler_params()
        sigma2 = max(tb.sigma2, np.finfo(float).tiny)
        ctx = precompute(tb.H_est, tb.y, sigma2, c, params, fallback_identity=True, counter=counter)
        out = sample_batch(ctx, params, sampler_draws(cfg, snr_index, tb.trials, params), counter=counter)
        return out.x_hat_idx, out.iterations, counter
    if spec.algorithm == "mmse":
        x = detect_mmse(tb.H_est, tb.y, tb.sigma2, c, counter=counter)
    elif spec.algorithm == "zf":
        x = detect_zf(tb.H_est, tb.y, c)
    elif spec.algorithm == "ml":
        x = detect_ml_exhaustive(tb.H_est, tb.y, c)
    else:
        raise ValueError(f"unknown detector {spec.algorithm!r}")
    return point_indices(x, c), iterations, counter


def _tally(cfg: SimConfig, idx_hat, idx_true, iterations, counter) -> BatchTally:
    c = build_constellation(cfg.order)
    bit_err = int(np.count_nonzero(c.bit_labels[idx_hat] != c.bit_labels[idx_true]))
    return BatchTally(
        bits=idx_true.size * c.bits_per_symbol,
        errors=bit_err,
        symbols=idx_true.size,
        symbol_errors=int(np.count_nonzero(idx_hat != idx_true)),
        iterations=int(iterations.sum()),
        mults=float(np.sum(counter.total())),
    )


def _run_batch(args) -> list[BatchTally]:
    cfg, specs, snr_index, snr_db, start, stop = args
    tb = draw_trials(cfg, snr_index, np.arange(start, stop), snr_db)
    out = []
    for spec in specs:
        idx_hat, iterations, counter = _detect(cfg, spec, tb, snr_index)
        out.append(_tally(cfg, idx_hat, tb.idx, iterations, counter))
    return out


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"{WORKERS_ENV} must be an integer, got {raw!r}"]) from None
    if n < 1:
        raise ConfigError([f"{WORKERS_ENV} must be >= 1"])
    return n


def _closed_form_for(cfg: SimConfig, spec: DetectorSpec, mean_sa: float) -> float | None:
    if cfg.n_rx != cfg.n_tx:
        return None
    N, M = cfg.n_tx, cfg.order
    if spec.algorithm == "mmse":
        return closed_form_mults("MMSE", N, M)
    if spec.algorithm != "nag-mcmc":
        return None
    p = spec.sampler_params()
    if p.enable_sa:
        return closed_form_mults("NAG-MCMC w/ SA+ES", N, M, P=p.P, S=mean_sa, Ng=p.Ng)
    return closed_form_mults("NAG-MCMC", N, M, P=p.P, S=mean_sa, Ng=p.Ng)


def run_ber_sweep(cfg: SimConfig) -> SimReport:
    """BER / SER / mean S_a / multiplication counts over the SNR grid.

    All detectors see the same trials. Each (SNR, detector) pair stops on its
    own according to the stopping rule of :class:`SimConfig`; once every
    detector has stopped the SNR point is done.
    """
    cfg.validate()
    workers = _worker_count()
    report = SimReport(config=cfg)
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for si, snr in enumerate(cfg.snr_grid_db):
            report.rows.extend(_sweep_point(cfg, si, snr, pool, workers))
    finally:
        if pool is not None:
            pool.shutdown()
    return report


def _sweep_point(cfg, si, snr, pool, workers) -> list[ReportRow]:
    specs = list(cfg.detectors)
    acc = {d.label: BatchTally(0, 0, 0, 0, 0, 0.0) for d in specs}
    active = list(specs)
    start = 0
    n_max = cfg.max_trials

    def done(t: BatchTally):
        return t.bits >= cfg.max_bits or (t.errors >= cfg.min_errors and t.bits >= cfg.min_bits)

    while active and start < n_max:
        jobs = []
        s = start
        for _ in range(workers):
            if s >= n_max:
                break
            e = min(s + cfg.batch_size, n_max)
            jobs.append((cfg, tuple(active), si, snr, s, e))
            s = e
        results = pool.map(_run_batch, jobs) if pool is not None else map(_run_batch, jobs)
        for job, tallies in zip(jobs, results):
            # ordered reduction; detectors that stopped earlier in this round ignore later batches
            for spec, t in zip(job[1], tallies):
                if spec not in active:
                    continue
                a = acc[spec.label]
                acc[spec.label] = BatchTally(*(x + y for x, y in zip(asdict(a).values(), asdict(t).values())))
                if done(acc[spec.label]):
                    active.remove(spec)
        start = s

    rows = []
    for spec in specs:
        a = acc[spec.label]
        n_trials = a.symbols // cfg.n_tx
        sampled = spec.algorithm == "nag-mcmc"
        mean_sa = a.iterations / n_trials if sampled else None
        lo, hi = wilson_interval(a.errors, a.bits)
        rows.append(
            ReportRow(
                snr_db=snr,
                detector=spec.label,
                ber=a.errors / a.bits,
                ser=a.symbol_errors / a.symbols,
                bits=a.bits,
                errors=a.errors,
                symbols=a.symbols,
                symbol_errors=a.symbol_errors,
                mean_sa=mean_sa,
                mults_runtime=a.mults / n_trials,
                mults_closed_form=_closed_form_for(cfg, spec, mean_sa if sampled else 0.0),
                ber_ci_low=lo,
                ber_ci_high=hi,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# convergence traces


@dataclass(frozen=True)
class TraceRow:
    snr_db: float
    detector: str
    iteration: int
    ber: float
    bits: int
    errors: int


def convergence_trace(cfg: SimConfig, S_max: int, n_trials: int | None = None) -> list[TraceRow]:
    """Pooled-decision BER after each sampling iteration ``s = 1 .. S_max``.

    Every sampler detector runs ``S_max`` iterations with early stopping
    suspended. The decision after iteration ``s`` is the best sample seen up
    to ``s``, so one run yields the whole curve. ``n_trials`` defaults to
    the bit budget ``max_bits``.
    """
    cfg.validate()
    if S_max < 1:
        raise ValueError("S_max must be >= 1")
    specs = [d for d in cfg.detectors if d.algorithm == "nag-mcmc"]
    if not specs:
        raise ConfigError(["convergence traces need a sampler detector"])
    n = cfg.max_trials if n_trials is None else int(n_trials)
    c = build_constellation(cfg.order)
    rows = []
    for si, snr in enumerate(cfg.snr_grid_db):
        errors = {d.label: np.zeros(S_max, dtype=np.int64) for d in specs}
        for start in range(0, n, cfg.batch_size):
            tb = draw_trials(cfg, si, np.arange(start, min(start + cfg.batch_size, n)), snr)
            for spec in specs:
                params = replace(spec.sampler_params(), S=S_max)
                sigma2 = max(tb.sigma2, np.finfo(float).tiny)
                ctx = precompute(tb.H_est, tb.y, sigma2, c, params, fallback_identity=True)
                out = sample_batch(ctx, params, sampler_draws(cfg, si, tb.trials, params), trace=True)
                wrong = c.bit_labels[out.trace_idx[:, 1:]] != c.bit_labels[tb.idx][:, None]
                errors[spec.label] += np.count_nonzero(wrong.reshape(wrong.shape[0], S_max, -1), axis=(0, 2))
        bits = n * cfg.bits_per_trial
        for spec in specs:
            for s in range(S_max):
                e = int(errors[spec.label][s])
                rows.append(TraceRow(snr, spec.label, s + 1, e / bits, bits, e))
    return rows


# ---------------------------------------------------------------------------
# complexity


def closed_form_phases(
    algorithm: str,
    N: int,
    M: int,
    P: int = 16,
    S: float = 8,
    Ng: int = 8,
    T: int = 10,
) -> dict[str, float]:
    """Per-phase split of the closed-form multiplication counts, unrounded.

    For the sampler the phases follow the runtime counter: ``preprocessing``
    (Gram, inverse, Cholesky, matched filter, column table), ``gd`` (the
    ``N_g`` Nesterov steps), ``walk`` (covariance product and QAM mapping,
    plus the initial mapping), ``residual`` (squared norms, plus the mapping
    of augmented samples). For the SA+ES variant pass the mean executed
    iteration count as ``S``. EP and MHGD are analytic only and report their
    whole count under ``preprocessing``.
    """
    if algorithm not in CLOSED_FORM_ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {CLOSED_FORM_ALGORITHMS}")
    phases = dict.fromkeys(PHASES, 0.0)
    if algorithm == "MMSE":
        phases["preprocessing"] = 3 * N**3 + 2 * N
        phases["decision"] = 2 * N**2
    elif algorithm == "EP":
        phases["preprocessing"] = (2 * N**3 + N**2 + (2 * M + 13) * N) * T + N**3 + 2 * N**2 + N
    elif algorithm == "MHGD":
        phases["preprocessing"] = (6 * N**2 + (M + 5) * N) * P * S + 23 / 3 * N**3 + (M + 2) * N**2 + 7 * N
    else:
        sa = algorithm == "NAG-MCMC w/ SA+ES"
        phases["preprocessing"] = 11 / 3 * N**3 + (M + 2) * N**2 + 2 * N
        phases["gd"] = Ng * (N**2 + 2 * N) * P * S
        phases["walk"] = (N**2 + N + M * N) * P * S + M * N * P
        per_iter_res = N + ((Ng - 1) * (M + 1) * N if sa else 0)
        phases["residual"] = per_iter_res * P * S + N * P
    return phases


def closed_form_mults(
    algorithm: str,
    N: int,
    M: int,
    P: int = 16,
    S: float = 8,
    Ng: int = 8,
    T: int = 10,
) -> int:
    """Complex multiplications per detected vector, rounded once at the end.

    ``algorithm`` is one of ``MMSE``, ``EP``, ``MHGD``, ``NAG-MCMC`` or
    ``NAG-MCMC w/ SA+ES`` (for which ``S`` is the mean executed count).

    Examples
    --------
    >>> closed_form_mults("MMSE", 8, 16)
    1680
    >>> closed_form_mults("NAG-MCMC", 8, 16, P=16, S=8, Ng=8)
    113765
    """
    return int(round(sum(closed_form_phases(algorithm, N, M, P, S, Ng, T).values())))


@dataclass(frozen=True)
class AuditRow:
    phase: str
    runtime: float
    closed_form: float

    @property
    def ratio(self) -> float:
        if self.closed_form == 0:
            return 1.0 if self.runtime == 0 else math.inf
        return self.runtime / self.closed_form


def runtime_counter_audit(
    cfg: SimConfig, detector: DetectorSpec | None = None, n_trials: int = 200
) -> list[AuditRow]:
    """Mean instrumented count per phase next to the closed form.

    Runs ``n_trials`` detections at the first SNR point. For a sampler with
    early stopping the closed form is evaluated at the measured mean
    executed iteration count.
    """
    cfg.validate()
    if cfg.n_rx != cfg.n_tx:
        raise ConfigError(["closed forms assume n_rx == n_tx"])
    spec = detector or cfg.detectors[0]
    if spec.algorithm not in ("mmse", "nag-mcmc"):
        raise ConfigError([f"no closed form for detector {spec.algorithm!r}"])
    tb = draw_trials(cfg, 0, np.arange(n_trials), cfg.snr_grid_db[0])
    _, iterations, counter = _detect(cfg, spec, tb, 0)
    runtime = counter.counts.mean(axis=0)
    if spec.algorithm == "mmse":
        cf = closed_form_phases("MMSE", cfg.n_tx, cfg.order)
    else:
        p = spec.sampler_params()
        tag = "NAG-MCMC w/ SA+ES" if p.enable_sa else "NAG-MCMC"
        cf = closed_form_phases(tag, cfg.n_tx, cfg.order, P=p.P, S=float(iterations.mean()), Ng=p.Ng)
    return [AuditRow(ph, float(r), float(cf[ph])) for ph, r in zip(PHASES, runtime)]
