"""Command-line front end for the simulation harness.

Settings come from three layers, later ones winning: a named preset, a flat
``key = value`` config file, and command-line flags. Keys are the flag names
without the leading dashes. List-valued keys (``iters``, ``ng``, ``sa``,
``es``) are zipped into one sampler variant per position, with length-one
lists broadcast.

Exit status is 0 on success, 2 for invalid settings and 3 for a failure
while running.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import harness
from .harness import ConfigError, DetectorSpec, SimConfig, SimReport
from .modem import SUPPORTED_ORDERS
from .sampler import SamplerParams

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3

COMMANDS = ("ber-sweep", "convergence", "complexity", "trace-gd", "llr-dump", "selftest")
CSV_HEADER = ("snr_db", "detector", "ber", "ser", "bits", "errors", "mean_sa", "mults_runtime", "mults_closed_form")

DEFAULTS: dict[str, str] = {
    "snr": "25",
    "ntx": "8",
    "nrx": "8",
    "mod": "16",
    "detectors": "nag-mcmc",
    "samplers": "16",
    "iters": "8",
    "ng": "8",
    "sa": "off",
    "es": "off",
    "eta": "1.5",
    "beta": "auto",
    "rho": "0.9",
    "nmse": "0",
    "seed": "0",
    "max-bits": "100000000",
    "min-errors": "100",
    "trials": "1000",
    "mean-sa": "5.0",
    "out": "results",
    "format": "csv",
}

HELP = {
    "snr": "SNR points in dB: comma list and/or inclusive ranges start:stop:step; 'inf' allowed",
    "ntx": "transmit antennas (complexity accepts a comma list)",
    "nrx": "receive antennas (complexity accepts a comma list)",
    "mod": f"QAM order, one of {', '.join(map(str, SUPPORTED_ORDERS))}",
    "detectors": "comma list of nag-mcmc, mmse, zf, ml",
    "samplers": "parallel samplers P",
    "iters": "sampling iterations S (comma list gives variants)",
    "ng": "descent steps per random walk (comma list gives variants)",
    "sa": "sample augmentation on/off (comma list gives variants)",
    "es": "early stopping on/off (comma list gives variants)",
    "eta": "early-stopping threshold factor",
    "beta": "random-walk coefficient, or 'auto' for (N_t/8)^(-1/3)",
    "rho": "Nesterov momentum factor",
    "nmse": "channel-estimation NMSE; a comma list runs one sweep per value",
    "seed": "master seed",
    "max-bits": "bit budget per SNR point",
    "min-errors": "stop once this many bit errors are seen (after 1e5 bits); 0 disables",
    "trials": "trial count for trace-gd and llr-dump (and the complexity audit)",
    "mean-sa": "mean executed iterations used for the SA+ES closed form in complexity",
    "out": "output directory",
    "format": "comma list of csv, json",
}

PRESETS: dict[str, dict[str, str]] = {
    # 312,500 realizations per row as averaged for the ES table; SA-only and SA+ES side by side
    "table1": {
        "snr": "25",
        "ntx": "8",
        "nrx": "8",
        "mod": "16",
        "detectors": "nag-mcmc",
        "samplers": "16",
        "ng": "8",
        "iters": "6,6,8,8,10,10,12,12",
        "sa": "on",
        "es": "off,on,off,on,off,on,off,on",
        "max-bits": "10000000",
        "min-errors": "0",
    },
    "fig2-gd-trace": {"snr": "20", "ntx": "8", "nrx": "8", "mod": "16", "iters": "30", "rho": "0.9", "trials": "1000"},
    # 1e7 bits per point instead of 1e8
    "fig3-ablation": {
        "snr": "12:30:2",
        "ntx": "8",
        "nrx": "8",
        "mod": "16",
        "detectors": "nag-mcmc",
        "samplers": "16",
        "iters": "16,16,128",
        "ng": "8,1,1",
        "sa": "off",
        "es": "off",
        "max-bits": "10000000",
    },
    # 1e7 bits per point instead of 1e8
    "fig5-ber": {
        "snr": "10:30:2",
        "ntx": "8",
        "nrx": "8",
        "mod": "16",
        "detectors": "mmse,nag-mcmc",
        "samplers": "16",
        "ng": "8",
        "iters": "8,8,8,12,12,12",
        "sa": "off,on,on,off,on,on",
        "es": "off,off,on,off,off,on",
        "max-bits": "10000000",
    },
    # 100,000 trials instead of the full 1e8-bit budget
    "fig6-convergence": {
        "snr": "25",
        "ntx": "8",
        "nrx": "8",
        "mod": "16",
        "detectors": "nag-mcmc",
        "samplers": "16",
        "ng": "8,1",
        "iters": "60",
        "sa": "off",
        "es": "off",
        "max-bits": "3200000",
    },
    # 1e7 bits per NMSE point instead of 1e8
    "fig10-nmse": {
        "snr": "20",
        "ntx": "8",
        "nrx": "8",
        "mod": "16",
        "detectors": "mmse,nag-mcmc",
        "samplers": "16",
        "ng": "8",
        "iters": "8",
        "sa": "on",
        "es": "on",
        "nmse": "0,0.001,0.01,0.05",
        "max-bits": "10000000",
    },
}

_BOOL = {"on": True, "off": False, "true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


# ---------------------------------------------------------------------------
# settings


def read_config_file(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    problems = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            problems.append(f"{path}:{n}: expected 'key = value'")
        elif key not in DEFAULTS:
            problems.append(f"{path}:{n}: unknown key {key!r}")
        else:
            out[key] = value.strip()
    if problems:
        raise ConfigError(problems)
    return out


def _split(v: str) -> list[str]:
    return [p.strip() for p in v.split(",") if p.strip()]


def _parse_snr(v: str) -> list[float]:
    out = []
    for part in _split(v):
        if ":" in part:
            a, b, step = (float(x) for x in part.split(":"))
            if step <= 0 or b < a:
                raise ValueError(f"bad SNR range {part!r}")
            n = int(math.floor((b - a) / step + 1e-9)) + 1
            out.extend(round(a + k * step, 10) for k in range(n))
        else:
            out.append(float(part))
    if not out:
        raise ValueError("empty SNR list")
    return out


def _parse_bool(v: str) -> bool:
    try:
        return _BOOL[v.lower()]
    except KeyError:
        raise ValueError(f"expected on/off, got {v!r}") from None


@dataclass(frozen=True)
class Settings:
    """Typed view of the merged flat settings."""

    snr: tuple[float, ...]
    ntx: tuple[int, ...]
    nrx: tuple[int, ...]
    mod: int
    detectors: tuple[str, ...]
    samplers: int
    iters: tuple[int, ...]
    ng: tuple[int, ...]
    sa: tuple[bool, ...]
    es: tuple[bool, ...]
    eta: float
    beta: float | None
    rho: float
    nmse: tuple[float, ...]
    seed: int
    max_bits: int
    min_errors: int
    trials: int
    mean_sa: float
    out: Path
    formats: tuple[str, ...]


def parse_settings(flat: dict[str, str]) -> Settings:
    """Convert merged string settings, collecting every problem before raising."""
    problems = []
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        problems.append(f"unknown key(s): {', '.join(unknown)}")
    raw = {**DEFAULTS, **{k: v for k, v in flat.items() if k in DEFAULTS}}

    def conv(key, fn):
        try:
            return fn(raw[key])
        except (ValueError, TypeError) as err:
            problems.append(f"{key}: {err}")
            return None

    ints = lambda v: tuple(int(x) for x in _split(v))  # noqa: E731
    bools = lambda v: tuple(_parse_bool(x) for x in _split(v))  # noqa: E731
    vals = dict(
        snr=conv("snr", lambda v: tuple(_parse_snr(v))),
        ntx=conv("ntx", ints),
        nrx=conv("nrx", ints),
        mod=conv("mod", int),
        detectors=conv("detectors", lambda v: tuple(x.lower() for x in _split(v))),
        samplers=conv("samplers", int),
        iters=conv("iters", ints),
        ng=conv("ng", ints),
        sa=conv("sa", bools),
        es=conv("es", bools),
        eta=conv("eta", float),
        beta=conv("beta", lambda v: None if v.lower() == "auto" else float(v)),
        rho=conv("rho", float),
        nmse=conv("nmse", lambda v: tuple(float(x) for x in _split(v))),
        seed=conv("seed", int),
        max_bits=conv("max-bits", lambda v: int(float(v))),
        min_errors=conv("min-errors", int),
        trials=conv("trials", int),
        mean_sa=conv("mean-sa", float),
        out=conv("out", Path),
        formats=conv("format", lambda v: tuple(x.lower() for x in _split(v))),
    )
    for key in ("ntx", "nrx", "iters", "ng", "sa", "es", "nmse", "detectors", "formats"):
        if vals[key] is not None and len(vals[key]) == 0:
            problems.append(f"{key}: empty list")
    if vals["formats"]:
        bad = [f for f in vals["formats"] if f not in ("csv", "json")]
        if bad:
            problems.append(f"format: unsupported {', '.join(bad)}; choose csv or json")
    if vals["mod"] is not None and vals["mod"] not in SUPPORTED_ORDERS:
        problems.append(f"mod: unsupported QAM order {vals['mod']}; choose from {', '.join(map(str, SUPPORTED_ORDERS))}")
    if vals["detectors"]:
        bad = [d for d in vals["detectors"] if d not in harness.ALGORITHMS]
        if bad:
            problems.append(f"detectors: unknown {', '.join(bad)}; choose from {', '.join(harness.ALGORITHMS)}")
        if "zf" in vals["detectors"] and vals["ntx"] and vals["nrx"] and max(vals["ntx"]) > min(vals["nrx"]):
            problems.append("detectors: ZF needs ntx <= nrx (rank condition)")
    if vals["trials"] is not None and vals["trials"] < 1:
        problems.append("trials must be >= 1")
    lens = {k: len(vals[k]) for k in ("iters", "ng", "sa", "es") if vals[k]}
    longest = max(lens.values(), default=1)
    if any(n not in (1, longest) for n in lens.values()):
        problems.append(f"iters/ng/sa/es list lengths must be 1 or equal, got {lens}")
    if problems:
        raise ConfigError(problems)
    return Settings(**vals)


def sampler_variants(s: Settings) -> list[SamplerParams]:
    n = max(len(s.iters), len(s.ng), len(s.sa), len(s.es))
    pick = lambda seq, i: seq[0] if len(seq) == 1 else seq[i]  # noqa: E731
    return [
        SamplerParams(
            P=s.samplers,
            S=pick(s.iters, i),
            Ng=pick(s.ng, i),
            rho=s.rho,
            beta=s.beta,
            eta=s.eta,
            enable_sa=pick(s.sa, i),
            enable_es=pick(s.es, i),
        )
        for i in range(n)
    ]


def build_configs(s: Settings) -> list[SimConfig]:
    """One :class:`SimConfig` per NMSE value."""
    problems = []
    if len(s.ntx) != 1 or len(s.nrx) != 1:
        problems.append("ntx and nrx take a single value for simulations")
    detectors = []
    for name in s.detectors:
        if name == "nag-mcmc":
            try:
                detectors.extend(DetectorSpec("nag-mcmc", p) for p in sampler_variants(s))
            except ValueError as err:
                problems.append(f"sampler: {err}")
        else:
            detectors.append(DetectorSpec(name))
    if problems:
        raise ConfigError(problems)
    configs = [
        SimConfig(
            n_rx=s.nrx[0],
            n_tx=s.ntx[0],
            order=s.mod,
            snr_grid_db=s.snr,
            detectors=tuple(detectors),
            max_bits=s.max_bits,
            min_errors=s.min_errors if s.min_errors > 0 else 2**62,
            nmse=nmse,
            seed=s.seed,
        )
        for nmse in s.nmse
    ]
    for cfg in configs:
        problems.extend(p for p in cfg.problems() if p not in problems)
    if problems:
        raise ConfigError(problems)
    return configs


def merge_settings(preset: str | None = None, config_path=None, overrides: dict[str, str] | None = None) -> dict[str, str]:
    flat = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}"])
        flat.update(PRESETS[preset])
    if config_path is not None:
        flat.update(read_config_file(config_path))
    flat.update(overrides or {})
    return flat


def parse_and_validate(argv) -> tuple[str, dict[str, str], Settings]:
    """Parse a command line into the subcommand, merged flat settings and typed settings."""
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k.replace("-", "_")) for k in DEFAULTS if getattr(args, k.replace("-", "_")) is not None}
    flat = merge_settings(args.preset, args.config, overrides)
    return args.command, flat, parse_settings(flat)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nagmcmc", description="NAG-MCMC MIMO detection experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value settings file")
    ap.add_argument("--preset", choices=sorted(PRESETS))
    for key in DEFAULTS:
        ap.add_argument(f"--{key}", dest=key.replace("-", "_"), help=HELP[key])
    return ap


# ---------------------------------------------------------------------------
# output


def build_id() -> str:
    """Short SHA-1 over the package sources, in the style of a git object id."""
    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def _round6(v):
    if isinstance(v, float) and math.isfinite(v):
        return float(f"{v:.6g}")
    return v


def report_csv(report: SimReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        w.writerow([_fmt(r.snr_db), r.detector] + [_fmt(getattr(r, k)) for k in CSV_HEADER[2:]])
    return buf.getvalue()


def report_json(report: SimReport, settings: dict[str, str]) -> str:
    cfg = report.config
    doc = {
        "build_id": build_id(),
        "seed": cfg.seed,
        "config": dict(sorted(settings.items())),
        "nmse": cfg.nmse,
        "rows": [{k: _round6(v) for k, v in asdict(r).items()} for r in report.rows],
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def emit_report(report: SimReport, formats, out_dir, settings: dict[str, str], stem: str = "ber") -> list[Path]:
    """Write the report in each requested format and return the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        text = report_csv(report) if fmt == "csv" else report_json(report, settings)
        path.write_text(text)
        paths.append(path)
    return paths


def _write_rows(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


# ---------------------------------------------------------------------------
# subcommands


def _nmse_stem(base: str, cfgs, cfg) -> str:
    return base if len(cfgs) == 1 else f"{base}_nmse{cfg.nmse:g}"


def cmd_ber_sweep(flat, s: Settings) -> list[Path]:
    cfgs = build_configs(s)
    paths = []
    for cfg in cfgs:
        report = harness.run_ber_sweep(cfg)
        paths += emit_report(report, s.formats, s.out, flat, stem=_nmse_stem("ber", cfgs, cfg))
    return paths


def cmd_convergence(flat, s: Settings) -> list[Path]:
    cfgs = build_configs(s)
    s_max = max(s.iters)
    paths = []
    for cfg in cfgs:
        rows = harness.convergence_trace(cfg, s_max)
        paths.append(
            _write_rows(
                s.out / f"{_nmse_stem('convergence', cfgs, cfg)}.csv",
                ("snr_db", "detector", "iteration", "ber", "bits", "errors"),
                [(r.snr_db, r.detector, r.iteration, r.ber, r.bits, r.errors) for r in rows],
            )
        )
    return paths


def cmd_complexity(flat, s: Settings) -> list[Path]:
    P, S, Ng = s.samplers, s.iters[0], s.ng[0]
    rows = []
    for N in s.ntx:
        for alg in harness.CLOSED_FORM_ALGORITHMS:
            s_eff = s.mean_sa if alg == "NAG-MCMC w/ SA+ES" else S
            m = harness.closed_form_mults(alg, N, s.mod, P=P, S=s_eff, Ng=Ng)
            rows.append((N, alg, m, int(alg in harness.ANALYTIC_ONLY)))
    paths = [_write_rows(s.out / "complexity.csv", ("n", "algorithm", "mults", "analytic_only"), rows)]
    audit = []
    params = sampler_variants(s)[0]
    for N in s.ntx:
        if N > 64:
            continue
        cfg = SimConfig(n_rx=N, n_tx=N, order=s.mod, snr_grid_db=(s.snr[0],), detectors=(DetectorSpec("nag-mcmc", params),), seed=s.seed)
        for a in harness.runtime_counter_audit(cfg, n_trials=min(s.trials, 100)):
            audit.append((N, a.phase, a.runtime, a.closed_form, a.ratio))
    if audit:
        paths.append(_write_rows(s.out / "complexity_audit.csv", ("n", "phase", "runtime", "closed_form", "ratio"), audit))
    return paths


def cmd_trace_gd(flat, s: Settings) -> list[Path]:
    from .detectors import descent_trace

    (cfg,) = build_configs(replace(s, nmse=(0.0,)))
    T = max(s.iters)
    tb = harness.draw_trials(cfg, 0, np.arange(s.trials), cfg.snr_grid_db[0])
    z0 = np.zeros((s.trials, cfg.n_tx), dtype=np.complex128)
    naive = descent_trace(tb.H, tb.y, z0, "naive-linesearch", T).residual_norms
    nest = descent_trace(tb.H, tb.y, z0, "nesterov", T, rho=s.rho).residual_norms
    rows = [
        (t, float(np.median(naive[:, t])), float(np.median(nest[:, t])), float(np.mean(nest[:, t] <= naive[:, t])))
        for t in range(T + 1)
    ]
    return [_write_rows(s.out / "trace_gd.csv", ("t", "naive_median", "nesterov_median", "frac_nesterov_le_naive"), rows)]


def cmd_llr_dump(flat, s: Settings) -> list[Path]:
    from .modem import build_constellation
    from .sampler import precompute, sample_batch
    from .softout import compute_llrs, write_llr_dump

    (cfg,) = build_configs(replace(s, nmse=s.nmse[:1]))
    params = sampler_variants(s)[0]
    c = build_constellation(cfg.order)
    tb = harness.draw_trials(cfg, 0, np.arange(s.trials), cfg.snr_grid_db[0])
    sigma2 = max(tb.sigma2, np.finfo(float).tiny)
    ctx = precompute(tb.H_est, tb.y, sigma2, c, params, fallback_identity=True)
    out = sample_batch(ctx, params, harness.sampler_draws(cfg, 0, tb.trials, params), keep_samples=True)
    llrs = []
    for b in range(s.trials):
        idx = out.samples_idx[b].reshape(-1, cfg.n_tx)
        sq = out.samples_sqnorm[b].reshape(-1)
        keep = np.isfinite(sq)
        llrs.append(compute_llrs(idx[keep], sq[keep], sigma2, c))
    path = s.out / "llr.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_llr_dump(path, llrs)
    return [path]


def cmd_selftest(flat, s: Settings) -> list[Path]:
    from .detectors import detect_ml_exhaustive
    from .modem import build_constellation, point_indices
    from .sampler import precompute, sample_batch

    checks = []
    checks.append(("closed form MMSE N=8", harness.closed_form_mults("MMSE", 8, 16) == 1680))
    checks.append(("closed form NAG-MCMC N=8", harness.closed_form_mults("NAG-MCMC", 8, 16) == 113765))
    cfg = SimConfig(n_rx=2, n_tx=2, order=4, snr_grid_db=(10.0,), seed=s.seed)
    c = build_constellation(4)
    tb = harness.draw_trials(cfg, 0, np.arange(500), 10.0)
    params = SamplerParams(P=8, S=16, enable_sa=True)
    ctx = precompute(tb.H, tb.y, tb.sigma2, c, params)
    got = sample_batch(ctx, params, harness.sampler_draws(cfg, 0, tb.trials, params)).x_hat_idx
    ml = point_indices(detect_ml_exhaustive(tb.H, tb.y, c), c)
    checks.append(("2x2 4-QAM sampler matches ML", np.mean(np.all(got == ml, axis=1)) >= 0.995))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if not all(ok for _, ok in checks):
        raise RuntimeError("selftest failed")
    return []


HANDLERS = {
    "ber-sweep": cmd_ber_sweep,
    "convergence": cmd_convergence,
    "complexity": cmd_complexity,
    "trace-gd": cmd_trace_gd,
    "llr-dump": cmd_llr_dump,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    try:
        command, flat, settings = parse_and_validate(argv)
    except ConfigError as err:
        print("invalid settings:", file=sys.stderr)
        for p in err.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        paths = HANDLERS[command](flat, settings)
    except ConfigError as err:
        print("invalid settings:", file=sys.stderr)
        for p in err.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # surfaced verbatim, mapped to the runtime exit code
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
