"""A small BER sweep: what sample augmentation and early stopping buy.

Runs three receivers over the same trials on an 8x8 16-QAM Rayleigh link.
The bit budget here is tiny (a few seconds per point), so the low-BER
points are rough; the command-line presets run the same study at scale.

Set NAGMCMC_WORKERS to use several processes. Results do not depend on it.
"""

from nagmcmc import DetectorSpec, SamplerParams, SimConfig, run_ber_sweep

detectors = (
    DetectorSpec("mmse"),
    DetectorSpec(params=SamplerParams(S=8)),
    DetectorSpec(params=SamplerParams(S=8, enable_sa=True, enable_es=True)),
)
cfg = SimConfig(snr_grid_db=(12, 16, 20), detectors=detectors, max_bits=320_000, min_errors=200)
report = run_ber_sweep(cfg)

print(f"{'SNR':>5}  {'detector':<32} {'BER':>9} {'bits':>8}  {'S_a':>5}  {'mults':>8}")
for r in report.rows:
    sa = f"{r.mean_sa:5.2f}" if r.mean_sa is not None else "    -"
    print(f"{r.snr_db:5.0f}  {r.detector:<32} {r.ber:9.2e} {r.bits:8d}  {sa}  {r.mults_runtime:8.0f}")

# Early stopping trims the work per vector. The multiplication column is
# counted at runtime and agrees with the closed form.
