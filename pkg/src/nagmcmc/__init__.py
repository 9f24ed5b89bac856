"""Nesterov-accelerated gradient MCMC detection for MIMO channels."""

from .channel import noise_variance_for_snr, perturb_channel, sample_rayleigh, transmit
from .detectors import descent_trace, detect_ml_exhaustive, detect_mmse, detect_zf
from .harness import DetectorSpec, SimConfig, SimReport, closed_form_mults, convergence_trace, run_ber_sweep
from .modem import build_constellation, demodulate_hard, modulate, qam_quantize
from .sampler import (
    SamplerContext,
    SamplerParams,
    precompute,
    run_chain,
    run_detector,
    sample_batch,
)
from .softout import compute_llrs

__all__ = [
    "DetectorSpec",
    "SamplerContext",
    "SamplerParams",
    "SimConfig",
    "SimReport",
    "build_constellation",
    "closed_form_mults",
    "compute_llrs",
    "convergence_trace",
    "demodulate_hard",
    "descent_trace",
    "detect_ml_exhaustive",
    "detect_mmse",
    "detect_zf",
    "modulate",
    "noise_variance_for_snr",
    "perturb_channel",
    "precompute",
    "qam_quantize",
    "run_ber_sweep",
    "run_chain",
    "run_detector",
    "sample_batch",
    "sample_rayleigh",
    "transmit",
]
