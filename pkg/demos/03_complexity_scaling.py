"""How the detectors' multiplication counts grow with the antenna count.

Evaluates the closed forms for N_t = N_r = N with P = 16 samplers, S = 8
iterations and N_g = 8 descent steps. The early-stopped variant uses an
average of 5 executed iterations. EP and MHGD are only counted, never run.
"""

from nagmcmc import closed_form_mults
from nagmcmc.harness import CLOSED_FORM_ALGORITHMS

sizes = (8, 16, 32, 64, 128, 256)
print(f"{'N':>4}" + "".join(f"{a:>20}" for a in CLOSED_FORM_ALGORITHMS))
for N in sizes:
    row = []
    for alg in CLOSED_FORM_ALGORITHMS:
        S = 5.0 if alg == "NAG-MCMC w/ SA+ES" else 8
        row.append(closed_form_mults(alg, N, 16, P=16, S=S, Ng=8, T=10))
    print(f"{N:>4}" + "".join(f"{m:>20,d}" for m in row))

ratio = closed_form_mults("NAG-MCMC w/ SA+ES", 256, 16, P=16, S=5.0) / closed_form_mults("MMSE", 256, 16)
print(f"\nat N = 256 the early-stopped sampler costs {ratio:.2f}x the MMSE equalizer")
