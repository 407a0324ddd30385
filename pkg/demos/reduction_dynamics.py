"""Marbles localized one hit at a time.

Every marble suffers its first hit after an exponential waiting time with rate
Lambda = lambda * N.  The last of n hits arrives after H_n / Lambda on
average, so even 1e5 marbles are fully reduced in a fraction of a microsecond.
"""

import numpy as np

from grwcount import marbles

amp = marbles.MarbleAmplitudes.from_a2(0.7)
for n in (1, 10, 1000, 100_000):
    spec = marbles.EnsembleSpec(n, amp)
    stats = marbles.reduction_time_stats(spec, 200, seed=7)
    print(f"n = {n:>7}: mean {stats['mean']:.3e} s  (H_n / Lambda = {stats['expected_mean']:.3e} s)")

spec = marbles.EnsembleSpec(20, amp)
ens = marbles.simulate_ensemble(spec, 20_000, seed=7)
counts = np.bincount(ens.final_k_in, minlength=21)
pmf = marbles.count_distribution(spec).probabilities()
print("\nmarbles found in the box after reduction, n = 20, |a|^2 = 0.7")
for k in range(8, 21):
    print(f"{k:3d}  {counts[k] / len(ens):.4f}  {pmf[k]:.4f}  " + "#" * int(200 * pmf[k]))
print(f"total variation from Binomial(20, 0.7): {marbles.total_variation(counts, pmf):.4f}")
