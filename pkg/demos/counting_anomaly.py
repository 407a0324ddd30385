"""How unlikely is it that every marble in the universe sits in the box?

Each marble has a tail weight |b|^2 = e^(-2e15).  With n = 1e53 marbles the
probability that at least one is outside stays below 1e53 * |b|^2, which is
still a number of the form 10^(-1e15) to every printed digit.
"""

from grwcount import marbles, qmath

b2 = qmath.from_log10(-2e15 / qmath.LN10)
spec = marbles.EnsembleSpec("1e53", marbles.MarbleAmplitudes.from_b2(b2))

print("tail weight per marble     ", b2.order_of_magnitude())
print("P(all in the box)          ", marbles.prob_all_in(spec).order_of_magnitude())
print("P(some marble outside)     ", marbles.prob_not_all_in(spec).order_of_magnitude())
print("largest tau still obeyed   ", marbles.max_tau_for_n(spec.n, b2).order_of_magnitude())

# a case small enough to see the threshold happen
n_star = marbles.anomaly_threshold_n(0.5, 0.1)
print(f"\nwith |b|^2 = 0.1, more than {n_star:.4f} marbles push P(some outside) past 1/2")
