"""Survival of M_n - (3/2) ln n against the mixture E[exp(-C e^x D_n^+)].

C is fitted once at x = 0; the rest of the curve is a prediction.  n = 12
and n = 16 are read off the same trees.

    python demos/limit_law.py
"""
from brwlab import binary_gaussian
from brwlab.experiments import exp_limit_law
from brwlab.streams import Campaign

x = [-2 + 0.25 * k for k in range(17)]
reps = exp_limit_law(binary_gaussian(), 16, x, 2000, Campaign(5, "demo-limit"), compare_n=(12,))

for n, r in sorted(reps.items()):
    print(f"n = {n}: C_hat = {r.C_hat:.4f}, sup distance = {r.sup_distance:.4f}, "
          f"D_n < 0 on {r.negative_D_fraction:.1%} of trees")

r = reps[16]
print(f"\n{'x':>6} {'empirical':>10} {'mixture':>9}")
for xi, e, m in zip(r.x_grid, r.empirical_survival, r.mixture_prediction):
    print(f"{xi:6.2f} {e:10.4f} {m:9.4f}")
