"""e^z P(M_n^kill < (3/2) ln n - z) across z, from one campaign of spines.

At fixed n the curve is flat only while the level a_n(z) stays well above
the killing barrier at 0; beyond z ~ (3/4) ln n it falls because the
window is squeezed against the barrier.  C1_hat averages the flat part.

    python demos/killed_tail_plateau.py [n]
"""
import sys

from brwlab import binary_gaussian
from brwlab.brw import a_n
from brwlab.experiments import c1_hat, exp_killed_tail
from brwlab.streams import Campaign

n = int(sys.argv[1]) if len(sys.argv) > 1 else 16
rep = exp_killed_tail(binary_gaussian(), n, [0.25 * k for k in range(1, 17)], 10 ** 5, Campaign(3, "demo-plateau"))

print(f"n = {n}")
print(f"{'z':>5} {'a_n(z)':>7} {'e^z P_kill':>12} {'se':>8}")
for z in rep.z_grid:
    e = rep.get(z, "ez_P_kill")
    print(f"{z:5.2f} {a_n(n, z):7.3f} {e.value:12.4f} {e.stderr:8.4f}")

c1 = c1_hat(rep)
print(f"\nC1_hat = {c1.value:.4f} +- {c1.stderr:.4f} over z in {rep.summary['plateau_z']}")
