"""Spine estimator against direct counting for the killed minimum.

Both columns estimate P(M_n^kill in [a_n(z) - 1, a_n(z))) with the same
number of replications.  A spine replication follows one tilted path and
grows the off-spine subtrees only when that path ends in the window, so
it costs far less than a full tree; the two columns should agree.

    python demos/spine_vs_direct.py
"""
import math

from brwlab import binary_gaussian
from brwlab.brw import killed_window_indicators
from brwlab.spine import PathConstraint, killed_min_estimator
from brwlab.stats import mean_estimate
from brwlab.streams import Campaign

model = binary_gaussian()
camp = Campaign(7, "demo-bridge")
n = 12

print(f"{'z':>5} {'direct':>22} {'spine':>22}")
for z in (0.5, 1.5, 2.5, 3.5):
    d = mean_estimate(killed_window_indicators(model, n, z, 20000, camp.child(f"direct-{z}")))
    s = killed_min_estimator(model, n, z, 0.0, PathConstraint(z, 0.0, n), 20000, camp.child(f"spine-{z}"))
    print(f"{z:5.1f} {d.value:11.5f} +- {d.stderr:7.5f} {s.value:11.5f} +- {s.stderr:7.5f}")

print(f"\n(3/2) ln n = {1.5 * math.log(n):.3f}; past that the window lies below the barrier and both are 0")
