"""Walk through the co-domain coverage grid by hand.

A classifier's co-domain is the set of (predicted class, confidence)
tuples it can emit. We discretize it into an N x M grid with at most k
inputs counted per cell, feed it a few outputs, and watch the two
coverage scores move.
"""

import numpy as np

from codofuzz import CoverageMatrix, OutputTuple, bin_index, infeasible_cells

# An N=10 class problem with M=10 confidence bins and k=3 per cell.
cov = CoverageMatrix(n_classes=10, n_bins=10, cap=3)

# The classic worked example: an image predicted as class 9 ("truck")
# with probability 0.689 lands in column int(0.689 * 10) = 6.
print("bin for confidence 0.689 with M=10:", bin_index(0.689, 10))

out = OutputTuple.from_probs(
    [0.02, 0.03, 0.01, 0.04, 0.05, 0.02, 0.06, 0.05, 0.031, 0.689]
)
print("update accepted:", cov.update(out))
print("cell (9, 6) now holds:", cov.counts[9, 6])

# Feeding the same cell beyond its capacity stops increasing coverage.
for i in range(4):
    print(f"repeat {i}: accepted={cov.update(out)}")

# Confidence can never drop below 1/N, so the leftmost floor(M/N)
# columns of every row are unreachable. With N=10, M=10 that is one
# column per row.
print("infeasible cells:", sorted(infeasible_cells(10, 10)))

# Scores: cdc counts occupied cells, kcdc counts consumed capacity.
# Both exclude the infeasible region by default.
rng = np.random.default_rng(0)
for _ in range(200):
    cov.update(OutputTuple.from_probs(rng.dirichlet(np.ones(10))))
print(f"cdc  = {cov.cdc():.3f}   (occupied cells / feasible cells)")
print(f"kcdc = {cov.kcdc():.3f}  (assigned inputs / total capacity)")
print(f"total assigned: {cov.total_assigned}")
