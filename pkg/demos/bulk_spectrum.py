"""
Eigenvalues and eigenfunctions near a fixed energy
===================================================

Solve a few segments in a microscopic window around energy 1, look at
one eigenfunction, and run the local statistics on a modest sample.
"""
import numpy as np

from anderson1d.closed_form import nu_lambda
from anderson1d.noise_field import derive_seed
from anderson1d.spectrum import EigenSolveConfig, eigenfunction, eigenvalues_in, segment_path
from anderson1d.statistics import point_sample, poisson_suite, solve_seed, wegner

# a window holding on average two eigenvalues (h = 1)
config = EigenSolveConfig(400.0, E=1.0, h=1.0)
print("window", config.bounds)

path = segment_path(derive_seed(0, 0), config)
values = eigenvalues_in(path, config)
print("eigenvalues", values)

# each eigenfunction glues a forward and a backward solution where their phases agree
for lam in values:
    pair = eigenfunction(path, config, lam)
    print(f"lambda={lam:.9f}  center={pair.center:8.2f}  decay={pair.decay_rate:.4f}"
          f"  (nu/2={nu_lambda(1.0) / 2:.4f})  defect={pair.match_defect:.1e}")

# 300 segments: counts in the window and Poisson-type statistics
results = [solve_seed(derive_seed(0, s), config) for s in range(300)]
sample = point_sample(results, config)
print(wegner(sample).line())
for report in poisson_suite(sample):
    print(report.line())
print("mean count per segment", np.mean(sample.counts))

# the counts are Poisson only as L grows; the lattice Sturm count is fast
# enough to follow the variance-to-mean ratio over a range of lengths
from anderson1d.lattice_oracle import TridiagonalOperator, shared_path, sturm_count  # noqa: E402

for L in (100.0, 400.0, 1600.0):
    lo, hi = EigenSolveConfig(L, h=1.0).bounds
    counts = []
    for s in range(1000):
        T = TridiagonalOperator.from_path(shared_path(derive_seed(1, s), L, 0.01), 0.01)
        below = sturm_count(T, np.array([lo, hi]))
        counts.append(below[1] - below[0])
    counts = np.array(counts)
    print(f"L={L:g}  mean {counts.mean():.3f}  variance/mean {counts.var(ddof=1) / counts.mean():.3f}")
