"""
Limit shapes and relaxation of the phase
=========================================

Draw profiles from the two limit samplers, compare them with eigenfunction
shapes, and watch the phase distribution forget its starting point.
"""
import numpy as np
from scipy import stats

from anderson1d.noise_field import derive_seed
from anderson1d.phase_flow import sample_Y_E, sample_Y_infinity
from anderson1d.spectrum import EigenSolveConfig
from anderson1d.statistics import equilibrium_decay, shape_suite, solve_seed

# log Y(8) for the large-energy limit has mean -1 and variance 1
logs = np.log([sample_Y_infinity(derive_seed(1, s), 8.0).y[-1] for s in range(2000)])
print(f"log Y(8): mean {logs.mean():.3f}  variance {logs.var(ddof=1):.3f}")

# eigenfunction shapes at energy 1 against the fixed-energy sampler
config = EigenSolveConfig(800.0, E=1.0, h=1.0)
shapes = [p.shape for s in range(60) for p in solve_seed(derive_seed(2, s), config, shapes=True).eigenpairs]
limits = [sample_Y_E(derive_seed(3, i), 1.0, 1.0).shape for i in range(300)]
for report in shape_suite(shapes, limits, min_shapes=50, min_limit=300):
    print(report.line())
second = [s.recentered().moment(2) for s in shapes]
print("median second moment: eigenfunctions", np.median(second),
      " sampler", np.median([s.recentered().moment(2) for s in limits]))
print("KS on the second moment", stats.ks_2samp(second, [s.recentered().moment(2) for s in limits]).pvalue)

# distance of the phase histogram to the invariant density, from two starts
report = equilibrium_decay(lam=1.0, E=1.0, paths=20000, seed=4)
for t, a, b in zip(report.details["times"], *report.details["distances"]):
    print(f"t={t:5.1f}  theta0=0: {a:.4f}  theta0=pi/2: {b:.4f}")
print(report.line(), "noise floor", round(report.details["noise_floor"], 4))
