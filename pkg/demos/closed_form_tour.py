"""
Rotation time, growth rate and density of states
=================================================

Quadrature values of the three spectral constants, their large-energy
behaviour, and a Monte Carlo look at the growth rate in distorted
coordinates.
"""
import math

from anderson1d.closed_form import dos, m_lambda, nu_lambda
from anderson1d.statistics import lyapunov_triangle

# the table printed by `anderson1d oracle`
print(f"{'lambda':>8} {'m':>12} {'nu':>12} {'n':>12}")
for lam in (-5.0, 0.0, 1.0, 5.0, 25.0):
    print(f"{lam:8g} {m_lambda(lam):12.6f} {nu_lambda(lam):12.6f} {dos(lam):12.6f}")

# large energies: m ~ pi / sqrt(lam) and n ~ 1 / (2 pi sqrt(lam))
for lam in (1e2, 1e4, 1e6):
    print(f"lambda={lam:g}  m*sqrt(lam)/pi={m_lambda(lam) * math.sqrt(lam) / math.pi:.6f}"
          f"  2*pi*sqrt(lam)*n={2 * math.pi * math.sqrt(lam) * dos(lam):.6f}")

# the two density-of-states routes: derivative of 1/m, and the direct integral
for lam in (0.0, 1.0, 5.0):
    print(f"lambda={lam:g}  route a {dos(lam, 'a'):.12f}  route b {dos(lam, 'b'):.12f}")

# growth rate at lambda = E in distorted coordinates: quadrature against
# renewal and slope estimates.  The quadrature tends to 1/4 as E grows.
for E in (1.0, 10.0, 100.0):
    report = lyapunov_triangle(lam=E, E=E, seed=1, paths=20, t_end=50.0, rotations=2000)
    row = "  ".join(f"{k} {v['value']:.4f}+-{v['se']:.4f}" for k, v in report.details.items())
    print(f"E={E:g}  {row}")
