"""Quadrature oracles for the phase diffusion.

Coordinates with scale ``E >= 1`` (``E = 1`` is the original frame) enter
through ``alpha = E**1.5`` and ``beta = lam * sqrt(E)``, the coefficients of
the Riccati potential ``V(x) = beta x + alpha x**3 / 3``.

Mean rotation time, Lyapunov rate and density of states reduce to
    D(lam)  = int_0^inf u**-0.5 exp(-2 lam u - u**3 / 6) du
    N1(lam) = int_0^inf u**0.5  exp(-2 lam u - u**3 / 6) du
evaluated after ``u = v**2``.  The invariant density on the Riccati line
uses the single-integral form
    f(x) = 2 int_0^inf exp(-2 beta s - 2 alpha (x**2 s - x s**2 + s**3 / 3)) ds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quadrature import QuadratureError, geometric_breaks, integrate, integrate_batch

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_TOL = 1e-10
_TAIL = 745.0  # exp(-745) is below the smallest subnormal


class DOSMismatch(QuadratureError):
    """The two density-of-states routes disagree beyond tolerance."""


def _coefficients(lam: float, E: float) -> tuple[float, float]:
    if not E >= 1.0:
        raise ValueError("coordinate scale E must be >= 1")
    return E**1.5, lam * math.sqrt(E)


@lru_cache(maxsize=4096)
def _rotation_integrals(lam: float) -> tuple[float, float]:
    """``(D, N1)`` for energy ``lam``."""
    def exponent(v):
        return 2.0 * lam * v * v + v**6 / 6.0

    floor = min(0.0, exponent((-4.0 * lam) ** 0.25)) if lam < 0 else 0.0
    upper = 1.0
    while exponent(upper) < floor + _TAIL:
        upper *= 2.0
    scale = 1.0 / math.sqrt(2.0 * abs(lam) + 1.0)
    breaks = geometric_breaks(upper, 1e-4 * scale)
    edges = np.column_stack((breaks[:-1], breaks[1:]))
    n = len(edges)

    def integrand(v, owner):
        weight = np.exp(-exponent(v))
        return 2.0 * np.where(owner == 0, weight, v * v * weight)

    values, _ = integrate_batch(integrand, np.vstack((edges, edges)),
                                np.repeat([0, 1], n), 2, rtol=1e-14)
    return float(values[0]), float(values[1])


def m_lambda(lam: float, E: float = 1.0) -> float:
    """Mean rotation time ``sqrt(2 pi) / E * D(lam)``."""
    _coefficients(lam, E)
    return SQRT_2PI * _rotation_integrals(float(lam))[0] / E


def nu_lambda(lam: float, E: float = 1.0) -> float:
    """Linear growth rate of ``rho = ln r**2``: ``E * N1 / D``."""
    _coefficients(lam, E)
    denominator, numerator = _rotation_integrals(float(lam))
    return E * numerator / denominator


def _dos_from_rotation(lam: float) -> float:
    # n = d/dlam (1/m) = -m'/m**2 with m' = -2 sqrt(2 pi) N1
    denominator, numerator = _rotation_integrals(float(lam))
    return 2.0 * numerator / (SQRT_2PI * denominator**2)


def dos(lam: float, route: str = "a", E: float = 1.0, check: bool = False) -> float:
    """Density of states at energy ``lam``.

    Route ``"a"`` differentiates ``1/m`` under the integral sign; route
    ``"b"`` integrates ``mu(theta) mu(pi - theta) sin(theta)**2`` in the
    coordinates of scale ``E``.  With ``check=True`` both are computed and
    a relative disagreement above 1e-5 raises :class:`DOSMismatch`.
    """
    if route not in ("a", "b"):
        raise ValueError(f"unknown route {route!r}")
    if route == "a" and not check:
        return _dos_from_rotation(lam)
    first = _dos_from_rotation(lam)
    second = _dos_from_invariant_density(float(lam), float(E))
    if check and abs(first - second) > 1e-5 * abs(first):
        raise DOSMismatch(f"dos routes disagree at {lam}: {first!r} vs {second!r}")
    return first if route == "a" else second


# --- invariant density on the Riccati line --------------------------------

def _phase_exponent(s, x, alpha, beta):
    return 2.0 * beta * s + 2.0 * alpha * (x * x * s - x * s * s + s**3 / 3.0)


def _cutoffs(x, alpha, beta):
    """Upper limit in ``s`` beyond which the integrand is negligible."""
    floor = np.zeros_like(x)
    if beta < 0:
        for sign in (-1.0, 1.0):
            s_star = x + sign * math.sqrt(-beta / alpha)
            valid = s_star > 0
            floor = np.where(valid, np.minimum(floor, _phase_exponent(np.maximum(s_star, 0), x, alpha, beta)), floor)
    slope = np.abs(2.0 * beta + 2.0 * alpha * x * x) + 2.0 * alpha ** (1.0 / 3.0)
    upper = 1.0 / slope
    pending = _phase_exponent(upper, x, alpha, beta) < floor + _TAIL
    while pending.any():
        upper = np.where(pending, 2.0 * upper, upper)
        pending = _phase_exponent(upper, x, alpha, beta) < floor + _TAIL
    return upper, slope


def riccati_density_parts(x, lam: float, E: float = 1.0, derivative: bool = False):
    """Unnormalized density ``f(x)`` (and ``f'(x)`` if requested) on finite ``x``."""
    alpha, beta = _coefficients(lam, E)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    upper, slope = _cutoffs(x, alpha, beta)
    edges, owners = [], []
    for i, (top, rate) in enumerate(zip(upper, slope)):
        breaks = geometric_breaks(top, 1e-6 / rate)
        edges.append(np.column_stack((breaks[:-1], breaks[1:])))
        owners.append(np.full(len(breaks) - 1, i))
    edges = np.vstack(edges)
    owners = np.concatenate(owners)
    n = x.size
    if derivative:
        edges = np.vstack((edges, edges))
        owners = np.concatenate((owners, owners + n))

    def integrand(s, owner):
        xo = x[owner % n]
        weight = 2.0 * np.exp(-_phase_exponent(s, xo, alpha, beta))
        if not derivative:
            return weight
        return np.where(owner < n, weight, -2.0 * alpha * (2.0 * xo * s - s * s) * weight)

    values, _ = integrate_batch(integrand, edges, owners, 2 * n if derivative else n, rtol=1e-13)
    if derivative:
        return values[:n], values[n:]
    return values


def invariant_density_x(lam: float, E: float, x) -> np.ndarray:
    """Stationary density ``f(x) / m`` of the Riccati coordinate."""
    return riccati_density_parts(x, lam, E) / m_lambda(lam, E)


def _reduced(theta):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return np.mod(theta, np.pi)


def invariant_density_theta(lam: float, E: float, theta) -> np.ndarray:
    """Stationary density of the phase modulo pi (continuous at 0 and pi)."""
    theta = _reduced(theta)
    alpha, _ = _coefficients(lam, E)
    m = m_lambda(lam, E)
    out = np.full(theta.shape, 1.0 / (alpha * m))
    inner = (theta > 0) & (np.tan(theta) != 0)
    if inner.any():
        x = 1.0 / np.tan(theta[inner])
        out[inner] = (1.0 + x * x) * riccati_density_parts(x, lam, E) / m
    return out


def log_derivative_mu(lam: float, E: float, theta) -> np.ndarray:
    """``d/dtheta log mu(theta)`` via ``-2x - (1 + x**2) f'(x) / f(x)``, ``x = cot theta``."""
    theta = _reduced(theta)
    out = np.zeros(theta.shape)
    inner = theta > 0
    if inner.any():
        x = 1.0 / np.tan(theta[inner])
        f, fprime = riccati_density_parts(x, lam, E, derivative=True)
        out[inner] = -2.0 * x - (1.0 + x * x) * fprime / f
    return out


def _dos_from_invariant_density(lam: float, E: float) -> float:
    def integrand(theta):
        density = invariant_density_theta(lam, E, theta.ravel())
        mirrored = invariant_density_theta(lam, E, np.pi - theta.ravel())
        return (density * mirrored * np.sin(theta.ravel()) ** 2).reshape(theta.shape)

    total = integrate(integrand, np.linspace(0.0, np.pi, 9), rtol=1e-11)
    return total / math.sqrt(E)


# --- tabulated density for the samplers -----------------------------------

@dataclass(frozen=True, eq=False)
class InvariantDensity:
    """Phase density tabulated on a uniform grid of ``[0, pi]``.

    ``density`` and ``log_derivative`` are sampled at ``theta``; values in
    between are linearly interpolated (the functions are smooth and
    pi-periodic).
    """

    lam: float
    E: float
    m: float
    theta: np.ndarray
    density: np.ndarray
    log_derivative: np.ndarray

    def mu(self, theta) -> np.ndarray:
        return np.interp(np.mod(theta, np.pi), self.theta, self.density)

    def log_derivative_at(self, theta) -> np.ndarray:
        return np.interp(np.mod(theta, np.pi), self.theta, self.log_derivative)

    def mixture_weights(self) -> np.ndarray:
        """``mu(theta) mu(pi - theta) sin(theta)**2 / (sqrt(E) n)`` on the grid."""
        return (self.density * self.density[::-1] * np.sin(self.theta) ** 2
                / (math.sqrt(self.E) * dos(self.lam)))

    def mixture_cdf(self) -> np.ndarray:
        weights = self.mixture_weights()
        steps = 0.5 * (weights[1:] + weights[:-1]) * np.diff(self.theta)
        return np.concatenate(([0.0], np.cumsum(steps)))


@lru_cache(maxsize=64)
def invariant_table(lam: float, E: float = 1.0, points: int = 2048) -> InvariantDensity:
    theta = np.linspace(0.0, np.pi, points + 1)
    density = invariant_density_theta(lam, E, theta[:-1])
    density = np.append(density, density[0])
    slope = log_derivative_mu(lam, E, theta[:-1])
    slope = np.append(slope, slope[0])
    for array in (theta, density, slope):
        array.setflags(write=False)
    return InvariantDensity(float(lam), float(E), m_lambda(lam, E), theta, density, slope)


@dataclass(frozen=True)
class SpectralOracle:
    lam: float
    E: float
    m: float
    nu: float
    n: float
    quadrature_tol: float = DEFAULT_TOL


def spectral_oracle(lam: float, E: float = 1.0) -> SpectralOracle:
    return SpectralOracle(float(lam), float(E), m_lambda(lam, E), nu_lambda(lam, E), dos(lam))
