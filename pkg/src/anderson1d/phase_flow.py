"""Phase and log-radius diffusions driven by a shared Brownian path.

The phase of ``y'' = (xi - lam) y`` in coordinates of scale ``E`` solves

    d theta = (alpha cos^2 + beta sin^2 + sin^3 cos) dt - sin^2 theta dB
    d rho   = ((alpha - beta) sin 2theta + sin^2 - sin^2(2 theta) / 2) dt + sin 2theta dB

with ``alpha = E**1.5`` and ``beta = lam * sqrt(E)``.  Every routine here
reads time in the frame of the path it is given: for ``E > 1`` pass
``noise_field.rescale(path, E)``.  Backward runs expect the time-reversed
path (``noise_field.time_reverse``).

Steps are a noise kick on ``X = cot theta`` followed by the exact
deterministic flow (see ``_kernels``), so winding is exact for any step
and the scheme has strong order one in the additive Riccati noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .closed_form import invariant_table
from .measures import GridMeasure
from .noise_field import NoiseError, NoisePath, derive_seed, generate, refine_to

FLAVORS = ("forward", "backward", "adjoint")


class FlowError(RuntimeError):
    """The requested evolution cannot be carried out on the given path."""


class RotationNotReached(FlowError):
    """The path ended before the phase completed the requested rotations."""


@dataclass(frozen=True)
class FlowParams:
    """Energy ``lam``, coordinate scale ``E`` and the base step of one evolution."""

    lam: float
    E: float = 1.0
    flavor: str = "forward"
    step: float | None = None

    def __post_init__(self):
        if not self.E >= 1.0:
            raise ValueError("coordinate scale E must be >= 1")
        if self.flavor not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}")
        if self.step is None:
            object.__setattr__(self, "step", 0.01 * self.E**-1.5)
        if not self.step > 0:
            raise ValueError("step must be positive")

    @property
    def alpha(self) -> float:
        return self.E**1.5

    @property
    def beta(self) -> float:
        return self.lam * math.sqrt(self.E)


@dataclass(frozen=True)
class PhaseState:
    t: float
    theta: float = 0.0
    rho: float = 0.0
    z: float | None = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples of one evolution at the output stride (columns share an index)."""

    params: FlowParams
    t: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    z: np.ndarray | None = field(default=None)

    def __len__(self) -> int:
        return self.t.size

    @property
    def final(self) -> PhaseState:
        return self[-1]

    def __getitem__(self, i: int) -> PhaseState:
        z = None if self.z is None else float(self.z[i])
        return PhaseState(float(self.t[i]), float(self.theta[i]), float(self.rho[i]), z)

    @property
    def y(self) -> np.ndarray:
        """Solution ``r sin theta`` with ``r = exp(rho / 2)``."""
        return np.exp(0.5 * self.rho) * np.sin(self.theta)

    def to_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["t", "theta", "rho", "z"])
        z = self.z if self.z is not None else np.full(self.t.size, np.nan)
        for row in zip(self.t, self.theta, self.rho, z):
            writer.writerow([repr(float(v)) if not math.isnan(v) else "" for v in row])


# --- drift formulas --------------------------------------------------------

def theta_drift(theta, lam: float, E: float = 1.0):
    """Ito drift of the forward (and backward) phase."""
    s, c = np.sin(theta), np.cos(theta)
    return E**1.5 * c * c + lam * math.sqrt(E) * s * s + s**3 * c


def rho_drift(theta, lam: float, E: float = 1.0):
    """Ito drift of ``rho = ln r^2``."""
    s, c = np.sin(theta), np.cos(theta)
    return 2.0 * (E**1.5 - lam * math.sqrt(E)) * s * c + s * s - 2.0 * (s * c) ** 2


def adjoint_theta_drift(theta, lam: float, E: float = 1.0, log_slope=None):
    """Drift of the adjoint phase: ``-b + (sin^4)' + sin^4 * (log mu)'``."""
    s, c = np.sin(theta), np.cos(theta)
    if log_slope is None:
        log_slope = invariant_table(float(lam), float(E)).log_derivative_at(theta)
    return -theta_drift(theta, lam, E) + 4.0 * s**3 * c + s**4 * log_slope


def adjoint_rho_drift(theta, lam: float, E: float = 1.0, log_slope=None):
    """Drift of the adjoint log-radius."""
    s, c = np.sin(theta), np.cos(theta)
    if log_slope is None:
        log_slope = invariant_table(float(lam), float(E)).log_derivative_at(theta)
    return (-2.0 * (E**1.5 - lam * math.sqrt(E)) * s * c + s * s - 6.0 * (s * c) ** 2
            - 2.0 * s**3 * c * log_slope)


# --- evolution --------------------------------------------------------------

def _use_vector(alpha: float, beta: float, dt: float) -> bool:
    return max(alpha, abs(beta)) * dt <= 1.0


def prepare_path(path: NoisePath, step: float) -> NoisePath:
    """Refine ``path`` (same realization) until its cells are at most ``step``."""
    try:
        return refine_to(path, step)
    except NoiseError as exc:
        raise FlowError(f"path too coarse for step {step}: {exc}") from exc


def _index(path: NoisePath, t: float) -> int:
    t0, t1 = path.interval
    position = (t - t0) / path.dt
    index = round(position)
    if abs(position - index) > 1e-6 or not 0 <= index <= path.n_cells:
        raise FlowError(f"time {t} is not a grid point of the path on [{t0}, {t1}]")
    return index


def _window(path: NoisePath, params: FlowParams, init: PhaseState, t_end: float):
    if not t_end > init.t:
        raise FlowError("t_end must exceed the initial time")
    path = prepare_path(path, params.step)
    start, stop = _index(path, init.t), _index(path, t_end)
    return path, path.increments[start:stop]


def _record(n: int, stride: int) -> tuple[int, bool]:
    slots = 1 + n // stride
    return slots, n % stride != 0


def evolve(path: NoisePath, params: FlowParams, init: PhaseState, t_end: float,
           stride: int = 1, track_z: bool = False) -> Trajectory:
    """Integrate the forward or backward phase from ``init`` to ``t_end``.

    Samples are kept every ``stride`` steps plus the final state.  With
    ``track_z`` the energy derivative ``z = d theta / d lam`` is carried
    from ``init.z`` (0 by default) through its integral representation.
    """
    if params.flavor == "adjoint":
        return evolve_adjoint(path, params, init, t_end, stride)
    path, increments = _window(path, params, init, t_end)
    dt = path.dt
    n = increments.size
    slots, tail = _record(n, stride)
    out = [np.empty(slots) for _ in range(3)]
    kernel = K.vector_integrate if _use_vector(params.alpha, params.beta, dt) else K.integrate
    z0 = 0.0 if init.z is None else init.z
    theta, rho, z = kernel(init.theta, init.rho, z0, increments, dt, params.alpha, params.beta,
                           math.sqrt(params.E), params.flavor == "backward", track_z, stride,
                           *out)
    times = init.t + dt * stride * np.arange(slots)
    if tail:
        out = [np.append(column, value) for column, value in zip(out, (theta, rho, z))]
        times = np.append(times, t_end)
    return Trajectory(params, times, out[0], out[1], out[2] if track_z else None)


def evolve_adjoint(path: NoisePath, params: FlowParams, init: PhaseState, t_end: float,
                   stride: int = 1) -> Trajectory:
    """Integrate the adjoint pair ``(theta_bar, rho_bar)`` from ``init``."""
    params = replace(params, flavor="adjoint")
    path, increments = _window(path, params, init, t_end)
    dt = path.dt
    table = invariant_table(float(params.lam), float(params.E)).log_derivative
    n = increments.size
    slots, tail = _record(n, stride)
    out = [np.empty(slots) for _ in range(2)]
    if _use_vector(params.alpha, params.beta, dt):
        theta, rho = K.vector_integrate_adjoint(init.theta, init.rho, increments, dt, params.alpha,
                                                params.beta, table, stride, *out)
    else:
        theta, rho = K.integrate_adjoint(init.theta, init.rho, increments, dt, params.alpha,
                                         params.beta, table, stride, *out)
    times = init.t + dt * stride * np.arange(slots)
    if tail:
        out = [np.append(column, value) for column, value in zip(out, (theta, rho))]
        times = np.append(times, t_end)
    return Trajectory(params, times, out[0], out[1])


def final_phases(increments: np.ndarray, dt: float, alpha: float, betas, theta0: float = 0.0,
                 backward: bool = False) -> np.ndarray:
    """Terminal phase for every ``beta`` on the same increments."""
    betas = np.ascontiguousarray(betas, dtype=float)
    out = np.empty(betas.size)
    fast = np.maximum(alpha, np.abs(betas)) * dt <= 1.0
    if fast.any():
        out[fast] = K.vector_final_phases(theta0, increments, dt, alpha, betas[fast], backward)
    if (~fast).any():
        out[~fast] = K.final_phases(theta0, increments, dt, alpha, betas[~fast], backward)
    return out


# --- rotation times ---------------------------------------------------------

def rotation_times(path: NoisePath, params: FlowParams, theta0: float = 0.0,
                   limit: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Times (from the path start) at which the phase reaches ``theta0 + k pi``.

    Returns up to ``limit`` hitting times and the log-radius at each; by the
    strong Markov property the gaps are independent rotation times.
    """
    path = prepare_path(path, params.step)
    times = np.empty(limit)
    rho = np.empty(limit)
    count = K.rotation_events(theta0, path.increments, path.dt, params.alpha, params.beta,
                              times, rho)
    return times[:count], rho[:count]


def sample_rotation_time(path: NoisePath, params: FlowParams, theta0: float = 0.0) -> float:
    """First time the phase started at ``theta0`` gains ``pi``."""
    times, _ = rotation_times(path, params, theta0, 1)
    if times.size == 0:
        raise RotationNotReached(f"no rotation within {path.interval}")
    return float(times[0])


# --- pairs ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PhasePair:
    lower: Trajectory
    upper: Trajectory

    @property
    def gap(self) -> np.ndarray:
        """``alpha(t) = theta_hi(t) - theta_lo(t)``."""
        return self.upper.theta - self.lower.theta


def evolve_pair(path: NoisePath, lam_lo: float, lam_hi: float, E: float, init: PhaseState,
                t_end: float, stride: int = 1, init_hi: PhaseState | None = None,
                step: float | None = None) -> PhasePair:
    """Two forward phases at ``lam_lo <= lam_hi`` driven by the same path."""
    if lam_lo > lam_hi:
        raise ValueError("lam_lo must not exceed lam_hi")
    low = FlowParams(lam_lo, E, "forward", step)
    high = FlowParams(lam_hi, E, "forward", low.step)
    return PhasePair(evolve(path, low, init, t_end, stride),
                     evolve(path, high, init_hi or init, t_end, stride))


# --- limit shapes -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LimitShape:
    """A sampled profile ``y`` on the grid ``t``, its center and shape measure."""

    t: np.ndarray
    y: np.ndarray
    center: float
    shape: GridMeasure


def _shape_of(t: np.ndarray, y: np.ndarray) -> LimitShape:
    weights = y * y
    center = float(np.dot(t, weights) / np.sum(weights))
    shape = GridMeasure(float(t[0]) - center, float(t[1] - t[0]), weights)
    return LimitShape(t, y, center, shape)


def sample_Y_infinity(seed: int, t_max: float, step: float = 0.01) -> LimitShape:
    """``exp(-|t|/8 + B(t) / (2 sqrt 2))`` for a two-sided Brownian motion ``B``."""
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    half = math.ceil(t_max / step)
    path = generate(seed, (-half * step, half * step), 0, base_cells=2 * half)
    t = path.times()
    positions = path.positions()
    brownian = positions - positions[half]
    y = np.exp(-np.abs(t) / 8.0 + brownian / (2.0 * math.sqrt(2.0)))
    y[half] = 1.0
    return _shape_of(t, y)


def draw_mixture_phase(seed: int, lam: float, E: float = 1.0) -> float:
    """Phase drawn from ``mu(theta) mu(pi - theta) sin^2 theta / (sqrt(E) n)``."""
    table = invariant_table(float(lam), float(E))
    cdf = table.mixture_cdf()
    uniform = np.random.Generator(np.random.Philox(derive_seed(seed, 0))).random()
    return float(np.interp(uniform * cdf[-1], cdf, table.theta))


def sample_Y_E(seed: int, lam: float, E: float = 1.0, t_max: float | None = None,
               step: float | None = None) -> LimitShape:
    """Concatenated adjoint profile: ``t >= 0`` from ``pi - theta``, ``t <= 0`` from ``theta``."""
    params = FlowParams(lam, E, "adjoint", step)
    if t_max is None:
        from .closed_form import nu_lambda
        t_max = 40.0 / nu_lambda(lam, E)
    cells = math.ceil(t_max / params.step)
    t_max = cells * params.step
    theta = draw_mixture_phase(seed, lam, E)
    sides = []
    for index, start in ((1, math.pi - theta), (2, theta)):
        path = generate(derive_seed(seed, index), (0.0, t_max), 0, base_cells=cells)
        run = evolve_adjoint(path, params, PhaseState(0.0, start, 0.0), t_max)
        sides.append(run.y)
    right, left = sides
    t = params.step * np.arange(-cells, cells + 1)
    y = np.concatenate((left[:0:-1], right))
    return _shape_of(t, y)
