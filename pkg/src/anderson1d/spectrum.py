"""Eigenvalues and eigenfunctions of the Dirichlet operator on ``[-L/2, L/2]``.

Counting uses the oscillation property: the number of eigenvalues ``<= lam``
is the number of completed half-turns of the forward phase started at 0.
Eigenfunctions glue a forward solution from the left wall to a backward
solution from the right wall, both driven by the same path.

Paths are given in the original frame.  With a coordinate scale ``E > 1``
the flows run on ``rescale(path, E)``; energies, centers and the
eigenfunction grid are always reported in original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .closed_form import dos
from .measures import GridMeasure
from .noise_field import NoisePath, generate, rescale, time_reverse
from .phase_flow import FlowParams, PhaseState, evolve, final_phases, prepare_path


class SpectrumError(RuntimeError):
    """Eigenvalue search or reconstruction failed."""


class ConcatenationError(SpectrumError):
    """Forward and backward phases do not match at the gluing point."""

    def __init__(self, message: str, defect: float):
        super().__init__(message)
        self.defect = defect


@dataclass(frozen=True)
class EigenSolveConfig:
    """Segment length ``L``, coordinate scale ``E`` and the energy window.

    The window is ``center +- h / (L n(center))`` unless ``window`` is given
    explicitly.  ``step`` is the flow step in the frame of scale ``E``.
    """

    L: float
    E: float = 1.0
    center: float | None = None
    h: float = 1.0
    lambda_tol: float | None = None
    match_tol: float = 1e-3
    step: float | None = None
    grid: int = 4096
    window: tuple[float, float] | None = None
    max_passes: int = 200

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not self.E >= 1.0:
            raise ValueError("coordinate scale E must be >= 1")
        if self.center is None:
            object.__setattr__(self, "center", float(self.E))
        if self.step is None:
            object.__setattr__(self, "step", 0.01 * self.E**-1.5)
        lo, hi = self.bounds
        if not hi > lo:
            raise ValueError("empty energy window")
        if self.lambda_tol is None:
            object.__setattr__(self, "lambda_tol", 1e-9 * (hi - lo))
        if not self.lambda_tol > 0:
            raise ValueError("lambda_tol must be positive")

    @property
    def density(self) -> float:
        return dos(self.center)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.window is not None:
            return tuple(map(float, self.window))
        half = self.h / (self.L * self.density)
        return self.center - half, self.center + half

    @property
    def scan_spacing(self) -> float:
        return 1.0 / (4.0 * self.L * self.density)

    @property
    def half_time(self) -> float:
        """Half-length of the segment in the flow frame."""
        return 0.5 * self.L / self.E


def segment_path(seed: int, config: EigenSolveConfig, base_cells: int = 1) -> NoisePath:
    """Noise on ``[-L/2, L/2]`` fine enough for the flow step and the output grid."""
    step = config.step * config.E
    level = max(int(math.log2(config.grid)), math.ceil(math.log2(config.L / (base_cells * step))))
    return generate(seed, (-0.5 * config.L, 0.5 * config.L), max(level, 0), base_cells)


def _flow_path(path: NoisePath, config: EigenSolveConfig) -> NoisePath:
    t0, t1 = path.interval
    if abs(t0 + 0.5 * config.L) > 1e-9 * config.L or abs(t1 - 0.5 * config.L) > 1e-9 * config.L:
        raise SpectrumError(f"path interval {path.interval} is not [-L/2, L/2] for L={config.L}")
    return prepare_path(rescale(path, config.E), config.step)


def _count(phases: np.ndarray) -> np.ndarray:
    return np.floor(phases / math.pi).astype(np.int64)


def count_below(path: NoisePath, config: EigenSolveConfig, lam) -> np.ndarray | int:
    """Number of eigenvalues ``<= lam`` (vectorized over ``lam``)."""
    flow = _flow_path(path, config)
    lams = np.atleast_1d(np.asarray(lam, dtype=float))
    phases = final_phases(flow.increments, flow.dt, config.E**1.5, lams * math.sqrt(config.E))
    counts = _count(phases)
    return int(counts[0]) if np.ndim(lam) == 0 else counts


def eigenvalues_in(path: NoisePath, config: EigenSolveConfig,
                   bounds: tuple[float, float] | None = None) -> np.ndarray:
    """Eigenvalues in ``(lo, hi]`` located to ``lambda_tol`` by bisection."""
    lo, hi = config.bounds if bounds is None else bounds
    flow = _flow_path(path, config)
    alpha, root = config.E**1.5, math.sqrt(config.E)

    def counts(lams):
        return _count(final_phases(flow.increments, flow.dt, alpha, np.asarray(lams) * root))

    cells = max(1, math.ceil((hi - lo) / config.scan_spacing))
    grid = np.linspace(lo, hi, cells + 1)
    values = counts(grid)
    jump = values[1:] > values[:-1]
    left, right = grid[:-1][jump], grid[1:][jump]
    c_left, c_right = values[:-1][jump], values[1:][jump]
    found: list[np.ndarray] = []
    for _ in range(config.max_passes):
        narrow = right - left <= config.lambda_tol
        if narrow.any():
            mids = 0.5 * (left[narrow] + right[narrow])
            found.append(np.repeat(mids, (c_right - c_left)[narrow]))
        left, right, c_left, c_right = (a[~narrow] for a in (left, right, c_left, c_right))
        if left.size == 0:
            result = np.sort(np.concatenate(found)) if found else np.empty(0)
            return result
        mid = 0.5 * (left + right)
        c_mid = counts(mid)
        lower = c_mid > c_left
        upper = c_right > c_mid
        left = np.concatenate((left[lower], mid[upper]))
        right = np.concatenate((mid[lower], right[upper]))
        c_left, c_right = (np.concatenate((c_left[lower], c_mid[upper])),
                           np.concatenate((c_mid[lower], c_right[upper])))
    raise SpectrumError(f"bisection budget of {config.max_passes} passes exhausted")


def eigenvalues_below(path: NoisePath, config: EigenSolveConfig, upper: float) -> np.ndarray:
    """All eigenvalues ``<= upper``."""
    lower = min(upper, 0.0) - 1.0
    while count_below(path, config, lower) > 0:
        lower = 2.0 * lower - 1.0
    return eigenvalues_in(path, config, (lower, upper))


@dataclass(frozen=True, eq=False)
class Eigenpair:
    """One eigenfunction sampled on ``x`` (original units), normalized in L2."""

    lam: float
    center: float
    x: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    envelope: np.ndarray = field(repr=False)
    shape: GridMeasure = field(repr=False)
    decay_rate: float
    match_defect: float
    split: float

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    def norm(self) -> float:
        return math.fsum(self.samples**2) * self.spacing


def _decay_fit(x: np.ndarray, log_env: np.ndarray, center: float) -> float:
    top = log_env.max()
    keep = (log_env <= top + math.log(1e-2)) & (log_env >= top + math.log(1e-6))
    if keep.sum() < 3:
        return float("nan")
    distance = np.abs(x[keep] - center)
    slope = np.polyfit(distance, log_env[keep], 1)[0]
    return float(-slope)


def _split_index(rho_f: np.ndarray, rho_b: np.ndarray, defects: np.ndarray,
                 slack: float) -> int:
    """Gluing index: the largest ``min(rho_f, rho_b)`` where the two phases agree.

    Away from the localization center one of the two solutions carries the
    growing mode excited by the residual energy error, and its phase no
    longer matches the other.  For eigenfunctions pressed against a wall
    that flank can still have the largest ``min(rho_f, rho_b)``, so points
    whose phase defect exceeds the best one by more than ``slack`` are
    excluded first.
    """
    eligible = defects <= defects.min() + slack
    return int(np.argmax(np.where(eligible, np.minimum(rho_f, rho_b), -np.inf)))


def _profiles(path: NoisePath, config: EigenSolveConfig, lam: float):
    flow = _flow_path(path, config)
    if flow.n_cells % config.grid:
        raise SpectrumError(f"{flow.n_cells} cells are not a multiple of the grid {config.grid}")
    stride = flow.n_cells // config.grid
    T = config.half_time
    forward = evolve(flow, FlowParams(lam, config.E, "forward", flow.dt), PhaseState(-T), T, stride)
    mirrored = time_reverse(flow, 0.0)
    backward = evolve(mirrored, FlowParams(lam, config.E, "backward", flow.dt), PhaseState(-T), T, stride)
    return forward, backward


def eigenfunction(path: NoisePath, config: EigenSolveConfig, lam: float,
                  split: float | None = None, strict: bool = True) -> Eigenpair:
    """Glue forward and backward solutions at ``lam`` into a normalized eigenfunction.

    The gluing point maximizes ``min(rho_forward, rho_backward)`` over the
    grid points where the two phases agree, unless ``split`` (original
    units) is given.  With ``strict`` a phase mismatch above ``match_tol`` raises :class:`ConcatenationError`.
    """
    forward, backward = _profiles(path, config, lam)
    theta_f, rho_f = forward.theta, forward.rho
    # backward sample j sits at flow time -t_j, i.e. at forward index grid - j
    theta_b, rho_b = backward.theta[::-1], backward.rho[::-1]
    n = config.grid
    x = np.linspace(-0.5 * config.L, 0.5 * config.L, n + 1)
    totals = theta_f + theta_b
    defects = np.abs(totals - np.round(totals / math.pi) * math.pi)
    if split is None:
        j = _split_index(rho_f, rho_b, defects, 0.1 * config.match_tol)
    else:
        j = int(round((split + 0.5 * config.L) / config.L * n))
        if not 0 <= j <= n:
            raise SpectrumError(f"split {split} outside the segment")
    k = round(totals[j] / math.pi)
    defect = float(defects[j])
    if strict and defect > config.match_tol:
        raise ConcatenationError(f"phase mismatch {defect:.3g} at lam={lam!r}", defect)

    # y_b at the split equals (-1)**(k+1) r_b sin(theta_f); rescale to r_f
    log_r = np.concatenate((0.5 * rho_f[:j + 1], 0.5 * (rho_b[j + 1:] - rho_b[j]) + 0.5 * rho_f[j]))
    sines = np.concatenate((np.sin(theta_f[:j + 1]), (-1.0) ** (k + 1) * np.sin(theta_b[j + 1:])))
    shift = log_r.max()
    samples = np.exp(log_r - shift) * sines
    samples[0] = samples[-1] = 0.0
    dx = config.L / n
    norm = math.sqrt(math.fsum(samples**2) * dx)
    samples /= norm
    log_env = log_r - shift - math.log(norm)
    envelope = np.exp(log_env)
    weights = samples**2
    center = math.fsum(x * weights) * dx
    shape = GridMeasure((x[0] - center) / config.E, dx / config.E, weights)
    return Eigenpair(float(lam), center, x, samples, envelope, shape,
                     _decay_fit(x, log_env, center), float(defect), float(x[j]))


def rescaled_points(eigenpairs, config: EigenSolveConfig) -> np.ndarray:
    """Rows ``(L n (lam - center), U / L)``."""
    n = config.density
    rows = [(config.L * n * (p.lam - config.center), p.center / config.L) for p in eigenpairs]
    return np.array(rows, dtype=float).reshape(-1, 2)
