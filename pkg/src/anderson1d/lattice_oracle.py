"""Finite-difference check of the phase-flow spectrum on the same noise.

The operator is ``-d^2/dx^2 + V`` on ``n`` sites of spacing ``h`` with the
wall one spacing beyond each end, so ``n`` sites span ``(n + 1) h``.  With
white noise the site potential is the cell average of the shared path.
Eigenvalues come from Sturm counts of the LDL^T pivots; eigenvectors from
shifted inverse iteration.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

from .noise_field import NoisePath, cell_integrals, generate, refine
from .spectrum import EigenSolveConfig, eigenvalues_below

_SAFE_MIN = sys.float_info.min


class LatticeError(RuntimeError):
    """Bisection budget or inverse iteration failed."""


@dataclass(frozen=True, eq=False)
class TridiagonalOperator:
    """Symmetric tridiagonal matrix with constant off-diagonal ``-1/h^2``."""

    h: float
    diag: np.ndarray
    origin: float = 0.0

    def __post_init__(self):
        diag = np.ascontiguousarray(self.diag, dtype=float)
        if diag.ndim != 1 or diag.size == 0 or not np.isfinite(diag).all():
            raise ValueError("diagonal must be a finite non-empty vector")
        diag.setflags(write=False)
        object.__setattr__(self, "diag", diag)

    @property
    def n(self) -> int:
        return self.diag.size

    @property
    def off(self) -> float:
        return -1.0 / self.h**2

    @property
    def sites(self) -> np.ndarray:
        """Site positions; ``origin`` is the first site."""
        return self.origin + self.h * np.arange(self.n)

    def gershgorin(self) -> tuple[float, float]:
        radius = 2.0 * abs(self.off)
        return float(self.diag.min() - radius), float(self.diag.max() + radius)

    def scale(self) -> float:
        lo, hi = self.gershgorin()
        return max(abs(lo), abs(hi))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[1:] += self.off * v[:-1]
        out[:-1] += self.off * v[1:]
        return out

    def dense(self) -> np.ndarray:
        return (np.diag(self.diag) + self.off * (np.eye(self.n, k=1) + np.eye(self.n, k=-1)))

    @classmethod
    def from_path(cls, path: NoisePath, h: float) -> TridiagonalOperator:
        """Sites at cell centers with ``V_i = (B((i+1)h) - B(ih)) / h``."""
        potential = cell_integrals(path, h)
        t0, _ = path.interval
        return cls(h, 2.0 / h**2 + potential, t0 + 0.5 * h)

    @classmethod
    def from_potential(cls, potential, span: float, n: int) -> TridiagonalOperator:
        """``n`` sites strictly inside ``[-span/2, span/2]`` with ``V`` sampled pointwise."""
        h = span / (n + 1)
        x = -0.5 * span + h * np.arange(1, n + 1)
        return cls(h, 2.0 / h**2 + np.asarray(potential(x), dtype=float), float(x[0]))

    @classmethod
    def free(cls, n: int, h: float) -> TridiagonalOperator:
        return cls(h, np.full(n, 2.0 / h**2))


@njit(cache=True)
def _sturm_counts(diag, off2, lams, pivmin):
    out = np.empty(lams.size, dtype=np.int64)
    for j in range(lams.size):
        lam = lams[j]
        count = 0
        d = diag[0] - lam
        if abs(d) < pivmin:
            d = pivmin if d >= 0.0 else -pivmin
        if d < 0.0:
            count += 1
        for i in range(1, diag.size):
            d = diag[i] - lam - off2 / d
            if abs(d) < pivmin:
                d = pivmin if d >= 0.0 else -pivmin
            if d < 0.0:
                count += 1
        out[j] = count
    return out


def sturm_count(T: TridiagonalOperator, lam):
    """Number of eigenvalues strictly below ``lam`` (vectorized over ``lam``)."""
    lams = np.atleast_1d(np.asarray(lam, dtype=float))
    off2 = T.off**2
    pivmin = _SAFE_MIN * max(1.0, off2)
    counts = _sturm_counts(T.diag, off2, lams, pivmin)
    return int(counts[0]) if np.ndim(lam) == 0 else counts


def eigenvalues_bisect(T: TridiagonalOperator, window: tuple[float, float] | None = None,
                       tol: float | None = None, max_passes: int = 200) -> np.ndarray:
    """Eigenvalues in ``[lo, hi)`` to absolute tolerance ``tol``.

    The default tolerance is ``4 eps`` times the Gershgorin scale, about
    the attainable accuracy of the pivot recurrence.
    """
    lo, hi = T.gershgorin() if window is None else map(float, window)
    if window is None:
        hi = math.nextafter(hi, math.inf)
    if tol is None:
        tol = 4.0 * np.finfo(float).eps * T.scale()
    c_lo, c_hi = sturm_count(T, np.array([lo, hi]))
    left, right = np.array([lo]), np.array([hi])
    count_left, count_right = np.array([c_lo]), np.array([c_hi])
    found = []
    for _ in range(max_passes):
        keep = count_right > count_left
        left, right, count_left, count_right = (a[keep] for a in (left, right, count_left, count_right))
        narrow = right - left <= tol
        if narrow.any():
            found.append(np.repeat(0.5 * (left[narrow] + right[narrow]),
                                   (count_right - count_left)[narrow]))
        left, right, count_left, count_right = (a[~narrow] for a in (left, right, count_left, count_right))
        if left.size == 0:
            return np.sort(np.concatenate(found)) if found else np.empty(0)
        mid = 0.5 * (left + right)
        count_mid = sturm_count(T, mid)
        left, right = np.concatenate((left, mid)), np.concatenate((mid, right))
        count_left = np.concatenate((count_left, count_mid))
        count_right = np.concatenate((count_mid, count_right))
    raise LatticeError(f"bisection budget of {max_passes} passes exhausted")


def free_eigenvalues(n: int, h: float) -> np.ndarray:
    """``4/h^2 sin^2(k pi / (2 (n + 1)))`` for ``k = 1..n``."""
    k = np.arange(1, n + 1)
    return 4.0 / h**2 * np.sin(k * np.pi / (2.0 * (n + 1))) ** 2


def eigenvector_inverse_iteration(T: TridiagonalOperator, lam: float, max_iter: int = 20,
                                  rtol: float = 1e-8) -> np.ndarray:
    """Eigenvector for the eigenvalue nearest ``lam``, normalized so ``h sum v^2 = 1``.

    Raises :class:`LatticeError` if the residual ``|Tv - lam v|`` (unit
    ``v``) does not drop below ``rtol`` times the operator scale.
    """
    scale = T.scale()
    shift = lam + 8.0 * np.finfo(float).eps * scale
    bands = np.empty((3, T.n))
    bands[0, 1:] = T.off
    bands[1] = T.diag - shift
    bands[2, :-1] = T.off
    v = np.random.Generator(np.random.Philox(T.n)).standard_normal(T.n)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        v = solve_banded((1, 1), bands, v)
        v /= np.linalg.norm(v)
        rayleigh = float(v @ T.matvec(v))
        if np.linalg.norm(T.matvec(v) - rayleigh * v) <= rtol * scale:
            sign = 1.0 if v[np.argmax(np.abs(v))] > 0 else -1.0
            return sign * v / math.sqrt(T.h)
    raise LatticeError(f"inverse iteration did not converge near {lam!r}")


def center_of_mass(T: TridiagonalOperator, vector: np.ndarray) -> float:
    weights = vector**2
    return math.fsum(T.sites * weights) / math.fsum(weights)


@dataclass(frozen=True)
class OracleComparison:
    """Flow and lattice eigenvalues below ``lam_max`` on one path, with the mesh study."""

    seed: int
    flow: np.ndarray
    lattice: np.ndarray
    flow_half: np.ndarray
    lattice_half: np.ndarray

    @property
    def counts_match(self) -> bool:
        sizes = {a.size for a in (self.flow, self.lattice, self.flow_half, self.lattice_half)}
        return len(sizes) == 1

    @property
    def tolerance(self) -> float:
        """Three times the summed step-halving changes of both solvers."""
        if not self.counts_match or self.flow.size == 0:
            return 0.0
        return 3.0 * (np.abs(self.flow - self.flow_half).max() + np.abs(self.lattice - self.lattice_half).max())

    @property
    def max_difference(self) -> float:
        if not self.counts_match or self.flow.size == 0:
            return 0.0 if self.counts_match else math.inf
        return float(np.abs(self.flow - self.lattice).max())

    @property
    def passed(self) -> bool:
        return self.counts_match and self.max_difference <= self.tolerance


def shared_path(seed: int, L: float, mesh: float) -> NoisePath:
    """Noise on ``[-L/2, L/2]`` with cell width exactly ``mesh``."""
    cells = round(L / mesh)
    if cells < 2 or abs(cells * mesh - L) > 1e-9 * L:
        raise ValueError(f"mesh {mesh} does not divide L={L}")
    level = 0
    while level < 4 and cells % 2 ** (level + 1) == 0:
        level += 1
    return generate(seed, (-0.5 * L, 0.5 * L), level, base_cells=cells >> level)


def compare_with_flow(seed: int, L: float = 10.0, lam_max: float = 10.0,
                      mesh: float = 1e-3) -> OracleComparison:
    """Eigenvalues ``<= lam_max`` from the phase flow and the lattice on the same noise.

    Both solvers run at ``mesh`` and at ``mesh / 2`` (the path refined by
    Brownian bridges), which gives the tolerance for their agreement.
    """
    path = shared_path(seed, L, mesh)
    fine = refine(path)
    results = []
    for p, h in ((path, mesh), (fine, 0.5 * mesh)):
        config = EigenSolveConfig(L, 1.0, window=(lam_max - 1.0, lam_max), step=h, grid=1, lambda_tol=1e-11)
        flow = eigenvalues_below(p, config, lam_max)
        T = TridiagonalOperator.from_path(p, h)
        lattice = eigenvalues_bisect(T, (T.gershgorin()[0], math.nextafter(lam_max, math.inf)))
        results.append((flow, lattice))
    (flow, lattice), (flow_half, lattice_half) = results
    return OracleComparison(seed, flow, lattice, flow_half, lattice_half)
