"""Reproducible Brownian paths shared by every solver.

A path is stored as integer multiples of a power-of-two quantum, so that
sums of increments (coarse-graining, telescoping, reversal) are exact in
floating point regardless of summation order.  Randomness comes from the
counter-based Philox generator keyed by ``(seed, level)`` with the cell
index as counter, which makes every cell's draw independent of traversal
order.

Time reversal and rescaling are stored as an affine change of time on top
of the generated frame, so refinement of a transformed path refines the
underlying realization and never draws new randomness.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

MAX_LEVEL = 30
_HEADER = struct.Struct("<Qddqq")
_SEED_LIMIT = 2**64


class NoiseError(ValueError):
    """Invalid request on a noise path."""


def _quantum(length: float) -> float:
    # Partial sums stay below 2**53 quanta as long as |B| < 1024 * sqrt(T).
    exponent = math.ceil(math.log2(1024.0 * math.sqrt(length)))
    return math.ldexp(1.0, exponent - 53)


def bridge_normals(seed: int, level: int, start: int, stop: int) -> np.ndarray:
    """Standard normals for cells ``start..stop-1`` drawn at ``level``.

    Each value depends only on ``(seed, level, cell)``; any block can be
    produced on its own and matches the corresponding slice of a larger
    block.
    """
    if stop <= start:
        return np.empty(0)
    first = start // 4
    gen = Philox(key=np.array([seed, level], dtype=np.uint64),
                 counter=np.array([first, 0, 0, 0], dtype=np.uint64))
    raw = gen.random_raw(stop - 4 * first)[start - 4 * first:]
    uniforms = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(uniforms)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit path seed for run index ``index`` under ``master_seed``."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Brownian increments on a uniform grid of ``base_cells * 2**level`` cells.

    ``quanta`` holds the increments of the generated frame as integers.
    The time map ``t = time_slope * t_source + time_shift`` and the value
    factor ``sqrt(|time_slope|)`` express reversal and rescaling.
    """

    seed: int
    source_interval: tuple[float, float]
    level: int
    base_cells: int
    quanta: np.ndarray = field(repr=False)
    unit: float
    time_slope: float = 1.0
    time_shift: float = 0.0

    @property
    def interval(self) -> tuple[float, float]:
        a, b = (self.time_slope * t + self.time_shift for t in self.source_interval)
        return (min(a, b), max(a, b))

    @property
    def n_cells(self) -> int:
        return self.quanta.size

    @property
    def dt(self) -> float:
        t0, t1 = self.interval
        return (t1 - t0) / self.n_cells

    @property
    def value_unit(self) -> float:
        """Value of one quantum in this path's frame."""
        return self.unit * math.sqrt(abs(self.time_slope))

    @property
    def oriented_quanta(self) -> np.ndarray:
        return self.quanta[::-1] if self.time_slope < 0 else self.quanta

    @property
    def increments(self) -> np.ndarray:
        return self.oriented_quanta * self.value_unit

    @property
    def terminal_value(self) -> float:
        """B(t1) - B(t0) in this path's frame."""
        return float(int(self.quanta.sum())) * self.value_unit

    def times(self) -> np.ndarray:
        t0, _ = self.interval
        return t0 + self.dt * np.arange(self.n_cells + 1)

    def positions(self) -> np.ndarray:
        """B at the grid times, starting from 0."""
        total = np.concatenate(([0], np.cumsum(self.oriented_quanta)))
        return total * self.value_unit

    def _with_quanta(self, quanta: np.ndarray, level: int) -> NoisePath:
        quanta.setflags(write=False)
        return NoisePath(self.seed, self.source_interval, level, self.base_cells,
                         quanta, self.unit, self.time_slope, self.time_shift)

    @classmethod
    def from_increments(cls, increments, interval: tuple[float, float]) -> NoisePath:
        """Wrap given increments (fixtures, replay); values are rounded to the quantum."""
        t0, t1 = map(float, interval)
        if not t1 > t0:
            raise NoiseError(f"invalid interval [{t0}, {t1}]")
        values = np.asarray(increments, dtype=np.float64)
        unit = _quantum(t1 - t0)
        while np.abs(np.cumsum(values)).max(initial=0.0) >= 2.0**52 * unit:
            unit *= 2.0
        quanta = np.rint(values / unit).astype(np.int64)
        quanta.setflags(write=False)
        return cls(0, (t0, t1), 0, values.size, quanta, unit)


def generate(seed: int, interval: tuple[float, float], level: int,
             base_cells: int = 1, max_level: int = MAX_LEVEL) -> NoisePath:
    """Brownian path with ``base_cells * 2**level`` cells over ``interval``.

    Level-0 cells are drawn directly; each further level inserts Brownian
    bridge midpoints, so ``generate(..., level + 1)`` is ``refine`` of
    ``generate(..., level)``.
    """
    t0, t1 = map(float, interval)
    if not t1 > t0:
        raise NoiseError(f"invalid interval [{t0}, {t1}]")
    if level < 0 or base_cells < 1:
        raise NoiseError("level must be >= 0 and base_cells >= 1")
    if level > max_level:
        raise NoiseError(f"level {level} exceeds the maximum depth {max_level}")
    if not 0 <= seed < _SEED_LIMIT:
        raise NoiseError("seed must fit in 64 unsigned bits")
    length = t1 - t0
    unit = _quantum(length)
    std = math.sqrt(length / base_cells)
    quanta = np.rint(std * bridge_normals(seed, 0, 0, base_cells) / unit).astype(np.int64)
    for lev in range(1, level + 1):
        quanta = _bridge(quanta, seed, lev, length / (base_cells * 2 ** (lev - 1)), unit)
    quanta.setflags(write=False)
    return NoisePath(seed, (t0, t1), level, base_cells, quanta, unit)


def _bridge(parents: np.ndarray, seed: int, level: int, width: float, unit: float) -> np.ndarray:
    normals = bridge_normals(seed, level, 0, parents.size)
    first = np.rint(parents / 2.0 + (0.5 * math.sqrt(width) / unit) * normals).astype(np.int64)
    children = np.empty(2 * parents.size, dtype=np.int64)
    children[0::2] = first
    children[1::2] = parents - first
    return children


def refine(path: NoisePath, max_level: int = MAX_LEVEL) -> NoisePath:
    """Insert Brownian-bridge midpoints into every cell (level + 1)."""
    if path.level + 1 > max_level:
        raise NoiseError(f"level {path.level + 1} exceeds the maximum depth {max_level}")
    t0, t1 = path.source_interval
    width = (t1 - t0) / path.n_cells
    quanta = _bridge(path.quanta, path.seed, path.level + 1, width, path.unit)
    return path._with_quanta(quanta, path.level + 1)


def coarsen(path: NoisePath) -> NoisePath:
    """Sum sibling cells (inverse of ``refine``), exact by construction."""
    if path.level == 0:
        raise NoiseError("cannot coarsen a level-0 path")
    quanta = path.quanta.reshape(-1, 2).sum(axis=1)
    return path._with_quanta(quanta, path.level - 1)


def refine_to(path: NoisePath, step: float, max_level: int = MAX_LEVEL) -> NoisePath:
    """Refine until the cell width is at most ``step``."""
    while path.dt > step * (1.0 + 1e-12):
        path = refine(path, max_level)
    return path


def time_reverse(path: NoisePath, pivot: float = 0.0) -> NoisePath:
    """Path of ``t -> B(2 pivot - t)`` read forward, i.e. ``B^-`` for pivot 0.

    With ``pivot = 0`` on ``[-L/2, L/2]`` the increments of the result over
    ``[t, t + dt]`` are those of the source over ``[-t - dt, -t]``: same
    values, reverse order.
    """
    t0, t1 = path.interval
    if not t0 <= pivot <= t1:
        raise NoiseError(f"pivot {pivot} outside [{t0}, {t1}]")
    return NoisePath(path.seed, path.source_interval, path.level, path.base_cells,
                     path.quanta, path.unit, -path.time_slope, 2.0 * pivot - path.time_shift)


def rescale(path: NoisePath, E: float) -> NoisePath:
    """Distorted-coordinate noise ``E**-1/2 B(t E)`` on ``interval / E``."""
    if not E >= 1.0:
        raise NoiseError("distorted coordinates need E >= 1")
    if E == 1.0:
        return path
    return NoisePath(path.seed, path.source_interval, path.level, path.base_cells,
                     path.quanta, path.unit, path.time_slope / E, path.time_shift / E)


def group_quanta(path: NoisePath, factor: int) -> np.ndarray:
    """Oriented quanta summed over consecutive blocks of ``factor`` cells."""
    if factor < 1 or path.n_cells % factor:
        raise NoiseError(f"block size {factor} does not divide {path.n_cells} cells")
    return path.oriented_quanta.reshape(-1, factor).sum(axis=1)


def cell_integrals(path: NoisePath, h: float) -> np.ndarray:
    """Cell averages ``(B((i+1)h) - B(ih)) / h`` of the noise on a mesh ``h``."""
    ratio = h / path.dt
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * ratio or path.n_cells % factor:
        raise NoiseError(f"mesh {h} is incompatible with cell width {path.dt} "
                         f"and {path.n_cells} cells")
    return group_quanta(path, factor) * (path.value_unit / h)


def dump(path: NoisePath, stream) -> None:
    """Write header ``(seed, t0, t1, level, base_cells)`` then float64 increments."""
    if path.time_slope != 1.0 or path.time_shift != 0.0:
        raise NoiseError("dump the source path; reversal and rescaling are re-applied on load")
    t0, t1 = path.source_interval
    stream.write(_HEADER.pack(path.seed, t0, t1, path.level, path.base_cells))
    stream.write(path.increments.astype("<f8").tobytes())


def load(stream) -> NoisePath:
    seed, t0, t1, level, base_cells = _HEADER.unpack(stream.read(_HEADER.size))
    values = np.frombuffer(stream.read(), dtype="<f8")
    if values.size != base_cells * 2**level:
        raise NoiseError("truncated path dump")
    unit = _quantum(t1 - t0)
    quanta = np.rint(values / unit).astype(np.int64)
    if not np.array_equal(quanta * unit, values):
        raise NoiseError("dump is not on the quantum grid")
    quanta.setflags(write=False)
    return NoisePath(seed, (t0, t1), level, base_cells, quanta, unit)
