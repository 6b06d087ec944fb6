"""Statistical checks on simulated spectra, phases and eigenfunction shapes.

Every verdict is a :class:`TestReport` computed deterministically from a
list of seeds and a configuration.  Sums over realizations use
``math.fsum`` so the reports do not depend on reduction order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats as sps

from . import _kernels as K
from .closed_form import invariant_table, m_lambda, nu_lambda
from .measures import GridMeasure
from .noise_field import NoisePath, derive_seed, generate
from .phase_flow import FlowParams, PhaseState, evolve, rotation_times
from .spectrum import EigenSolveConfig, count_below, eigenfunction, eigenvalues_in, segment_path

ALPHA = 0.01


class InsufficientSample(ValueError):
    """Too few realizations, events or shapes for the requested test."""


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a pytest class

    name: str
    statistic: float
    p_value: float | None
    n: int
    seeds: tuple[int, ...] = ()
    passed: bool = False
    margin: float | None = None
    details: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "p_value": self.p_value,
                "n": self.n, "seeds": list(self.seeds), "pass": self.passed}

    def line(self) -> str:
        p = "" if self.p_value is None else f" p={self.p_value:.4g}"
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: statistic={self.statistic:.6g}{p} n={self.n}"


@dataclass(frozen=True, eq=False)
class PointSample:
    """Per-realization arrays of ``(rescaled energy, rescaled center)`` rows."""

    realizations: tuple[np.ndarray, ...]
    h: float
    seeds: tuple[int, ...] = ()
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = tuple(np.asarray(r, dtype=float).reshape(-1, 2) for r in self.realizations)
        for r in rows:
            if r.size and (np.abs(r[:, 0]).max() > self.h * (1 + 1e-9) or np.abs(r[:, 1]).max() > 0.5):
                raise ValueError("points outside [-h, h] x [-1/2, 1/2]")
        object.__setattr__(self, "realizations", rows)

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.shape[0] for r in self.realizations])

    def energies(self) -> np.ndarray:
        return np.concatenate([r[:, 0] for r in self.realizations]) if self.realizations else np.empty(0)

    def centers(self) -> np.ndarray:
        return np.concatenate([r[:, 1] for r in self.realizations]) if self.realizations else np.empty(0)


def ks_test(values, cdf) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic and exact two-sided p-value."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n == 0:
        raise InsufficientSample("empty sample")
    u = cdf(x)
    ranks = np.arange(1, n + 1)
    d = max(float(np.max(ranks / n - u)), float(np.max(u - (ranks - 1) / n)))
    return d, float(sps.kstwo.sf(d, n))


# --- Poisson statistics -----------------------------------------------------

def spacing_uniforms(sample: PointSample) -> np.ndarray:
    """Interior gaps mapped to uniforms, correcting for the window edge.

    For a unit Poisson process on ``[-h, h]``, the gap after a point at
    ``x`` that has a successor inside the window is Exp(1) truncated at
    ``h - x``; ``(1 - e^-g) / (1 - e^-(h - x))`` is then uniform.
    """
    out = []
    for rows in sample.realizations:
        e = np.sort(rows[:, 0])
        if e.size < 2:
            continue
        gaps = np.diff(e)
        room = sample.h - e[:-1]
        out.append(-np.expm1(-gaps) / -np.expm1(-room))
    return np.concatenate(out) if out else np.empty(0)


def poisson_suite(sample: PointSample, alpha: float = ALPHA, min_realizations: int = 200) -> list[TestReport]:
    """Spacing, dispersion, center-uniformity and independence tests (Bonferroni over four)."""
    R = len(sample.realizations)
    if R < min_realizations:
        raise InsufficientSample(f"{R} realizations, need {min_realizations}")
    level = alpha / 4.0
    seeds = tuple(sample.seeds)
    reports = []

    u = spacing_uniforms(sample)
    d, p = ks_test(u, lambda x: np.clip(x, 0.0, 1.0))
    reports.append(TestReport("spacing_ks_exp1", d, p, int(u.size), seeds, p > level))

    counts = sample.counts.astype(float)
    mean = math.fsum(counts) / R
    index = math.fsum((counts - mean) ** 2) / mean if mean > 0 else float("nan")
    lower = sps.chi2.cdf(index, R - 1)
    p = float(2.0 * min(lower, 1.0 - lower))
    reports.append(TestReport("count_dispersion", index / (R - 1), p, R, seeds, p > level,
                              details={"mean_count": mean, "expected_mean": 2.0 * sample.h}))

    centers = sample.centers()
    d, p = ks_test(centers, lambda x: np.clip(x + 0.5, 0.0, 1.0))
    reports.append(TestReport("center_uniform", d, p, int(centers.size), seeds, p > level))

    energies = sample.energies()
    if energies.size >= 3:
        rho, p = sps.spearmanr(energies, centers)
        rho, p = float(rho), float(p)
    else:
        rho, p = float("nan"), float("nan")
    reports.append(TestReport("energy_center_rank_corr", rho, p, int(energies.size), seeds, p > level))
    return reports


def wegner(sample: PointSample, relative_margin: float = 0.1) -> TestReport:
    """Mean count in the window against ``2h`` with a relative margin."""
    counts = sample.counts.astype(float)
    R = counts.size
    if R < 2:
        raise InsufficientSample("need at least two realizations")
    mean = math.fsum(counts) / R
    se = math.sqrt(math.fsum((counts - mean) ** 2) / (R - 1) / R)
    target = 2.0 * sample.h
    margin = relative_margin * target - abs(mean - target)
    return TestReport("wegner_mean_count", mean, None, R, tuple(sample.seeds), margin >= 0, margin,
                      details={"standard_error": se, "target": target})


# --- per-seed spectral survey -----------------------------------------------

@dataclass(frozen=True, eq=False)
class SeedSpectrum:
    seed: int
    eigenvalues: np.ndarray
    points: np.ndarray
    eigenpairs: tuple = ()


def solve_seed(path_seed: int, config: EigenSolveConfig, shapes: bool = False) -> SeedSpectrum:
    """Eigenvalues in the window, their rescaled points and optionally eigenpairs."""
    path = segment_path(path_seed, config)
    values = eigenvalues_in(path, config)
    pairs = tuple(eigenfunction(path, config, lam) for lam in values)
    n = config.density
    if pairs:
        points = np.array([(config.L * n * (p.lam - config.center), p.center / config.L) for p in pairs])
    else:
        points = np.empty((0, 2))
    return SeedSpectrum(path_seed, values, points, pairs if shapes else ())


def point_sample(results, config: EigenSolveConfig, seeds=()) -> PointSample:
    return PointSample(tuple(r.points for r in results), config.h, tuple(seeds),
                       {"L": config.L, "E": config.E, "center": config.center, "h": config.h})


# --- Lyapunov exponent ----------------------------------------------------------

def lyapunov_triangle(lam: float = 1.0, E: float = 1.0, seed: int = 0, paths: int = 200,
                      t_end: float = 200.0, rotations: int = 20000,
                      step: float | None = None) -> TestReport:
    """Three estimates of the growth rate of ``rho``, pairwise within 3 combined errors.

    Quadrature has no sampling error.  The renewal estimate is the ratio of
    mean ``rho`` gain to mean duration over ``rotations`` consecutive
    rotations of one path (delta-method error).  The slope estimate is
    ``rho(t_end) / t_end`` averaged over ``paths`` independent runs from 0.
    """
    params = FlowParams(lam, E, "forward", step)
    quadrature = nu_lambda(lam, E)

    horizon = 2.0 * rotations * m_lambda(lam, E)
    cells = math.ceil(horizon / params.step)
    path = generate(derive_seed(seed, 0), (0.0, cells * params.step), 0, base_cells=cells)
    times, rho = rotation_times(path, params, 0.0, rotations)
    if times.size < rotations:
        raise InsufficientSample(f"only {times.size} rotations within the horizon")
    durations = np.diff(times, prepend=0.0)
    gains = np.diff(rho, prepend=0.0)
    ratio = math.fsum(gains) / math.fsum(durations)
    renewal_se = float(np.std(gains - ratio * durations, ddof=1) / math.sqrt(rotations) / durations.mean())

    steps = math.ceil(t_end / params.step)
    slopes = np.empty(paths)
    for i in range(paths):
        run_path = generate(derive_seed(seed, i + 1), (0.0, steps * params.step), 0, base_cells=steps)
        run = evolve(run_path, params, PhaseState(0.0), steps * params.step, stride=steps)
        slopes[i] = run.rho[-1] / run.t[-1]
    slope = math.fsum(slopes) / paths
    slope_se = float(np.std(slopes, ddof=1) / math.sqrt(paths))

    estimates = {"quadrature": (quadrature, 0.0), "renewal": (ratio, renewal_se), "slope": (slope, slope_se)}
    names = list(estimates)
    margins = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            (x, sx), (y, sy) = estimates[a], estimates[b]
            margins.append(3.0 * math.hypot(sx, sy) - abs(x - y))
    margin = min(margins)
    return TestReport("lyapunov_triangle", ratio, None, rotations + paths, (seed,), margin >= 0, margin,
                      details={k: {"value": v, "se": e} for k, (v, e) in estimates.items()})


# --- Minami ---------------------------------------------------------------------

def box_count(L: float, E: float = 1.0) -> int:
    return max(1, int(math.floor((L / E) ** 0.25)))


def minami_counts(path_seed: int, L: float, E: float = 1.0, center: float | None = None,
                  h: float = 2.0, step: float | None = None) -> tuple[int, list[int]]:
    """Counts in the window for the full segment and each of its ``k`` Dirichlet boxes.

    The window is the one of the full segment; the boxes are consecutive
    pieces of the same path.
    """
    center = E if center is None else center
    k = box_count(L, E)
    full = EigenSolveConfig(L, E, center, h, step=step, grid=1)
    lo, hi = window = full.bounds
    path = segment_path(path_seed, full, base_cells=k)
    whole = count_below(path, full, np.array([lo, hi]))
    width = path.n_cells // k
    box_cfg = EigenSolveConfig(L / k, E, center, h, step=step, grid=1, window=window)
    quanta = path.oriented_quanta
    boxes = []
    for b in range(k):
        piece = quanta[b * width:(b + 1) * width].copy()
        piece.setflags(write=False)
        box = NoisePath(path.seed, (-0.5 * L / k, 0.5 * L / k), 0, width, piece, path.unit)
        c = count_below(box, box_cfg, np.array([lo, hi]))
        boxes.append(int(c[1] - c[0]))
    return int(whole[1] - whole[0]), boxes


def minami_estimate(counts_by_L: dict, h: float = 2.0, E: float = 1.0, alpha: float = ALPHA,
                    seeds=(), min_events: int = 30) -> TestReport:
    """``k P(N_box >= 2)`` across ``L`` from per-seed ``minami_counts`` results.

    Passes if consecutive estimates decrease by more than the one-sided
    ``1 - alpha`` normal quantile of their combined standard error, and
    ``E[N^2]`` of the full segment stays below twice its Poisson value
    ``2h + 4h^2`` for every ``L``.
    """
    z = sps.norm.ppf(1.0 - alpha)
    rows = []
    for L in sorted(counts_by_L):
        results = counts_by_L[L]
        k = box_count(L, E)
        events = [c >= 2 for _, boxes in results for c in boxes]
        total = len(events)
        if total == 0:
            raise InsufficientSample(f"no boxes at L={L}")
        p = math.fsum(events) / total
        rows.append({"L": L, "k": k, "boxes": total, "events": int(math.fsum(events)),
                     "estimate": k * p, "se": k * math.sqrt(p * (1 - p) / total),
                     "second_moment": math.fsum(n * n for n, _ in results) / len(results)})
    n = sum(r["boxes"] for r in rows)
    cap = 2.0 * (2.0 * h + 4.0 * h * h)
    if any(r["events"] < min_events for r in rows):
        return TestReport("minami_trend", float("nan"), None, n, tuple(seeds), False,
                          details={"rows": rows, "reason": "too few events"})
    gaps = [(a["estimate"] - b["estimate"]) - z * math.hypot(a["se"], b["se"]) for a, b in zip(rows, rows[1:])]
    bounded = all(r["second_moment"] <= cap for r in rows)
    margin = min(gaps) if gaps else float("nan")
    return TestReport("minami_trend", rows[-1]["estimate"], None, n, tuple(seeds),
                      bool(gaps) and margin > 0 and bounded, margin,
                      details={"rows": rows, "second_moment_cap": cap})


def minami_run(seeds_by_L: dict, E: float = 1.0, center: float | None = None, h: float = 2.0,
               alpha: float = ALPHA, step: float | None = None) -> TestReport:
    counts = {L: [minami_counts(s, L, E, center, h, step) for s in seeds] for L, seeds in seeds_by_L.items()}
    seeds = tuple(s for L in sorted(seeds_by_L) for s in seeds_by_L[L])
    return minami_estimate(counts, h, E, alpha, seeds)


# --- convergence to equilibrium --------------------------------------------

def bin_probabilities(lam: float, E: float, bins: int) -> np.ndarray:
    """Mass of the invariant phase density in each of ``bins`` equal bins of [0, pi)."""
    table = invariant_table(float(lam), float(E))
    cells = table.theta.size - 1
    if cells % bins:
        raise ValueError(f"{bins} bins do not divide the {cells}-cell table")
    steps = 0.5 * (table.density[1:] + table.density[:-1]) * np.diff(table.theta)
    mass = steps.reshape(bins, -1).sum(axis=1)
    return mass / mass.sum()


def histogram_block(seed: int, block: int, rows: int, lam: float, E: float, theta0: float,
                    times, bins: int = 64, step: float | None = None) -> np.ndarray:
    """Histogram counts of ``theta(t) mod pi`` (one row per time) for one block of runs.

    Block ``b`` draws its noise from ``derive_seed(seed, b)``, so blocks can
    be computed in any order or in parallel and summed exactly.
    """
    params = FlowParams(lam, E, "forward", step)
    times = np.asarray(times, dtype=float)
    marks = np.rint(times / params.step).astype(np.int64)
    if np.any(np.abs(marks * params.step - times) > 1e-9) or np.any(np.diff(marks) <= 0) or marks[0] < 1:
        raise ValueError("times must be increasing positive multiples of the step")
    steps = int(marks[-1])
    path = generate(derive_seed(seed, block), (0.0, rows * steps * params.step), 0, base_cells=rows * steps)
    increments = np.ascontiguousarray(path.increments.reshape(rows, steps))
    if max(params.alpha, abs(params.beta)) * params.step <= 1.0:
        phases = K.vector_snapshots(theta0, increments, params.step, params.alpha, params.beta, marks)
    else:
        phases = K.phase_snapshots(theta0, increments, params.step, params.alpha, params.beta, marks)
    index = np.minimum((np.mod(phases, np.pi) / np.pi * bins).astype(np.int64), bins - 1)
    return np.stack([np.bincount(index[:, j], minlength=bins) for j in range(marks.size)])


def blocks(paths: int, chunk: int) -> list[int]:
    """Row counts of the blocks covering ``paths`` runs."""
    return [min(chunk, paths - start) for start in range(0, paths, chunk)]


def phase_histograms(seed: int, lam: float, E: float, theta0: float, times, paths: int,
                     bins: int = 64, chunk: int = 10000, step: float | None = None) -> np.ndarray:
    """Histogram counts (one row per time) of ``theta(t) mod pi`` over ``paths`` runs."""
    return sum(histogram_block(seed, b, rows, lam, E, theta0, times, bins, step)
               for b, rows in enumerate(blocks(paths, chunk)))


def noise_floor(paths: int, bins: int) -> float:
    """``sqrt(bin mean / N) / bin width`` for a histogram density with mean bin mass ``1/bins``."""
    return math.sqrt(1.0 / bins / paths) / (math.pi / bins)


def equilibrium_decay(lam: float = 1.0, E: float = 1.0, times=None, paths: int = 100000,
                      bins: int = 64, seed: int = 0, theta0s=(0.0, math.pi / 2),
                      alpha: float = ALPHA, floor_multiple: float = 3.0,
                      step: float | None = None, histograms=None) -> TestReport:
    """Sup distance of phase histograms to the invariant density over time.

    For each start in ``theta0s`` (independent noise), ``log d(t)`` is
    fitted linearly on the times where ``d`` exceeds ``floor_multiple``
    noise floors.  Passes if every fitted rate is positive beyond its
    ``1 - alpha`` one-sided bound, and the final histograms of the two
    starts pass a chi-square homogeneity test at ``alpha``.
    """
    times = np.arange(1.0, 10.5, 0.5) if times is None else np.asarray(times, dtype=float)
    width = math.pi / bins
    target = bin_probabilities(lam, E, bins) / width
    floor = noise_floor(paths, bins)
    z = sps.norm.ppf(1.0 - alpha)
    curves, densities, finals, fits = [], [], [], []
    for i, theta0 in enumerate(theta0s):
        if histograms is None:
            counts = phase_histograms(derive_seed(seed, i), lam, E, theta0, times, paths, bins, step=step)
        else:
            counts = histograms[i]
        finals.append(np.asarray(counts)[-1])
        density = counts / (paths * width)
        distance = np.abs(density - target).max(axis=1)
        curves.append(distance)
        densities.append(density)
        keep = distance > floor_multiple * floor
        if keep.sum() >= 3:
            fit = sps.linregress(times[keep], np.log(distance[keep]))
            fits.append((-fit.slope, fit.stderr, int(keep.sum())))
        else:
            fits.append((float("nan"), float("nan"), int(keep.sum())))
    decaying = all(n >= 3 and rate - z * se > 0 for rate, se, n in fits)
    merge = float(np.abs(densities[0][-1] - densities[-1][-1]).max())
    table = np.array(finals)
    table = table[:, table.sum(axis=0) > 0]
    merge_p = float(sps.chi2_contingency(table, correction=False).pvalue)
    merged = merge_p > alpha
    rate = float(np.mean([f[0] for f in fits]))
    return TestReport("equilibrium_decay", rate, None, paths * len(theta0s), (seed,), decaying and merged,
                      details={"times": times.tolist(), "distances": [c.tolist() for c in curves],
                               "fits": fits, "noise_floor": floor, "merge_distance": merge,
                               "merge_p_value": merge_p})


# --- Levy-Prokhorov distance -------------------------------------------------

@njit(cache=True)
def _matched_mass(xs, p, ys, q, eps):
    """Largest mass of a coupling of ``p`` and ``q`` moving points by at most ``eps``."""
    remaining = q.copy()
    j = 0
    total = 0.0
    slack = 1e-12 * (1.0 + abs(eps))
    for i in range(xs.size):
        mass = p[i]
        if mass <= 0.0:
            continue
        while j < ys.size and ys[j] < xs[i] - eps - slack:
            j += 1
        k = j
        while mass > 0.0 and k < ys.size and ys[k] <= xs[i] + eps + slack:
            take = min(mass, remaining[k])
            remaining[k] -= take
            mass -= take
            total += take
            k += 1
        while j < ys.size and remaining[j] <= 0.0:
            j += 1
    return total


def _candidates(w: GridMeasure, v: GridMeasure) -> np.ndarray:
    offset = (w.origin - v.origin) / w.spacing
    span = w.weights.size + v.weights.size + 2
    k = np.arange(-span, span + 1)
    d = np.unique(np.abs(offset + k) * w.spacing)
    return d[d < 1.0]


def lp_distance(w: GridMeasure, v: GridMeasure) -> float:
    """Levy-Prokhorov distance of two measures on grids of equal spacing.

    Uses Strassen's characterization ``inf{eps : 1 - M(eps) <= eps}``
    where ``M(eps)`` is the largest mass matched within distance ``eps``;
    on the line a greedy left-to-right matching attains ``M``.
    """
    if not math.isclose(w.spacing, v.spacing, rel_tol=1e-9):
        raise ValueError("grid spacings differ; regrid one measure first")
    xs, p = w.points, np.asarray(w.weights)
    ys, q = v.points, np.asarray(v.weights)
    cand = _candidates(w, v)

    def excess(i):
        return 1.0 - _matched_mass(xs, p, ys, q, cand[i])

    if cand.size == 0:
        return 1.0
    # max(d_k, 1 - M(d_k)): first term increases, second decreases in k
    lo, hi = 0, cand.size - 1
    if cand[hi] < excess(hi):
        return float(min(1.0, excess(hi)))
    while lo < hi:
        mid = (lo + hi) // 2
        if cand[mid] >= excess(mid):
            hi = mid
        else:
            lo = mid + 1
    best = cand[lo]
    if lo > 0:
        best = min(best, excess(lo - 1))
    return float(max(0.0, min(best, 1.0)))


def regrid(w: GridMeasure, origin: float, spacing: float, size: int) -> GridMeasure:
    """Share each atom between its two neighbours on a new grid (mass and mean preserved)."""
    position = (w.points - origin) / spacing
    left = np.floor(position).astype(np.int64)
    frac = position - left
    weights = np.zeros(size)
    for index, mass in ((left, w.weights * (1 - frac)), (left + 1, w.weights * frac)):
        inside = (index >= 0) & (index < size)
        if not np.all(inside | (mass == 0)):
            raise ValueError("target grid does not cover the measure")
        np.add.at(weights, index[inside], mass[inside])
    return GridMeasure(origin, spacing, weights)


# --- shapes -------------------------------------------------------------------

def _common_grid(shapes, spacing: float) -> tuple[float, int]:
    lo = min(s.points[0] for s in shapes)
    hi = max(s.points[-1] for s in shapes)
    origin = math.floor(lo / spacing) * spacing
    return origin, int(math.ceil((hi - origin) / spacing)) + 2


def shape_functionals(shapes, spacing: float | None = None, reference: GridMeasure | None = None) -> dict:
    """Second moment, inverse participation and LP distance to a reference shape.

    The reference defaults to the mean of ``shapes``; pass one explicitly so
    that two batches are measured against the same target.
    """
    shapes = [s.recentered() for s in shapes]
    spacing = max(s.spacing for s in shapes) if spacing is None else spacing
    origin, size = _common_grid(shapes, spacing)
    common = [regrid(s, origin, spacing, size) for s in shapes]
    if reference is None:
        reference = GridMeasure(origin, spacing, np.mean([c.weights for c in common], axis=0))
    return {"second_moment": np.array([s.moment(2) for s in shapes]),
            "participation": np.array([c.participation() for c in common]),
            "lp_to_mean": np.array([lp_distance(c, reference) for c in common])}


def mean_shape(shapes, spacing: float) -> GridMeasure:
    shapes = [s.recentered() for s in shapes]
    origin, size = _common_grid(shapes, spacing)
    return GridMeasure(origin, spacing, np.mean([regrid(s, origin, spacing, size).weights for s in shapes], axis=0))


def shape_suite(shapes, limit_shapes, alpha: float = ALPHA, min_shapes: int = 100,
                min_limit: int = 1000, spacing: float | None = None) -> list[TestReport]:
    """Two-sample KS comparisons of shape functionals (Bonferroni over three)."""
    if len(shapes) < min_shapes or len(limit_shapes) < min_limit:
        raise InsufficientSample(f"{len(shapes)} shapes and {len(limit_shapes)} limit shapes")
    spacing = spacing or max(max(s.spacing for s in shapes), max(s.spacing for s in limit_shapes))
    reference = mean_shape(limit_shapes, spacing)
    a = shape_functionals(shapes, spacing, reference)
    b = shape_functionals(limit_shapes, spacing, reference)
    reports = []
    for name in ("second_moment", "participation", "lp_to_mean"):
        result = sps.ks_2samp(a[name], b[name])
        reports.append(TestReport(f"shape_{name}", float(result.statistic), float(result.pvalue),
                                  len(shapes) + len(limit_shapes), (), result.pvalue > alpha / 3,
                                  details={"median_sample": float(np.median(a[name])),
                                           "median_limit": float(np.median(b[name]))}))
    return reports
