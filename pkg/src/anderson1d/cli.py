"""Batch runs: ``anderson1d {oracle,spectrum,stats,lattice,shape}``.

Every run reads a flat ``key = value`` config (units in the key names),
lets command-line flags override it, executes one task per seed on a
process pool and writes CSV/JSON results plus ``manifest.json`` into the
output directory.  Seed ``s`` always uses the noise key
``derive_seed(master_seed, s)``, and results are reduced in seed order, so
the files do not depend on the worker count.

Exit codes: 0 success (including failed hypothesis tests), 1 if any task
raised, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import dos, m_lambda, nu_lambda
from .lattice_oracle import compare_with_flow
from .noise_field import derive_seed
from .phase_flow import sample_Y_E, sample_Y_infinity
from .spectrum import EigenSolveConfig
from .statistics import (ALPHA, InsufficientSample, TestReport, blocks, equilibrium_decay,
                         histogram_block, mean_shape, minami_counts, minami_estimate, point_sample,
                         poisson_suite, shape_functionals, shape_suite, solve_seed, wegner)

COMMANDS = ("oracle", "spectrum", "stats", "lattice", "shape")
TESTS = ("poisson", "minami", "wegner", "equilibrium", "shape")
# stream index of the limit-shape sampler, kept apart from per-seed keys
LIMIT_STREAM = 2**40


class ConfigError(ValueError):
    """Unreadable or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines the result files of a run."""

    command: str = "spectrum"
    test: str = ""
    L_time_units: float = 400.0
    E_scale: float = 1.0
    center_energy: float | None = None
    h_window: float = 1.0
    seed_start: int = 0
    seed_stop: int = 1
    master_seed: int = 0
    lambda_tol_energy: float | None = None
    match_tol_rad: float = 1e-3
    step_time_units: float | None = None
    grid_points: int = 4096
    write_shapes: bool = True
    mesh_space_units: float = 1e-3
    lambda_max_energy: float = 10.0
    L_values_time_units: tuple = (200.0, 400.0, 800.0)
    lam_energy: float = 1.0
    paths: int = 100000
    chunk_paths: int = 10000
    bins: int = 64
    t_max_time_units: float = 10.0
    t_step_time_units: float = 0.5
    limit_samples: int = 1000
    limit_sampler: str = "E"
    lambdas_energy: tuple = (0.0, 1.0, 5.0, 25.0)
    workers: int = 1
    out_dir: str = "anderson1d-out"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command == "stats" and self.test not in TESTS:
            raise ConfigError(f"stats needs one of {TESTS}, got {self.test!r}")
        if self.seed_stop < self.seed_start:
            raise ConfigError("seed_stop is below seed_start")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.limit_sampler not in ("E", "infinity"):
            raise ConfigError("limit_sampler is 'E' or 'infinity'")

    @property
    def seeds(self) -> range:
        return range(self.seed_start, self.seed_stop)

    def path_seed(self, s: int) -> int:
        return derive_seed(self.master_seed, s)

    def solver(self, L: float | None = None) -> EigenSolveConfig:
        try:
            return EigenSolveConfig(self.L_time_units if L is None else L, self.E_scale,
                                    self.center_energy, self.h_window, self.lambda_tol_energy,
                                    self.match_tol_rad, self.step_time_units, self.grid_points)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def snapshot(self) -> dict:
        """Keys that affect results (not the worker count or output location)."""
        return {k: _format(v) for k, v in dataclasses.asdict(self).items() if k not in ("workers", "out_dir")}

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_text(cls, text: str, base: dict | None = None) -> RunConfig:
        values = dict(base or {})
        values.update(parse_config_text(text))
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> RunConfig:
        kinds = {f.name: f for f in fields(cls)}
        parsed = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _parse(kinds[key], raw) if isinstance(raw, str) else raw
        return cls(**parsed)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(f: dataclasses.Field, raw: str):
    text = raw.strip()
    default = f.default
    try:
        if text.lower() == "none" and "None" in str(f.type):
            return None
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or "float" in str(f.type):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {f.name}") from None


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines (``#`` comments) into a dict of strings."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return dict(parser["run"])


# --- output -------------------------------------------------------------------

def atomic_write(path: Path, data: bytes) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as stream:
            stream.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def csv_bytes(header, rows) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buffer.getvalue().encode("utf-8")


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def json_bytes(value) -> bytes:
    return (json.dumps(_clean(value), indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def report_json(report: TestReport) -> dict:
    out = report.to_json()
    out["margin"] = report.margin
    out["details"] = report.details
    return out


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config: dict
    version: str
    tasks: list
    outputs: dict

    @property
    def failed(self) -> list:
        return [t for t in self.tasks if t["status"] != "ok"]

    def to_json(self) -> dict:
        return {"config": self.config, "tool": "anderson1d", "version": self.version,
                "tasks": self.tasks, "outputs": self.outputs}


def verify_manifest(out_dir) -> list[str]:
    """Output files whose digest no longer matches the manifest (or that are missing)."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text("utf-8"))
    bad = []
    for name, digest in manifest["outputs"].items():
        target = out_dir / name
        if not target.is_file() or sha256(target) != digest:
            bad.append(name)
    return bad


# --- task execution -----------------------------------------------------------

def _guarded(fn, item):
    try:
        return True, fn(item)
    except Exception as exc:  # recorded per task, reported through the exit code
        return False, f"{type(exc).__name__}: {exc}"


def execute(fn, items, workers: int) -> list[tuple[bool, object]]:
    """``fn`` over ``items`` in input order, serially or on a process pool."""
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [_guarded(fn, item) for item in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(partial(_guarded, fn), items, chunksize=chunk))


def _status(label: dict, outcome) -> dict:
    ok, value = outcome
    return {**label, "status": "ok" if ok else "failed", **({} if ok else {"error": value})}


# --- per-seed tasks (top level so they pickle) --------------------------------

def _spectrum_task(config: RunConfig, s: int):
    return solve_seed(config.path_seed(s), config.solver(), shapes=True)


def _lattice_task(config: RunConfig, s: int):
    return compare_with_flow(config.path_seed(s), config.L_time_units, config.lambda_max_energy,
                             config.mesh_space_units)


def _minami_task(config: RunConfig, item):
    s, L = item
    return minami_counts(derive_seed(config.path_seed(s), int(L)), L, config.E_scale,
                         config.center_energy, config.h_window, config.step_time_units)


def _equilibrium_task(config: RunConfig, item):
    start, block, rows = item
    return histogram_block(derive_seed(config.master_seed, start), block, rows, config.lam_energy,
                           config.E_scale, (0.0, math.pi / 2)[start], _times(config), config.bins,
                           config.step_time_units)


def _limit_task(config: RunConfig, i: int):
    seed = derive_seed(derive_seed(config.master_seed, LIMIT_STREAM), i)
    if config.limit_sampler == "infinity":
        return sample_Y_infinity(seed, 64.0)
    center = config.E_scale if config.center_energy is None else config.center_energy
    return sample_Y_E(seed, center, config.E_scale)


def _times(config: RunConfig) -> np.ndarray:
    count = int(round((config.t_max_time_units - 1.0) / config.t_step_time_units))
    return 1.0 + config.t_step_time_units * np.arange(count + 1)


# --- commands -----------------------------------------------------------------

def _eigen_rows(results):
    for s, r in results:
        for i, p in enumerate(r.eigenpairs):
            yield (s, i, p.lam, p.center, p.decay_rate, p.match_defect)


def _solve_all(config: RunConfig):
    outcomes = execute(partial(_spectrum_task, config), config.seeds, config.workers)
    tasks = [_status({"seed": s, "path_seed": config.path_seed(s)}, o) for s, o in zip(config.seeds, outcomes)]
    results = [(s, o[1]) for s, o in zip(config.seeds, outcomes) if o[0]]
    return tasks, results


def run_spectrum(config: RunConfig, files: dict) -> list:
    tasks, results = _solve_all(config)
    files["eigenvalues.csv"] = csv_bytes(("seed", "index", "lambda", "U", "decay_rate", "match_defect"),
                                         _eigen_rows(results))
    if config.write_shapes:
        for s, r in results:
            columns = [r.eigenpairs[0].x] + [p.samples for p in r.eigenpairs] if r.eigenpairs else []
            header = ("x",) + tuple(f"phi_{i}" for i in range(len(r.eigenpairs)))
            files[f"shapes/seed_{s}.csv"] = csv_bytes(header, zip(*columns))
    return tasks


def _write_reports(files: dict, reports) -> None:
    files["report.json"] = json_bytes([report_json(r) for r in reports])


def run_stats(config: RunConfig, files: dict) -> list:
    if config.test in ("poisson", "wegner", "shape"):
        tasks, results = _solve_all(config)
        files["eigenvalues.csv"] = csv_bytes(("seed", "index", "lambda", "U", "decay_rate", "match_defect"),
                                             _eigen_rows(results))
        solver = config.solver()
        seeds = tuple(s for s, _ in results)
        if config.test == "shape":
            outcomes = execute(partial(_limit_task, config), range(config.limit_samples), config.workers)
            tasks += [_status({"limit_sample": i}, o) for i, o in enumerate(outcomes)]
            limits = [o[1].shape for o in outcomes if o[0]]
            shapes = [p.shape for _, r in results for p in r.eigenpairs]
            try:
                reports = shape_suite(shapes, limits)
            except InsufficientSample as exc:
                reports = [TestReport("shape_suite", math.nan, None, len(shapes), seeds, False,
                                      details={"reason": str(exc)})]
            _write_functionals(files, "shape_functionals.csv", shapes, limits)
        else:
            sample = point_sample([r for _, r in results], solver, seeds)
            if config.test == "wegner":
                reports = [wegner(sample)]
            else:
                try:
                    reports = poisson_suite(sample, ALPHA)
                except InsufficientSample as exc:
                    reports = [TestReport("poisson_suite", math.nan, None, len(seeds), seeds, False,
                                          details={"reason": str(exc)})]
        _write_reports(files, reports)
        return tasks

    if config.test == "minami":
        items = [(s, L) for L in config.L_values_time_units for s in config.seeds]
        outcomes = execute(partial(_minami_task, config), items, config.workers)
        tasks = [_status({"seed": s, "L": L}, o) for (s, L), o in zip(items, outcomes)]
        counts = {L: [] for L in config.L_values_time_units}
        for (s, L), (ok, value) in zip(items, outcomes):
            if ok:
                counts[L].append(value)
        files["minami.csv"] = csv_bytes(("L", "seed", "full_count", "box_counts"),
                                        ((L, s, v[0], " ".join(map(str, v[1])))
                                         for (s, L), (ok, v) in zip(items, outcomes) if ok))
        try:
            report = minami_estimate(counts, config.h_window, config.E_scale, ALPHA, tuple(config.seeds))
        except InsufficientSample as exc:
            report = TestReport("minami_trend", math.nan, None, 0, (), False, details={"reason": str(exc)})
        _write_reports(files, [report])
        return tasks

    # equilibrium
    sizes = blocks(config.paths, config.chunk_paths)
    items = [(start, b, rows) for start in (0, 1) for b, rows in enumerate(sizes)]
    outcomes = execute(partial(_equilibrium_task, config), items, config.workers)
    tasks = [_status({"start": a, "block": b}, o) for (a, b, _), o in zip(items, outcomes)]
    if all(ok for ok, _ in outcomes):
        histograms = [sum(v for (a, _, _), (_, v) in zip(items, outcomes) if a == start) for start in (0, 1)]
        report = equilibrium_decay(config.lam_energy, config.E_scale, _times(config), config.paths,
                                   config.bins, config.master_seed, step=config.step_time_units,
                                   histograms=histograms)
        files["equilibrium.csv"] = csv_bytes(("t", "distance_theta0_0", "distance_theta0_half_pi"),
                                             zip(_times(config), *report.details["distances"]))
        _write_reports(files, [report])
    return tasks


def _write_functionals(files: dict, name: str, shapes, limits) -> None:
    groups = [(k, g) for k, g in (("eigenfunction", shapes), ("limit", limits)) if g]
    rows = []
    if groups:
        spacing = max(s.spacing for _, g in groups for s in g)
        reference = mean_shape(groups[-1][1], spacing)
        for kind, group in groups:
            values = shape_functionals(group, spacing, reference)
            rows += zip([kind] * len(group), values["second_moment"], values["participation"],
                        values["lp_to_mean"])
    files[name] = csv_bytes(("kind", "second_moment", "participation", "lp_to_mean"), rows)


def run_lattice(config: RunConfig, files: dict) -> list:
    outcomes = execute(partial(_lattice_task, config), config.seeds, config.workers)
    tasks = [_status({"seed": s, "path_seed": config.path_seed(s)}, o) for s, o in zip(config.seeds, outcomes)]
    rows, passed = [], []
    for s, (ok, c) in zip(config.seeds, outcomes):
        if not ok:
            continue
        passed.append(c.passed)
        for i in range(max(c.flow.size, c.lattice.size)):
            pick = lambda a: a[i] if i < a.size else math.nan  # noqa: E731
            rows.append((s, i, pick(c.flow), pick(c.lattice), pick(c.flow_half), pick(c.lattice_half),
                         c.tolerance))
    files["lattice.csv"] = csv_bytes(("seed", "index", "lambda_flow", "lambda_lattice", "lambda_flow_half",
                                      "lambda_lattice_half", "tolerance"), rows)
    report = TestReport("oracle_equivalence", float(sum(passed)), None, len(passed),
                        tuple(config.path_seed(s) for s in config.seeds), bool(passed) and all(passed))
    _write_reports(files, [report])
    return tasks


def run_shape(config: RunConfig, files: dict) -> list:
    outcomes = execute(partial(_limit_task, config), config.seeds, config.workers)
    tasks = [_status({"seed": s}, o) for s, o in zip(config.seeds, outcomes)]
    shapes = [(s, o[1]) for s, o in zip(config.seeds, outcomes) if o[0]]
    files["limit_shapes.csv"] = csv_bytes(
        ("sample", "center", "second_moment", "participation"),
        ((s, shape.center, shape.shape.recentered().moment(2), shape.shape.participation())
         for s, shape in shapes))
    return tasks


def oracle_rows(lambdas, E: float = 1.0):
    return [(lam, m_lambda(lam, E), nu_lambda(lam, E), dos(lam, E=E)) for lam in lambdas]


def run_oracle(config: RunConfig, files: dict) -> list:
    files["oracle.csv"] = csv_bytes(("lambda", "m", "nu", "n"), oracle_rows(config.lambdas_energy, config.E_scale))
    return []


RUNNERS = {"oracle": run_oracle, "spectrum": run_spectrum, "stats": run_stats,
           "lattice": run_lattice, "shape": run_shape}


def run(config: RunConfig) -> RunManifest:
    """Execute ``config`` and write its files and manifest into ``config.out_dir``."""
    out = Path(config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc}") from exc
    files = {"config.txt": "".join(f"{k} = {v}\n" for k, v in config.snapshot().items()).encode("utf-8")}
    tasks = RUNNERS[config.command](config, files)
    for name, data in sorted(files.items()):
        atomic_write(out / name, data)
    manifest = RunManifest(config.snapshot(), __version__, tasks,
                           {name: hashlib.sha256(data).hexdigest() for name, data in sorted(files.items())})
    atomic_write(out / "manifest.json", json_bytes(manifest.to_json()))
    return manifest


# --- command line -------------------------------------------------------------

FLAGS = {
    "--L": ("L_time_units", float, "segment length"),
    "--E": ("E_scale", float, "coordinate scale"),
    "--center": ("center_energy", float, "window center energy"),
    "--half-width-h": ("h_window", float, "window half-width in mean spacings"),
    "--tol": ("lambda_tol_energy", float, "eigenvalue bisection tolerance"),
    "--match-tol": ("match_tol_rad", float, "phase mismatch allowed at the gluing point"),
    "--step": ("step_time_units", float, "flow step"),
    "--grid": ("grid_points", int, "eigenfunction grid cells"),
    "--mesh": ("mesh_space_units", float, "lattice spacing"),
    "--lambda-max": ("lambda_max_energy", float, "upper eigenvalue for the lattice comparison"),
    "--L-values": ("L_values_time_units", str, "comma-separated lengths for minami"),
    "--lam": ("lam_energy", float, "energy of the equilibrium run"),
    "--paths": ("paths", int, "runs per start in the equilibrium run"),
    "--chunk-paths": ("chunk_paths", int, "runs per equilibrium block"),
    "--bins": ("bins", int, "phase histogram bins"),
    "--t-max": ("t_max_time_units", float, "last equilibrium time"),
    "--limit-samples": ("limit_samples", int, "limit shapes for the shape test"),
    "--sampler": ("limit_sampler", str, "limit sampler: E or infinity"),
    "--lambdas": ("lambdas_energy", str, "comma-separated energies for the oracle table"),
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    parser.add_argument("--config", default=s, help="flat key = value config file")
    parser.add_argument("--out", default=s, help="output directory")
    parser.add_argument("--workers", type=int, default=s, help="worker processes")
    parser.add_argument("--master-seed", type=int, default=s, help="master seed of the noise keys")
    parser.add_argument("--seed", type=int, default=s, help="run the single seed index SEED")
    parser.add_argument("--seeds", default=s, metavar="START:STOP", help="seed index range")
    parser.add_argument("--no-shapes", action="store_true", default=s, help="skip eigenfunction files")
    for flag, (dest, kind, text) in FLAGS.items():
        parser.add_argument(flag, dest=dest, type=kind, default=s, help=text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anderson1d", description="Spectra of the 1-D white-noise Schrodinger operator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    oracle = sub.add_parser("oracle", help="closed-form table, or the lattice comparison")
    oracle.add_argument("mode", nargs="?", choices=("table", "lattice"), default="table")
    sub.add_parser("spectrum", help="eigenvalues and eigenfunctions per seed")
    stats = sub.add_parser("stats", help="statistical tests")
    stats.add_argument("test", choices=TESTS)
    sub.add_parser("lattice", help="phase flow against the finite-difference lattice")
    sub.add_parser("shape", help="limit-shape samples")
    for p in sub.choices.values():
        _add_common(p)
    return parser


COMMAND_DEFAULTS = {
    "lattice": {"L_time_units": 10.0, "seed_stop": 20},
    "shape": {"seed_stop": 100},
    "stats": {"seed_stop": 300},
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    command = args.command
    if command == "oracle" and args.mode == "lattice":
        command = "lattice"
    values: dict = {"command": command, **COMMAND_DEFAULTS.get(command, {})}
    if command == "stats":
        values["test"] = args.test
    if hasattr(args, "config"):
        try:
            text = Path(args.config).read_text("utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        file_values = parse_config_text(text)
        file_values.pop("command", None)
        file_values.pop("test", None)
        values.update(file_values)
    given = vars(args)
    for dest, _, _ in FLAGS.values():
        if dest in given:
            values[dest] = given[dest]
    for flag, dest in (("out", "out_dir"), ("workers", "workers"), ("master_seed", "master_seed")):
        if flag in given:
            values[dest] = given[flag]
    if "no_shapes" in given:
        values["write_shapes"] = False
    if "seed" in given:
        values["seed_start"], values["seed_stop"] = given["seed"], given["seed"] + 1
    if "seeds" in given:
        try:
            start, stop = (int(v) for v in given["seeds"].split(":"))
        except ValueError:
            raise ConfigError(f"--seeds expects START:STOP, got {given['seeds']!r}") from None
        values["seed_start"], values["seed_stop"] = start, stop
    return RunConfig.from_mapping(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        manifest = run(config)
    except ConfigError as exc:
        print(f"anderson1d: config error: {exc}", file=sys.stderr)
        return 2
    if config.command == "oracle":
        sys.stdout.write((Path(config.out_dir) / "oracle.csv").read_text("utf-8"))
    report = Path(config.out_dir) / "report.json"
    if report.exists() and config.command in ("stats", "lattice"):
        for entry in json.loads(report.read_text("utf-8")):
            print(f"{'PASS' if entry['pass'] else 'FAIL'} {entry['name']}")
    for task in manifest.failed:
        print(f"task failed: {task}", file=sys.stderr)
    return 1 if manifest.failed else 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception:
        traceback.print_exc()
        sys.exit(1)
