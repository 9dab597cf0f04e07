"""Scenario generation, baselines, parameter sweeps and result files.

Seeds are paired: the scenario of a cell depends only on ``(N, M, seed)``,
so the optimizer and both baselines, and every ``omega``, see the same
initial geometry and antennas for a given seed.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .admm import AdmmConfig, IterationRecord
from .admm import run as admm_run
from .exceptions import DegenerateGeometry, GenerationFailure, SingularFim, SwarmIsacError
from .metrics import crb, objective
from .model import ChannelParams, Scenario
from .swarm import simulate

SCHEMES = ("optimized", "uniform", "random")
ENGINES = ("admm", "swarm")
FORMATS = ("csv", "json")
MAX_REJECTIONS = 1000

RESULT_FIELDS = ("scheme", "N", "M", "omega", "seed", "rate_nats", "crb_m2", "objective",
                 "iters_run", "wall_time_s")
SUMMARY_FIELDS = ("scheme", "N", "M", "omega", "n_ok", "n_failed", "rate_nats", "crb_m2",
                  "objective")
FAILURE_FIELDS = ("scheme", "N", "M", "omega", "seed", "error", "message")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs. ``to_dict``/``from_mapping`` round-trip it."""

    n_list: tuple = (3, 4, 7, 10)
    m_list: tuple = (1, 2, 4)
    omega_list: tuple = (0.1, 1.0, 10.0)
    seeds: tuple = tuple(range(10))
    schemes: tuple = SCHEMES
    # scenario recipe
    cube_side: float = 100.0
    offset_range: float = 0.5
    r_max: float = 20.0
    # optimizer
    rho: float = 1.0
    eta: float = 1e-3
    inner_steps: int = 1
    max_iters: int = 100_000
    eps_primal: float = 0.0
    eps_dual: float = 0.0
    engine: str = "admm"
    # output
    out_dir: str = "results"
    fmt: str = "csv"
    record_wall_time: bool = False
    jobs: int = 1

    def __post_init__(self):
        for name, cast in (("n_list", int), ("m_list", int), ("omega_list", float),
                           ("seeds", int), ("schemes", str)):
            values = getattr(self, name)
            if isinstance(values, (str, int, float)):
                values = (values,)
            values = tuple(cast(v) for v in values)
            if not values:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        if any(n < 1 for n in self.n_list) or any(m < 1 for m in self.m_list):
            raise ValueError("N and M must be >= 1")
        if any(not (w >= 0 and math.isfinite(w)) for w in self.omega_list):
            raise ValueError("omega values must be finite and >= 0")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be >= 0")
        bad = set(self.schemes) - set(SCHEMES)
        if bad:
            raise ValueError(f"unknown scheme(s) {sorted(bad)}; choose from {SCHEMES}")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.fmt not in FORMATS:
            raise ValueError(f"fmt must be one of {FORMATS}, got {self.fmt!r}")
        if not self.cube_side > 0 or not self.offset_range >= 0:
            raise ValueError("cube_side must be > 0 and offset_range >= 0")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.admm_config()  # validates the optimizer fields

    def admm_config(self):
        return AdmmConfig(rho=self.rho, eta=self.eta, inner_steps=self.inner_steps,
                          max_iters=self.max_iters, eps_primal=self.eps_primal,
                          eps_dual=self.eps_dual)

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_mapping(cls, mapping):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - names
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**mapping)


@dataclass(frozen=True)
class ResultRow:
    """One cell of a sweep. ``status`` is ``"ok"`` or the error class name."""

    scheme: str
    N: int
    M: int
    omega: float
    seed: int
    rate_nats: float
    crb_m2: float
    objective: float
    iters_run: int
    wall_time_s: float
    status: str = "ok"
    message: str = ""

    @property
    def ok(self):
        return self.status == "ok"

    @property
    def cell_id(self):
        return cell_id(self.scheme, self.N, self.M, self.omega, self.seed)

    def as_tuple(self):
        return tuple(getattr(self, name) for name in RESULT_FIELDS)


def cell_id(scheme, n, m, omega, seed):
    return f"{scheme}_N{n}_M{m}_w{omega!r}_s{seed}"


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.ok]

    @property
    def failures(self):
        return [r for r in self.rows if not r.ok]

    def summary(self):
        return summarize(self.rows)


def _rng(seed, stream):
    return np.random.default_rng([seed, stream])


def generate_scenario(cfg: ExperimentConfig, n_uavs, n_antennas, seed, omega=1.0,
                      params=ChannelParams()):
    """User at the origin, N initial positions uniform in the cube
    ``[-side/2, side/2]^3`` and M antenna offsets uniform in
    ``[-offset_range, offset_range]^3``.

    Positions and offsets come from separate streams seeded by
    ``(seed, 0)`` and ``(seed, 1)``, so the first rows of a draw do not
    depend on ``N``. Draws with a link shorter than ``D_MIN`` or a singular
    initial FIM are redrawn.
    """
    half = 0.5 * cfg.cube_side
    user = np.zeros(3)
    offsets = _rng(seed, 1).uniform(-cfg.offset_range, cfg.offset_range, (n_antennas, 3))
    pos_rng = _rng(seed, 0)
    for _ in range(MAX_REJECTIONS + 1):
        q0 = pos_rng.uniform(-half, half, (n_uavs, 3))
        try:
            scenario = Scenario(user_pos=user, antenna_offsets=offsets, initial_positions=q0,
                                r_max=cfg.r_max, omega=omega, params=params)
            crb(q0, scenario)
        except (DegenerateGeometry, SingularFim):
            continue
        return scenario
    raise GenerationFailure(f"no valid scenario for N={n_uavs}, M={n_antennas}, seed={seed} "
                            f"after {MAX_REJECTIONS} rejected draws")


def uniform_lattice(n_uavs, cube_side):
    """First ``n_uavs`` points, in lexicographic order, of the smallest
    ``k x k x k`` grid with ``k^3 >= n_uavs`` that splits the cube into
    equal cells (points at the cell centers)."""
    k = 1
    while k**3 < n_uavs:
        k += 1
    ticks = -0.5 * cube_side + (np.arange(k) + 0.5) * cube_side / k
    return np.array(list(itertools.product(ticks, repeat=3))[:n_uavs])


def _row(scheme, scenario, seed, report, iters, wall):
    return ResultRow(scheme, scenario.n_uavs, scenario.n_antennas, scenario.omega, seed,
                     report.rate_nats, report.crb_m2, report.objective, iters, wall)


def _failed_row(scheme, n, m, omega, seed, exc):
    nan = float("nan")
    return ResultRow(scheme, n, m, omega, seed, nan, nan, nan, 0, 0.0,
                     status=type(exc).__name__, message=str(exc))


def baseline_positions(scheme, scenario: Scenario, cube_side):
    if scheme == "uniform":
        return uniform_lattice(scenario.n_uavs, cube_side)
    if scheme == "random":
        return scenario.initial_positions
    raise ValueError(f"unknown baseline {scheme!r}")


def run_baseline(scheme, cfg: ExperimentConfig, n_uavs, n_antennas, omega, seed):
    """Metrics of an unoptimized placement; a degenerate placement gives a
    flagged row instead of an exception."""
    try:
        scenario = generate_scenario(cfg, n_uavs, n_antennas, seed, omega)
        positions = baseline_positions(scheme, scenario, cfg.cube_side)
        report = objective(positions, scenario)
    except SwarmIsacError as exc:
        return _failed_row(scheme, n_uavs, n_antennas, omega, seed, exc)
    return _row(scheme, scenario, seed, report, 0, 0.0)


def run_optimized(cfg: ExperimentConfig, n_uavs, n_antennas, omega, seed):
    """Optimize one cell; returns ``(row, trace)``. Final metrics are taken
    at the feasible local positions ``q``."""
    try:
        scenario = generate_scenario(cfg, n_uavs, n_antennas, seed, omega)
        runner = simulate if cfg.engine == "swarm" else admm_run
        start = time.perf_counter()
        final, trace = runner(scenario, cfg.admm_config())
        wall = time.perf_counter() - start if cfg.record_wall_time else 0.0
        report = objective(final.q, scenario)
    except SwarmIsacError as exc:
        return _failed_row("optimized", n_uavs, n_antennas, omega, seed, exc), None
    return _row("optimized", scenario, seed, report, final.iter, wall), trace


def sweep_cells(cfg: ExperimentConfig):
    """``(scheme, N, M, omega, seed)`` for every cell, in output order."""
    return list(itertools.product(cfg.n_list, cfg.m_list, cfg.omega_list, cfg.seeds,
                                  [s for s in SCHEMES if s in cfg.schemes]))


def _run_cell(cfg, cell):
    n, m, omega, seed, scheme = cell
    if scheme == "optimized":
        return run_optimized(cfg, n, m, omega, seed)
    return run_baseline(scheme, cfg, n, m, omega, seed), None


def run_sweep(cfg: ExperimentConfig, progress=None):
    """Run every cell. Failures become flagged rows; rows keep cell order
    whatever ``cfg.jobs`` is."""
    cells = sweep_cells(cfg)
    result = SweepResult(cfg)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outputs = pool.map(_run_cell, itertools.repeat(cfg), cells)
            outputs = list(outputs)
    else:
        outputs = (_run_cell(cfg, cell) for cell in cells)
    for row, trace in outputs:
        result.rows.append(row)
        if trace is not None:
            result.traces[row.cell_id] = trace
        if progress is not None:
            progress(row)
    return result


def summarize(rows):
    """Seed means per ``(scheme, N, M, omega)``, over successful rows."""
    groups = {}
    for row in rows:
        groups.setdefault((row.scheme, row.N, row.M, row.omega), []).append(row)
    out = []
    for (scheme, n, m, omega), group in groups.items():
        ok = [r for r in group if r.ok]
        mean = (lambda attr: float(np.mean([getattr(r, attr) for r in ok]))) if ok else (
            lambda attr: float("nan"))
        out.append(dict(scheme=scheme, N=n, M=m, omega=omega, n_ok=len(ok),
                        n_failed=len(group) - len(ok), rate_nats=mean("rate_nats"),
                        crb_m2=mean("crb_m2"), objective=mean("objective")))
    return out


def pareto_front(points):
    """Indices of the ``(rate, crb)`` pairs not dominated by another pair
    (higher rate and lower CRB are better), sorted by rate."""
    points = [(float(r), float(c)) for r, c in points]
    keep = []
    for i, (r, c) in enumerate(points):
        dominated = any(r2 >= r and c2 <= c and (r2 > r or c2 < c) for r2, c2 in points)
        if not dominated:
            keep.append(i)
    return sorted(keep, key=lambda i: points[i][0])


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, fields, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(fields)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_json(path, payload):
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, allow_nan=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def manifest(cfg: ExperimentConfig, result: SweepResult | None = None):
    out = {"package_version": __version__, "config": cfg.to_dict(), "seeds": list(cfg.seeds)}
    if result is not None:
        out["n_rows"] = len(result.rows)
        out["n_failed"] = len(result.failures)
    return out


def emit(result: SweepResult, out_dir=None, fmt=None):
    """Write results, per-run traces, seed means, failures and the manifest.

    Successful rows go to ``results``; failed cells are listed only in
    ``failures``. Returns the output directory.
    """
    cfg = result.config
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    fmt = fmt or cfg.fmt
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    rows = [r.as_tuple() for r in result.ok_rows]
    failures = [(r.scheme, r.N, r.M, r.omega, r.seed, r.status, r.message)
                for r in result.failures]
    summary = result.summary()
    if fmt == "csv":
        _write_csv(out / "results.csv", RESULT_FIELDS, rows)
        _write_csv(out / "summary.csv", SUMMARY_FIELDS,
                   [tuple(s[k] for k in SUMMARY_FIELDS) for s in summary])
        _write_csv(out / "failures.csv", FAILURE_FIELDS, failures)
        for cid, trace in result.traces.items():
            _write_csv(out / f"trace_{cid}.csv", IterationRecord.FIELDS,
                       [rec.as_tuple() for rec in trace])
    else:
        _write_json(out / "results.json", [dict(zip(RESULT_FIELDS, r)) for r in rows])
        _write_json(out / "summary.json", summary)
        _write_json(out / "failures.json", [dict(zip(FAILURE_FIELDS, f)) for f in failures])
        for cid, trace in result.traces.items():
            _write_json(out / f"trace_{cid}.json", [dataclasses.asdict(rec) for rec in trace])
    _write_json(out / "manifest.json", manifest(cfg, result))
    return out


def read_results_csv(path):
    """Parse a ``results.csv`` back into :class:`ResultRow` objects."""
    casts = dict(scheme=str, N=int, M=int, omega=float, seed=int, rate_nats=float,
                 crb_m2=float, objective=float, iters_run=int, wall_time_s=float)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRow(**{k: casts[k](v) for k, v in rec.items()}) for rec in reader]


def load_config_file(path):
    """Read a flat YAML/JSON mapping of :class:`ExperimentConfig` fields.

    A ``manifest.json`` is accepted too; its ``config`` entry is used.
    """
    import yaml

    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping, got {type(data).__name__}")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return data


def default_out_dir():
    return os.environ.get("SWARM_ISAC_OUT", "results")
