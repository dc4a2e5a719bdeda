"""Benchmark orchestration: trajectory, single-step and scaling runs with CSV output.

Every CSV starts with one ``#`` comment line naming the format version, the
scene, the random generator and the seed, followed by a fixed header row.
With ``timing=False`` all wall-clock columns are written as ``0`` so that
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import copy
import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .assembly import assemble
from .scene import scene_from_dict, sphere_grid_scene
from .simulation import SOLVERS, MetricsRow, SolverSettings, _match_warm, detect_contacts, make_solver, step, system_energy

__all__ = [
    "CSV_VERSION",
    "METRICS_COLUMNS",
    "SCALING_COLUMNS",
    "TRACE_COLUMNS",
    "TRAJECTORY_COLUMNS",
    "BenchmarkResult",
    "fit_slope",
    "run_benchmark",
    "run_scaling",
    "run_single_step",
    "run_trajectory",
    "write_csv",
]

CSV_VERSION = "alcontact-bench/1"
RNG_NAME = "numpy.random.PCG64"

METRICS_COLUMNS = [
    "step", "case", "solver", "iterations", "wall_time", "residual", "theta_p", "theta_d",
    "beta", "contacts", "energy", "converged", "bodies", "penetration",
]
TRACE_COLUMNS = ["case", "solver", "iteration", "time", "residual", "theta_p", "theta_d", "beta"]
TRAJECTORY_COLUMNS = ["step", "solver", "subsystem", "body", "x", "y", "z", "qx", "qy", "qz", "qw"]
SCALING_COLUMNS = ["solver", "bodies", "contacts", "steps", "mean_time", "mean_residual", "slope"]


@dataclass
class BenchmarkResult:
    """Rows of every table a run produced, keyed by file stem."""

    tables: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    header: str = ""

    def write(self, out_dir, timing: bool = True) -> list:
        """Write ``<stem>.csv`` for every table into ``out_dir``.

        Raises:
            OSError: with the offending path in the message.
        """
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
        paths = []
        for stem, (columns, rows) in self.tables.items():
            path = out / f"{stem}.csv"
            write_csv(path, columns, rows, self.header, timing)
            paths.append(path)
        return paths


_TIME_COLUMNS = {"wall_time", "time", "mean_time", "slope"}


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_csv(columns, rows, header: str = "", timing: bool = True) -> str:
    """CSV text with a version comment line; timing columns zeroed when ``timing`` is off."""
    buf = io.StringIO()
    buf.write(f"# {header}\n" if header else f"# {CSV_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(
            "0" if (not timing and col in _TIME_COLUMNS) else _format(row[col])
            for col in columns
        )
    return buf.getvalue()


def write_csv(path, columns, rows, header: str = "", timing: bool = True):
    path = Path(path)
    try:
        path.write_text(render_csv(columns, rows, header, timing))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _header(scene: dict, mode: str, seed: int, settings: SolverSettings) -> str:
    parts = [
        CSV_VERSION,
        f"mode={mode}",
        f"scene={scene.get('name', '') or 'unnamed'}",
        f"rng={RNG_NAME}",
        f"seed={seed}",
        f"max_iter={settings.max_iter}",
        f"tol={settings.tol}",
        f"budget={settings.budget}",
        f"workers={settings.workers}",
    ]
    return " ".join(parts)


def _metrics_dict(row: MetricsRow) -> dict:
    return asdict(row)


def _poses(world, step_index: int, solver: str) -> list:
    out = []
    for s, sub in enumerate(world.subsystems):
        if sub.is_static:
            continue
        kin = sub.kinematics()
        quats = Rotation.from_matrix(kin.rotations).as_quat()
        for k in range(len(sub.bodies)):
            if sub.static_bodies[k]:
                continue
            x, y, z = kin.positions[k]
            qx, qy, qz, qw = quats[k]
            out.append(dict(step=step_index, solver=solver, subsystem=s, body=k, x=x, y=y, z=z, qx=qx, qy=qy, qz=qz, qw=qw))
    return out


def _check_solvers(solvers):
    for name in solvers:
        if name not in SOLVERS:
            raise ValueError(f"unknown solver {name!r}; choose from {', '.join(SOLVERS)}")


def _with_dt(scene: dict, dt: float | None) -> dict:
    if dt is None:
        return scene
    scene = copy.deepcopy(scene)
    scene["dt"] = float(dt)
    return scene


def run_trajectory(
    scene: dict,
    solvers=("canal",),
    steps: int = 240,
    settings: SolverSettings | None = None,
    seed: int = 0,
    wrench_every_step: bool = False,
) -> BenchmarkResult:
    """Full rollout per solver with per-step metrics and body poses.

    Each solver starts from a freshly built world.  With ``wrench_every_step``
    a seeded random wrench of the scene amplitude is added at every step.
    """
    _check_solvers(solvers)
    settings = settings or SolverSettings()
    metrics, poses = [], []
    for name in solvers:
        world = scene_from_dict(scene)
        rng = np.random.Generator(np.random.PCG64(seed))
        solve = make_solver(name, settings)
        poses.extend(_poses(world, 0, name))
        for _ in range(steps):
            extra = world.random_wrenches(rng) if wrench_every_step else None
            row, _, _ = _step_named(world, solve, name, settings, extra)
            metrics.append(_metrics_dict(row))
            poses.extend(_poses(world, world.steps, name))
    return BenchmarkResult(
        tables={"metrics": (METRICS_COLUMNS, metrics), "trajectory": (TRAJECTORY_COLUMNS, poses)},
        header=_header(scene, "traj", seed, settings),
    )


def _step_named(world, solve, name, settings, extra=None):
    row, report, problem = step(world, solve, settings, extra_wrenches=extra)
    row.solver = name
    return row, report, problem


def run_single_step(
    scene: dict,
    solvers=SOLVERS,
    settings: SolverSettings | None = None,
    seed: int = 0,
    cases: int = 1,
    settle: int = 10,
    settle_solver: str = "canal",
) -> BenchmarkResult:
    """Compare solvers on identical single-step problems.

    The scene is first advanced ``settle`` steps without extra load.  Each
    case then draws one random wrench per dynamic body (uniform in
    ``[-W, W]`` per component from a seeded PCG64 stream), assembles the
    step once and hands the same problem and warm start to every solver.
    Metrics rows use ``step = 0`` and the energy of the settled state;
    traces hold one row per iteration.
    """
    _check_solvers(solvers)
    settings = settings or SolverSettings()
    world = scene_from_dict(scene)
    for _ in range(settle):
        step(world, settle_solver)
    rng = np.random.Generator(np.random.PCG64(seed))
    features = detect_contacts(world)
    energy = system_energy(world)
    metrics, traces = [], []
    for case in range(cases):
        extra = world.random_wrenches(rng)
        problem = assemble(
            world.subsystems,
            features,
            world.dt,
            world.theta,
            world.gravity,
            world.wrenches_at(world.time, extra),
            world.assembly,
            world.limits,
            world.springs,
        )
        warm = _match_warm(world, problem)
        for name in solvers:
            state, report = make_solver(name, settings)(problem, copy.deepcopy(warm), trace=True)
            metrics.append(
                dict(
                    step=0,
                    case=case,
                    solver=name,
                    iterations=report.iterations,
                    wall_time=report.wall_time,
                    residual=report.residual,
                    theta_p=report.theta_p,
                    theta_d=report.theta_d,
                    beta=report.beta,
                    contacts=problem.num_contacts,
                    energy=energy,
                    converged=report.converged,
                    bodies=len(world.dynamic_bodies()),
                    penetration=max([0.0] + [-f.gap for f in features]),
                )
            )
            for h in report.history:
                traces.append(
                    dict(case=case, solver=name, iteration=h.iteration, time=h.time, residual=h.residual,
                         theta_p=h.theta_p, theta_d=h.theta_d, beta=h.beta)
                )
    return BenchmarkResult(
        tables={"metrics": (METRICS_COLUMNS, metrics), "trace": (TRACE_COLUMNS, traces)},
        header=_header(scene, "single-step", seed, settings),
    )


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_scaling(
    counts=(8, 16, 32, 64),
    solvers=SOLVERS,
    settings: SolverSettings | None = None,
    steps: int = 5,
    seed: int = 0,
    radius: float = 0.05,
    dt: float | None = None,
) -> BenchmarkResult:
    """Per-step solver time against the number of free spheres.

    Each count uses a grid of resting, non-touching spheres with a seeded
    random wrench on every step.  Solvers run a fixed number of iterations
    (``settings.max_iter``, default 20) with the stopping tolerance at zero
    so that the time measures the cost per iteration and setup rather than
    convergence luck.  The fitted log-log slope appears on every row of its
    solver.
    """
    _check_solvers(solvers)
    base = settings or SolverSettings()
    fixed = SolverSettings(max_iter=base.max_iter or 20, tol=0.0, budget=None, workers=base.workers)
    rows = []
    for name in solvers:
        solve = make_solver(name, fixed)
        for count in counts:
            scene = _with_dt(sphere_grid_scene(count, radius=radius), dt)
            world = scene_from_dict(scene)
            rng = np.random.Generator(np.random.PCG64(seed))
            times, residuals, contacts = [], [], 0
            for _ in range(steps):
                row, _, _ = _step_named(world, solve, name, fixed, world.random_wrenches(rng))
                times.append(row.wall_time)
                residuals.append(row.residual)
                contacts = row.contacts
            rows.append(
                dict(solver=name, bodies=count, contacts=contacts, steps=steps,
                     mean_time=float(np.mean(times)), mean_residual=float(np.mean(residuals)), slope=float("nan"))
            )
    slopes = {}
    for name in solvers:
        mine = [r for r in rows if r["solver"] == name]
        slopes[name] = fit_slope([r["bodies"] for r in mine], [r["mean_time"] for r in mine])
        for r in mine:
            r["slope"] = slopes[name]
    scene_tag = {"name": f"sphere-grid-{'-'.join(map(str, counts))}"}
    return BenchmarkResult(
        tables={"scaling": (SCALING_COLUMNS, rows)},
        slopes=slopes,
        header=_header(scene_tag, "scaling", seed, fixed),
    )


def run_benchmark(
    scene: dict | None,
    solvers=SOLVERS,
    mode: str = "traj",
    out_dir=None,
    settings: SolverSettings | None = None,
    steps: int = 240,
    seed: int = 0,
    cases: int = 1,
    settle: int = 10,
    counts=(8, 16, 32, 64),
    dt: float | None = None,
    timing: bool = True,
) -> BenchmarkResult:
    """Run one benchmark mode and optionally write its CSV files.

    Args:
        scene: scene dictionary (ignored in scaling mode).
        solvers: solver names.
        mode: ``"traj"``, ``"single-step"`` or ``"scaling"``.
        out_dir: directory for the CSV files, or ``None`` to skip writing.
        settings: shared solver settings.
        steps: trajectory length, or steps averaged per count when scaling.
        seed: seed of the PCG64 wrench stream.
        cases: single-step cases.
        settle: steps before the single-step cases.
        counts: sphere counts of the scaling sweep.
        dt: overrides the scene time step.
        timing: write wall-clock columns; off gives reproducible files.
    """
    if mode == "traj":
        result = run_trajectory(_with_dt(scene, dt), solvers, steps, settings, seed)
    elif mode == "single-step":
        result = run_single_step(_with_dt(scene, dt), solvers, settings, seed, cases, settle)
    elif mode == "scaling":
        result = run_scaling(counts, solvers, settings, steps, seed, dt=dt)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if out_dir is not None:
        result.write(out_dir, timing)
    return result
