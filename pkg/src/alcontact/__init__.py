"""Augmented-Lagrangian multi-contact solvers with a projected Gauss-Seidel baseline.

The main entry points are :func:`~alcontact.scene.load_scene` to build a
:class:`~alcontact.simulation.World`, :func:`~alcontact.simulation.step` to
advance it, the three solvers :func:`solve_canal`, :func:`solve_subadmm` and
:func:`solve_pgs`, and :func:`~alcontact.bench.run_benchmark` behind the
``sim`` command.
"""

from .assembly import ContactProblem, SolverState, assemble
from .bench import run_benchmark
from .canal import CanalConfig, solve_canal
from .metrics import ResidualReport, contact_residual_metric
from .pgs import PgsConfig, solve_pgs
from .scene import SceneError, builtin_scene, load_scene, scene_from_dict
from .simulation import SolverSettings, World, step
from .subadmm import SubAdmmConfig, solve_subadmm

__version__ = "0.1.0"

__all__ = [
    "CanalConfig",
    "ContactProblem",
    "PgsConfig",
    "ResidualReport",
    "SceneError",
    "SolverSettings",
    "SolverState",
    "SubAdmmConfig",
    "World",
    "assemble",
    "builtin_scene",
    "contact_residual_metric",
    "load_scene",
    "run_benchmark",
    "scene_from_dict",
    "solve_canal",
    "solve_pgs",
    "solve_subadmm",
    "step",
]
