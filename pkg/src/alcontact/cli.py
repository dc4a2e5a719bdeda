"""``sim`` command line entry point.

Exit codes: 0 success, 1 usage or I/O error, 2 scene validation error,
3 solver abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import run_benchmark
from .scene import SceneError, builtin_scene, builtin_scenes, scene_from_dict
from .simulation import SOLVERS, SolverAbort, SolverSettings

__all__ = ["EXIT_ABORT", "EXIT_IO", "EXIT_OK", "EXIT_SCENE", "build_parser", "main"]

EXIT_OK, EXIT_IO, EXIT_SCENE, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("alcontact")


def _solvers(text: str) -> list:
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in SOLVERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"solvers must be a comma list of {', '.join(SOLVERS)}")
    return names


def _counts(text: str) -> list:
    try:
        values = [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("counts must be comma-separated integers") from None
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("counts must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="Multi-contact simulation and solver benchmarks.")
    p.add_argument("--scene", help="scene JSON file or the name of a shipped scene (see --list-scenes)")
    p.add_argument("--list-scenes", action="store_true", help="print the shipped scene names and exit")
    p.add_argument("--solver", type=_solvers, default=["canal"], help="canal, subadmm, pgs or a comma list")
    p.add_argument("--mode", choices=["traj", "single-step", "scaling"], default="traj")
    p.add_argument("--steps", type=int, default=240, help="trajectory steps, or steps per count when scaling")
    p.add_argument("--dt", type=float, help="override the scene time step [s]")
    p.add_argument("--max-iter", type=int, help="AL iterations, ADMM iterations or PGS sweeps")
    p.add_argument("--tol", type=float, help="solver stopping tolerance")
    p.add_argument("--budget", type=float, help="solver time cap per solve [s]")
    p.add_argument("--seed", type=int, default=0, help="seed of the random wrench generator")
    p.add_argument("--cases", type=int, default=1, help="single-step cases")
    p.add_argument("--settle", type=int, default=10, help="steps before the single-step cases")
    p.add_argument("--counts", type=_counts, default=[8, 16, 32, 64], help="sphere counts for scaling mode")
    p.add_argument("--workers", type=int, default=1, help="threads for the SubADMM subsystem phase")
    p.add_argument("--no-timing", action="store_true", help="write wall-clock columns as 0 (reproducible files)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(ref: str) -> dict:
    path = Path(ref)
    if path.exists():
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SceneError(f"{path}: not valid JSON ({exc})") from None
    if ref in builtin_scenes():
        return builtin_scene(ref)
    raise FileNotFoundError(f"scene {ref!r} is neither a file nor a shipped scene")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.list_scenes:
        print("\n".join(builtin_scenes()))
        return EXIT_OK
    for flag in ("steps", "cases", "workers"):
        if getattr(args, flag) < 1:
            print(f"sim: --{flag} must be at least 1", file=sys.stderr)
            return EXIT_IO
    if args.settle < 0:
        print("sim: --settle must be non-negative", file=sys.stderr)
        return EXIT_IO

    scene = None
    if args.mode != "scaling":
        if not args.scene:
            print("sim: --scene is required in this mode", file=sys.stderr)
            return EXIT_IO
        try:
            scene = _load(args.scene)
            scene_from_dict(scene)
        except SceneError as exc:
            print(f"sim: {exc}", file=sys.stderr)
            return EXIT_SCENE
        except OSError as exc:
            print(f"sim: {exc}", file=sys.stderr)
            return EXIT_IO

    settings = SolverSettings(max_iter=args.max_iter, tol=args.tol, budget=args.budget, workers=args.workers)
    try:
        result = run_benchmark(
            scene,
            args.solver,
            args.mode,
            args.out,
            settings,
            steps=args.steps,
            seed=args.seed,
            cases=args.cases,
            settle=args.settle,
            counts=args.counts,
            dt=args.dt,
            timing=not args.no_timing,
        )
    except SolverAbort as exc:
        print(f"sim: solver aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except SceneError as exc:
        print(f"sim: {exc}", file=sys.stderr)
        return EXIT_SCENE
    except OSError as exc:
        print(f"sim: {exc}", file=sys.stderr)
        return EXIT_IO

    for stem, (_, rows) in result.tables.items():
        log.info("%s.csv: %d rows", stem, len(rows))
    for name, slope in result.slopes.items():
        print(f"{name}: log-log slope {slope:.3f}")
    print(f"wrote {', '.join(f'{s}.csv' for s in result.tables)} to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
