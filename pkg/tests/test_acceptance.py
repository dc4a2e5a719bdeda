"""Exit criteria of the build, one test per criterion.

Each test prints a PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section of the pytest terminal summary.
"""

import time

import numpy as np
import pytest
from scipy.linalg import cholesky

from alcontact.assembly import assemble, monolithic_view
from alcontact.bench import run_benchmark, run_scaling, run_single_step
from alcontact.canal import CanalConfig, CanalSystem, solve_canal
from alcontact.collision import DishProfile, _segment_closest, dish_sdf
from alcontact.cone_ops import check_scc, project_cone_prox, project_cone_strict
from alcontact.multibody import EffectiveBodyMatrix, factor_subsystem_matrix, mass_matrix, mass_matrix_pattern, skew, spatial_jacobian
from alcontact.scene import _ball, builtin_scene, scene_from_dict, sphere_stack_scene
from alcontact.simulation import SolverSettings, detect_contacts, step, system_momentum
from alcontact.subadmm import SubAdmmConfig, solve_subadmm

from helpers import random_problem, random_state, random_tree


def criterion(number):
    def wrap(fn):
        fn.criterion = number
        return pytest.mark.acceptance(fn)

    return wrap


def scc_violation(problem, state):
    view = monolithic_view(problem)
    v = state.vhat_vector()
    worst = 0.0
    for c, sl, lam in zip(problem.constraints, view.rows, state.lam):
        worst = max(worst, check_scc(view.J[sl] @ v + c.error, lam, c.friction).max_violation)
    return worst


@criterion(1)
def test_strict_operator_satisfies_scc(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    lam_star = rng.uniform(-10, 10, (10_000, 3))
    mu = rng.uniform(0.0, 2.0, 10_000)
    beta = rng.uniform(0.1, 100.0, 10_000)
    lam = project_cone_strict(lam_star, mu)
    z = (lam - lam_star) / beta[:, None]
    worst = max(check_scc(zi, li, mi).max_violation for zi, li, mi in zip(z, lam, mu))
    elapsed = time.perf_counter() - start
    verdict(1, "strict operator SCC oracle", worst < 1e-10 and elapsed < 1.0, f"max violation {worst:.1e}, {elapsed:.2f} s")


def cone_grid(mu, height, n_h=25, n_r=20, n_phi=20):
    h = np.linspace(0.0, height, n_h)
    s = np.linspace(0.0, 1.0, n_r)
    phi = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    H, S, P = np.meshgrid(h, s, phi, indexing="ij")
    r = mu * H * S
    return np.column_stack([(r * np.cos(P)).ravel(), (r * np.sin(P)).ravel(), H.ravel()])


@criterion(2)
def test_prox_projection_beats_cone_grid(verdict):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = np.inf
    outside = 0.0
    for _ in range(1000):
        lam_star = rng.uniform(-5, 5, 3)
        mu = rng.uniform(0.05, 2.0)
        out = project_cone_prox(lam_star, mu)
        outside = max(outside, np.hypot(out[0], out[1]) - mu * out[2], -out[2])
        grid = cone_grid(mu, 2.0 * np.linalg.norm(lam_star) + 1e-3)
        margin = np.linalg.norm(grid - lam_star, axis=1).min() - np.linalg.norm(out - lam_star)
        worst = min(worst, margin)
    elapsed = time.perf_counter() - start
    ok = worst >= -1e-8 and outside <= 1e-12 and elapsed < 5.0
    verdict(2, "proximal projection optimality", ok, f"worst margin {worst:.1e}, {elapsed:.2f} s")


@criterion(3)
def test_hessian_matches_finite_differences(verdict):
    accepted, seed, worst = 0, 0, 0.0
    spd = True
    h = 1e-6
    while accepted < 100:
        rng = np.random.default_rng(10_000 + seed)
        seed += 1
        problem = random_problem(rng)
        state = random_state(rng, problem)
        system = CanalSystem(problem)
        u = system.s.pack(state.u)
        v = state.vhat_vector()
        beta, ec = state.beta, system.s.ec
        # skip states within reach of a branch boundary of the projection
        sc, sh, _ = system.impulse_args(system.s.apply(v), u, beta, ec)
        reach = beta * h * np.abs(system.s.view.J).sum(axis=1).max() * 10
        nt = np.linalg.norm(sc[:, :2], axis=1)
        mu = system.s.mu
        near = (np.abs(nt - mu * sc[:, 2]) < reach * (1 + mu)) | (np.abs(mu * nt + sc[:, 2]) < reach * (1 + mu)) | (nt < reach)
        if near.any() or (np.abs(sh) < reach).any():
            continue
        H = system.hessian(v, u, beta, ec)
        fd = np.empty_like(H)
        for k in range(len(v)):
            dv = np.zeros_like(v)
            dv[k] = h
            fd[:, k] = (system.residual(v + dv, u, beta, ec)[0] - system.residual(v - dv, u, beta, ec)[0]) / (2 * h)
        worst = max(worst, np.abs(fd - H).max() / np.abs(H).max())
        try:
            cholesky(H)
        except np.linalg.LinAlgError:
            spd = False
        accepted += 1
    verdict(3, "Newton Hessian vs finite differences", worst < 1e-5 and spd, f"max rel. error {worst:.1e} over {accepted} states, SPD {spd}")


@criterion(4)
def test_tree_factorization_matches_dense(verdict):
    theta = 0.5
    worst, patterns = 0.0, True
    for seed in range(50):
        rng = np.random.default_rng(seed)
        sub = random_tree(rng)
        kin = sub.kinematics()
        points = [(int(rng.integers(0, len(sub.bodies))), rng.normal(size=3) * 0.5) for _ in range(int(rng.integers(0, 41)))]
        beta = float(rng.uniform(1.0, 1e4))
        scale = 1.0 / (1.0 - theta)
        H = [EffectiveBodyMatrix.from_inertia(b.mass, kin.coms[k], kin.rotations[k] @ b.inertia @ kin.rotations[k].T, scale)
             for k, b in enumerate(sub.bodies)]
        for k, p in points:
            H[k] = H[k] + EffectiveBodyMatrix.contact_term(p, beta)
        F = factor_subsystem_matrix(sub, H, kin)
        # dense A_j + sum beta J^T J from explicit point Jacobians
        K = scale * mass_matrix(sub, kin)
        for k, p in points:
            Jp = np.hstack([np.eye(3), -skew(p)]) @ spatial_jacobian(kin, k)
            K += beta * Jp.T @ Jp
        rhs = rng.normal(size=sub.nv)
        x, xd = F.solve(rhs), np.linalg.solve(K, rhs)
        worst = max(worst, np.linalg.norm(x - xd) / np.linalg.norm(xd))
        patterns &= bool(np.array_equal(F.pattern, mass_matrix_pattern(sub)))
    verdict(4, "tree factorization vs dense assembly", worst < 1e-9 and patterns, f"max rel. solve error {worst:.1e}, patterns equal {patterns}")


def ordering_case(scene, seed):
    """CANAL, then SubADMM and PGS with CANAL's wall time as budget, on one settled case."""
    run_single_step(scene, ["canal"], seed=seed)  # warm caches before timing
    canal = run_single_step(scene, ["canal"], seed=seed).tables["metrics"][1][0]
    budget = SolverSettings(max_iter=10**6, tol=0.0, budget=canal["wall_time"])
    admm, pgs = run_single_step(scene, ["subadmm", "pgs"], budget, seed=seed).tables["metrics"][1]
    admm200 = run_single_step(scene, ["subadmm"], SolverSettings(max_iter=200, tol=0.0), seed=seed).tables["metrics"][1][0]
    return canal, admm, pgs, admm200


@criterion(5)
def test_residual_ordering_at_equal_time(verdict):
    start = time.perf_counter()
    ok, details = True, []
    for name in ("mass_ratio_stack", "sphere_crate"):
        canal, admm, pgs, admm200 = ordering_case(builtin_scene(name), seed=0)
        case_ok = (
            canal["residual"] < admm["residual"] < pgs["residual"]
            and canal["residual"] < 1e-8
            and canal["iterations"] <= 30
            and admm200["residual"] < 1e-4
        )
        ok &= case_ok
        details.append(
            f"{name}: canal {canal['residual']:.1e} ({canal['iterations']} it, {canal['wall_time'] * 1e3:.1f} ms), "
            f"subadmm {admm['residual']:.1e} ({admm['iterations']} it), pgs {pgs['residual']:.1e} ({pgs['iterations']} sweeps), "
            f"subadmm@200 {admm200['residual']:.1e}"
        )
    elapsed = time.perf_counter() - start
    verdict(5, "residual ordering CANAL < SubADMM < PGS", ok and elapsed < 10.0, "; ".join(details) + f"; {elapsed:.1f} s")


def small_scene(rng):
    """One to three stacked spheres, sometimes with a neighbour touching the bottom one."""
    masses = rng.uniform(0.5, 5.0, int(rng.integers(1, 4)))
    scene = sphere_stack_scene(list(masses), friction=float(rng.uniform(0.2, 1.0)), wrench_amplitude=float(rng.uniform(0.1, 2.0)))
    if rng.random() < 0.5:
        scene["subsystems"].append(_ball("side", float(rng.uniform(0.5, 5.0)), 0.05, [0.1, 0.0, 0.05]))
    return scene


@criterion(6)
def test_cross_solver_agreement(verdict):
    # both solvers run to tight tolerances: agreement of the solutions is the point
    canal_cfg = CanalConfig(al_tol=1e-16, max_al_iters=1000)
    admm_cfg = SubAdmmConfig(tol=1e-12, l_max=20_000)
    worst_rel, worst_scc = 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        world = scene_from_dict(small_scene(rng))
        wrenches = world.random_wrenches(rng)
        problem = assemble(world.subsystems, detect_contacts(world), world.dt, world.theta, world.gravity,
                           world.wrenches_at(0.0, wrenches), world.assembly)
        a, _ = solve_canal(problem, cfg=canal_cfg)
        b, _ = solve_subadmm(problem, cfg=admm_cfg)
        la, lb = np.concatenate(a.lam), np.concatenate(b.lam)
        worst_rel = max(worst_rel, np.linalg.norm(la - lb) / np.linalg.norm(lb))
        worst_scc = max(worst_scc, scc_violation(problem, a), scc_violation(problem, b))
    ok = worst_rel < 1e-4 and worst_scc < 1e-6
    verdict(6, "CANAL and SubADMM agree on 20 small scenes", ok, f"max rel. difference {worst_rel:.1e}, max SCC violation {worst_scc:.1e}")


@criterion(7)
def test_scaling_exponents(verdict):
    start = time.perf_counter()
    slopes = run_scaling(counts=(8, 16, 32, 64), steps=3, seed=0).slopes
    elapsed = time.perf_counter() - start
    s, p, c = slopes["subadmm"], slopes["pgs"], slopes["canal"]
    ok = s < p < c and s < 1.3 and elapsed < 60.0
    verdict(7, "scaling slopes SubADMM < PGS < CANAL", ok, f"subadmm {s:.2f}, pgs {p:.2f}, canal {c:.2f}, {elapsed:.1f} s")


@criterion(8)
def test_physical_sanity(verdict):
    # free fall over 1 s
    scene = sphere_stack_scene([])
    scene["subsystems"] = [_ball("ball", 1.0, 0.05, [0.0, 0.0, 10.0], [0.0, 0.0, 0.0, 0.5, 0.0, 0.0])]
    world = scene_from_dict(scene)
    for _ in range(240):
        step(world)
    drop_err = abs(world.subsystems[0].q[2] - (10.0 - 0.5 * 9.81))

    # resting stack for 1000 steps
    world = scene_from_dict(builtin_scene("sphere_stack"))
    speed = 0.0
    for k in range(1000):
        step(world, "canal")
        if k >= 10:
            speed = max(speed, max(np.abs(s.v).max() for s in world.subsystems if not s.is_static))

    # zero-gravity momentum
    scene = sphere_stack_scene([])
    scene["gravity"] = [0.0, 0.0, 0.0]
    scene["subsystems"] = [_ball("a", 1.0, 0.05, [0, 0, 1], [1, 2, 3, 0.5, -1, 0.2]), _ball("b", 3.0, 0.05, [1, 0, 1], [0, 0, 0, -0.1, 0.3, 0])]
    world = scene_from_dict(scene)
    p = system_momentum(world)
    drift = 0.0
    for _ in range(240):
        step(world)
        q = system_momentum(world)
        drift = max(drift, np.abs(q - p).max())
        p = q
    ok = drop_err <= 1e-3 and speed < 1e-6 and drift <= 1e-12
    verdict(8, "physical sanity", ok, f"free-fall error {drop_err:.1e} m, stack speed {speed:.1e} m/s, momentum drift {drift:.1e}/step")


@criterion(9)
def test_dish_sdf(verdict):
    profile = DishProfile(A=[0.08, 0.0], B=[0.12, 0.03], d=0.004)
    rng = np.random.default_rng(9)
    p = rng.uniform(-0.3, 0.3, (10_000, 3))
    q = rng.uniform(-0.3, 0.3, (10_000, 3))
    lipschitz = float(np.max(np.abs(dish_sdf(profile, p)[0] - dish_sdf(profile, q)[0]) - np.linalg.norm(p - q, axis=1)))

    h, grad_err = 1e-6, 0.0
    for x in rng.uniform(-0.2, 0.2, (2000, 3)):
        m = np.array([np.hypot(x[0], x[1]), x[2]])
        d1 = np.linalg.norm(m - _segment_closest(m, np.zeros(2), profile.A))
        d2 = np.linalg.norm(m - _segment_closest(m, profile.A, profile.B))
        # the gradient jumps across the revolution axis and the medial axis
        if m[0] < 1e-3 or abs(d1 - d2) < 1e-4 or min(d1, d2) < 1e-4:
            continue
        fd = np.array([(dish_sdf(profile, x + h * e)[0] - dish_sdf(profile, x - h * e)[0]) / (2 * h) for e in np.eye(3)])
        grad_err = max(grad_err, np.abs(fd - dish_sdf(profile, x)[1]).max())

    # surface points: offset the meridian segments by the thickness
    surface = 0.0
    for a, b in ((np.array([0.0, 0.0]), profile.A), (profile.A, profile.B)):
        n = np.array([-(b - a)[1], (b - a)[0]]) / np.linalg.norm(b - a)
        for t in np.linspace(0.05, 0.95, 19):
            m = a + t * (b - a) + profile.d * n
            for phi in np.linspace(0, 2 * np.pi, 8, endpoint=False):
                x = np.array([m[0] * np.cos(phi), m[0] * np.sin(phi), m[1]])
                surface = max(surface, abs(dish_sdf(profile, x)[0]))
    ok = lipschitz <= 1e-12 and grad_err < 1e-5 and surface < 1e-10
    verdict(9, "dish SDF", ok, f"Lipschitz excess {lipschitz:.1e}, gradient error {grad_err:.1e}, surface |SDF| {surface:.1e}")


@criterion(10)
def test_determinism(verdict, tmp_path):
    same = True
    for mode, scene, kwargs in (
        ("single-step", "sphere_crate", dict(cases=3, settle=5)),
        ("traj", "mass_ratio_stack", dict(steps=30)),
    ):
        for workers in (1, 4):
            files = []
            for run in ("a", "b"):
                out = tmp_path / f"{mode}-{workers}-{run}"
                run_benchmark(builtin_scene(scene), ("canal", "subadmm", "pgs"), mode, out,
                              SolverSettings(workers=workers), seed=5, timing=False, **kwargs)
                files.append((out / "metrics.csv").read_bytes())
            same &= files[0] == files[1]
    verdict(10, "byte-identical metrics CSV", same, "single-step and trajectory, 1 and 4 workers")
