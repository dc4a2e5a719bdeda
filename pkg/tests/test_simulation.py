import numpy as np
import pytest

from alcontact.assembly import SolverState
from alcontact.bench import run_trajectory
from alcontact.metrics import ResidualReport
from alcontact.scene import _ball, builtin_scene, scene_from_dict, sphere_stack_scene
from alcontact.simulation import (
    ExternalForce,
    SolverAbort,
    SolverSettings,
    detect_contacts,
    step,
    system_energy,
    system_momentum,
)

G = 9.81


def lone_ball(position, velocity, gravity=(0.0, 0.0, -G), mass=1.0):
    scene = sphere_stack_scene([])
    scene["gravity"] = list(gravity)
    scene["subsystems"] = [_ball("ball", mass, 0.05, position, velocity)]
    return scene


def box_scene():
    scene = sphere_stack_scene([])
    scene["subsystems"].append(
        {
            "name": "box",
            "q": [0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 1.0],
            "bodies": [{"name": "box", "mass": 2.0, "joint": {"type": "floating"},
                        "shapes": [{"type": "box", "half_extents": [0.2, 0.15, 0.1]}]}],
        }
    )
    return scene


def dynamic_speed(world):
    return max(np.abs(s.v).max() for s in world.subsystems if not s.is_static)


def test_free_fall_matches_ballistic_solution():
    # floating velocity is (body angular, world linear)
    world = scene_from_dict(lone_ball([0.0, 0.0, 10.0], [0.3, -0.2, 0.1, 0.5, 0.0, 0.0]))
    for _ in range(240):
        step(world)
    x = world.subsystems[0].q[:3]
    assert world.time == pytest.approx(1.0)
    assert x[2] == pytest.approx(10.0 - 0.5 * G, abs=1e-3)
    assert x[0] == pytest.approx(0.5, abs=1e-3)


def test_resting_box_stays_put():
    world = scene_from_dict(box_scene())
    q0 = world.subsystems[1].q.copy()
    for k in range(1000):
        step(world)
        if k >= 10:
            assert dynamic_speed(world) < 1e-6
    np.testing.assert_allclose(world.subsystems[1].q, q0, atol=world.assembly.slop)


def test_resting_stack_is_static_for_1000_steps():
    world = scene_from_dict(builtin_scene("sphere_stack"))
    heights = [s.q[2] for s in world.subsystems[1:]]
    worst = 0.0
    for k in range(1000):
        step(world, "canal")
        if k >= 10:
            worst = max(worst, dynamic_speed(world))
    assert worst < 1e-6
    np.testing.assert_allclose([s.q[2] for s in world.subsystems[1:]], heights, atol=world.assembly.slop)


def test_zero_gravity_momentum_is_conserved():
    scene = lone_ball([0.0, 0.0, 1.0], [1.0, 2.0, 3.0, 0.5, -1.0, 0.2], gravity=(0, 0, 0))
    scene["subsystems"].append(_ball("other", 3.0, 0.05, [1.0, 0.0, 1.0], [0, 0, 0, -0.1, 0.3, 0.0]))
    world = scene_from_dict(scene)
    p = system_momentum(world)
    np.testing.assert_allclose(p, [0.5 - 0.3, -1.0 + 0.9, 0.2], atol=1e-15)
    for _ in range(100):
        step(world)
        q = system_momentum(world)
        assert np.abs(q - p).max() < 1e-12
        p = q


def test_energy_of_resting_ball_is_potential_only():
    world = scene_from_dict(sphere_stack_scene([2.0]))
    assert system_energy(world) == pytest.approx(2.0 * G * 0.05)


def test_timed_force_window():
    scene = lone_ball([0.0, 0.0, 0.0], None, gravity=(0, 0, 0))
    world = scene_from_dict(scene)
    # window edge between steps: accumulated time is not exact at multiples of dt
    world.forces.append(ExternalForce(0, 0, force=np.array([2.0, 0.0, 0.0]), start=0.0, end=0.5 - 0.5 * world.dt))
    for _ in range(240):
        step(world)
    # 2 N for 120 steps of 1/240 s on 1 kg
    assert world.subsystems[0].v[3] == pytest.approx(1.0, abs=1e-12)


def test_contacts_are_detected_in_a_fixed_order():
    world = scene_from_dict(builtin_scene("sphere_crate"))
    a = detect_contacts(world)
    b = detect_contacts(world)
    assert len(a) == 20
    assert [(f.body_a, f.body_b, f.tag) for f in a] == [(f.body_a, f.body_b, f.tag) for f in b]


def test_warm_start_reduces_work():
    world = scene_from_dict(builtin_scene("mass_ratio_stack"))
    first, _, _ = step(world)
    second, _, _ = step(world)
    assert second.iterations <= first.iterations
    assert second.residual < 1e-8


def test_non_finite_solver_output_aborts():
    world = scene_from_dict(sphere_stack_scene([1.0]))

    def broken(problem, warm=None, trace=False):
        vhat = [np.full(t.nv, np.nan) for t in problem.subsystems]
        return SolverState(vhat=vhat, lam=[np.zeros(c.rows) for c in problem.constraints]), ResidualReport("broken", 1, 0, 0.0, False)

    with pytest.raises(SolverAbort):
        step(world, broken)


def max_penetration(scene, solver, budget):
    result = run_trajectory(builtin_scene(scene), (solver,), 240, SolverSettings(budget=budget))
    return max(row["penetration"] for row in result.tables["metrics"][1])


def test_budgeted_trajectory_canal_holds_pgs_sinks():
    assert max_penetration("mass_ratio_stack", "canal", 5e-4) < 5e-3
    assert max_penetration("mass_ratio_stack", "pgs", 5e-4) > 5e-3


def test_budgeted_trajectory_uniform_stack_is_easy_for_pgs():
    assert max_penetration("sphere_stack", "pgs", 5e-4) < 5e-3


@pytest.mark.xfail(strict=True, reason="fixed per-solve setup of the subsystem ADMM exceeds a 0.5 ms budget in Python; see notes")
def test_budgeted_trajectory_subadmm_holds():
    assert max_penetration("mass_ratio_stack", "subadmm", 5e-4) < 5e-3
