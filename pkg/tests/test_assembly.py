import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alcontact.assembly import (
    AssemblyConfig,
    AssemblyError,
    Block,
    ConstraintSpec,
    ConstraintKind,
    ContactProblem,
    JointLimit,
    Spring,
    assemble,
    compress_dynamics,
    contact_error,
    monolithic_view,
)
from alcontact.collision import ContactFeature, contact_frame
from alcontact.multibody import Body, Joint, Subsystem, mass_matrix

from helpers import random_tree

G = np.array([0.0, 0.0, -9.81])


def free_body(v=None, mass=1.0, position=(0.0, 0.0, 0.0)):
    sub = Subsystem([Body(mass, np.eye(3) * 0.4 * mass, Joint("floating"))], v=v)
    sub.q[:3] = position
    return sub


def ground():
    return Subsystem([Body(1.0, np.eye(3), Joint("fixed"))])


def feature(point, normal, a, b, gap=0.0, mu=0.5):
    f = ContactFeature(gap, np.asarray(point, float), np.asarray(normal, float), contact_frame(normal))
    f.body_a, f.body_b, f.friction = a, b, mu
    return f


def point_velocity_fd(sub, body, point, v, h=1e-7):
    """World velocity of the material point at ``point`` from finite-differenced poses."""
    kin = sub.kinematics()
    local = kin.rotations[body].T @ (point - kin.positions[body])
    kp, km = sub.kinematics(sub.integrate(v, h)), sub.kinematics(sub.integrate(-v, h))
    xp = kp.positions[body] + kp.rotations[body] @ local
    xm = km.positions[body] + km.rotations[body] @ local
    return (xp - xm) / (2 * h)


# compress_dynamics
def test_explicit_euler_limit():
    sub = free_body(v=[0.1, 0, 0, 1.0, 2.0, 3.0])
    A, b = compress_dynamics(sub, 0.01, 0.0, G)
    vhat = np.linalg.solve(A, b)
    np.testing.assert_allclose(vhat[3:], sub.v[3:] + G * 0.01, atol=1e-14)


def test_midpoint_free_fall():
    dt, theta = 0.01, 0.5
    sub = free_body(v=[0, 0, 0, 0.3, 0.0, -1.0])
    A, b = compress_dynamics(sub, dt, theta, G)
    vhat = np.linalg.solve(A, b)
    # by hand: M (v1 - v0) = m g dt and vhat = (v0 + v1) / 2
    v1 = sub.v[3:] + G * dt
    np.testing.assert_allclose(vhat[3:], 0.5 * (sub.v[3:] + v1), atol=1e-14)
    np.testing.assert_allclose(vhat[3:], sub.v[3:] + 0.5 * G * dt, atol=1e-14)


def test_identity_mass_at_rest():
    sub = Subsystem([Body(1.0, np.eye(3), Joint("floating"))])
    for theta in (0.0, 0.3, 0.9):
        A, b = compress_dynamics(sub, 0.01, theta, np.zeros(3))
        np.testing.assert_allclose(A, np.eye(6) / (1 - theta))
        np.testing.assert_array_equal(b, 0.0)


def test_theta_one_rejected():
    with pytest.raises(ValueError):
        compress_dynamics(free_body(), 0.01, 1.0)
    with pytest.raises(ValueError):
        compress_dynamics(free_body(), 0.0, 0.5)


def test_ballistic_trajectory_is_exact_for_midpoint():
    dt, theta, n = 0.01, 0.5, 100
    v0 = np.array([0.5, -0.2, 3.0])
    sub = free_body(v=np.concatenate([np.zeros(3), v0]))
    for _ in range(n):
        A, b = compress_dynamics(sub, dt, theta, G)
        vhat = np.linalg.solve(A, b)
        sub.q = sub.integrate(vhat, dt)
        sub.v = (vhat - theta * sub.v) / (1 - theta)
    t = n * dt
    np.testing.assert_allclose(sub.q[:3], v0 * t + 0.5 * G * t**2, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.95))
def test_compressed_dynamics_reproduce_discrete_equation(seed, theta):
    rng = np.random.default_rng(seed)
    sub = random_tree(rng)
    dt = 0.005
    A, b = compress_dynamics(sub, dt, theta, G)
    M = mass_matrix(sub)
    vhat = np.linalg.solve(A, b)
    v1 = (vhat - theta * sub.v) / (1 - theta)
    # M (v1 - v0) = f dt, with f dt = b - A v0
    np.testing.assert_allclose(M @ (v1 - sub.v), b - A @ sub.v, atol=1e-9 * (1 + np.abs(b).max()))


# contact error
def test_contact_error_branches():
    cfg = AssemblyConfig(baumgarte=0.2, slop=1e-3)
    dt = 0.01
    assert contact_error(0.002, dt, cfg) == pytest.approx(0.2)
    assert contact_error(-0.0005, dt, cfg) == 0.0
    assert contact_error(-0.011, dt, cfg) == pytest.approx(0.2 / dt * -0.01)


# build_constraints
def test_sphere_on_ground_has_one_block():
    ball = free_body(position=(0.0, 0.0, 0.1))
    f = feature([0.0, 0.0, 0.0], [0, 0, 1], (1, 0), (0, 0))
    problem = assemble([ground(), ball], [f], 0.01, 0.5)
    (c,) = problem.constraints
    assert c.kind is ConstraintKind.CONTACT and c.cardinality == 1
    blk = c.blocks[0]
    assert blk.subsystem == 0 and blk.jacobian.shape == (3, 6)
    # angular velocity about x moves the contact point 0.1 below the origin along +y
    np.testing.assert_allclose(blk.jacobian @ [1, 0, 0, 0, 0, 0], [0, 0.1, 0], atol=1e-15)
    np.testing.assert_allclose(blk.jacobian @ [0, 0, 0, 1, 2, 3], [1, 2, 3], atol=1e-15)


def chain(n=4, seed=0):
    rng = np.random.default_rng(seed)
    sub = random_tree(rng, nb=n, root="floating", kinds=("revolute",))
    return sub


def test_contact_between_subsystems_has_two_blocks():
    a, b = chain(seed=1), chain(seed=2)
    f = feature([0.1, 0.2, 0.3], [0, 0.6, 0.8], (0, 3), (1, 2))
    problem = assemble([a, b], [f], 0.01, 0.5)
    (c,) = problem.constraints
    assert [blk.subsystem for blk in c.blocks] == [0, 1]
    assert c.blocks[0].jacobian.shape == (3, a.nv) and c.blocks[1].jacobian.shape == (3, b.nv)


def test_internal_constraint_is_row_stacked():
    sub = chain(seed=3)
    f = feature([0.0, 0.1, 0.0], [1.0, 0.0, 0.0], (0, 2), (0, 3))
    problem = assemble([sub], [f], 0.01, 0.5)
    (c,) = problem.constraints
    assert c.cardinality == 2 and c.subsystems == [0]
    stacked = c.subsystem_jacobian(0)
    assert stacked.shape == (6, sub.nv)
    view = monolithic_view(problem)
    np.testing.assert_allclose(view.J, stacked[:3] + stacked[3:], atol=1e-15)


def test_unknown_subsystem_rejected():
    term = assemble([free_body()], [], 0.01, 0.5).subsystems
    bad = ConstraintSpec(ConstraintKind.CONTACT, [Block(3, np.zeros((3, 6)))], np.zeros(3))
    with pytest.raises(AssemblyError):
        ContactProblem(term, [bad], 0.01, 0.5)
    with pytest.raises(AssemblyError):
        assemble([ground(), free_body()], [], 0.01, 0.5, limits=[JointLimit(0, 0, lower=0.0)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobian_gives_relative_contact_velocity(seed):
    rng = np.random.default_rng(seed)
    subs = [random_tree(rng, root="floating"), random_tree(rng)]
    feats = []
    for _ in range(4):
        a, b = [(s, int(rng.integers(0, len(subs[s].bodies)))) for s in rng.integers(0, 2, 2)]
        n = rng.normal(size=3)
        feats.append(feature(rng.normal(size=3), n / np.linalg.norm(n), a, b))
    problem = assemble(subs, feats, 0.01, 0.5)
    vhat = [rng.normal(size=s.nv) for s in problem.subsystems]
    for c, f in zip(problem.constraints, feats):
        got = sum(blk.jacobian @ vhat[blk.subsystem] for blk in c.blocks)
        va = point_velocity_fd(subs[f.body_a[0]], f.body_a[1], f.point, vhat[f.body_a[0]])
        vb = point_velocity_fd(subs[f.body_b[0]], f.body_b[1], f.point, vhat[f.body_b[0]])
        expect = f.frame.T @ (va - vb)
        assert np.linalg.norm(got - expect) <= 1e-5 * (1 + np.linalg.norm(expect))


def test_joint_limit_rows():
    hinge = Subsystem([Body(1.0, np.eye(3), Joint("revolute", -1))], q=[-0.5])
    problem = assemble([hinge], [], 0.01, 0.5, limits=[JointLimit(0, 0, lower=-0.5, upper=0.5)])
    (c,) = problem.constraints
    assert c.kind is ConstraintKind.HARD
    np.testing.assert_array_equal(c.blocks[0].jacobian, [[1.0]])


def test_spring_row_along_anchor_direction():
    ball = free_body(position=(0.0, 0.0, 1.0))
    s = Spring((0, 0, [0, 0, 0]), None, rest_length=0.5, stiffness=100.0, damping=1.0, world_point=np.zeros(3))
    problem = assemble([ball], [], 0.01, 0.5, springs=[s])
    (c,) = problem.constraints
    assert c.kind is ConstraintKind.SOFT
    assert c.error == pytest.approx([0.5])
    np.testing.assert_allclose(c.blocks[0].jacobian, [[0, 0, 0, 0, 0, 1]], atol=1e-15)


# monolithic view
def test_one_subsystem_one_contact_view():
    ball = free_body(position=(0.0, 0.0, 0.1))
    problem = assemble([ground(), ball], [feature([0, 0, 0], [0, 0, 1], (1, 0), (0, 0))], 0.01, 0.5)
    A, b, J, e = monolithic_view(problem)
    np.testing.assert_array_equal(A, problem.subsystems[0].A)
    np.testing.assert_array_equal(J, problem.constraints[0].blocks[0].jacobian)


def test_two_subsystem_view_is_block_diagonal():
    problem = assemble([free_body(), free_body(mass=2.0)], [], 0.01, 0.5)
    A = monolithic_view(problem).A
    assert A.shape == (12, 12)
    np.testing.assert_array_equal(A[:6, 6:], 0.0)
    np.testing.assert_allclose(np.diag(A)[6:], [1.6, 1.6, 1.6, 4.0, 4.0, 4.0])


def test_view_then_resplit_is_identity():
    subs = [chain(seed=4), chain(seed=5)]
    feats = [feature([0, 0, 0], [0, 0, 1], (0, 1), (1, 2)), feature([0.1, 0, 0], [1, 0, 0], (0, 0), (0, 2))]
    problem = assemble(subs, feats, 0.01, 0.5)
    view = monolithic_view(problem)
    o = problem.offsets
    for c, rows in zip(problem.constraints, view.rows):
        for j in c.subsystems:
            stacked = c.subsystem_jacobian(j)
            r = c.rows
            summed = sum(stacked[k * r:(k + 1) * r] for k in range(stacked.shape[0] // r))
            np.testing.assert_array_equal(view.J[rows, o[j]:o[j + 1]], summed)
