"""Random model generators shared by the tests."""

import numpy as np
from scipy.spatial.transform import Rotation

from alcontact.multibody import Body, Joint, Subsystem


def random_inertia(rng, scale=1.0):
    Q = Rotation.random(random_state=rng).as_matrix()
    return scale * Q @ np.diag(rng.uniform(0.2, 2.0, 3)) @ Q.T


def random_tree(rng, nb=None, root=None, kinds=("revolute", "prismatic", "fixed")):
    """Random kinematic tree with a random configuration and velocity."""
    nb = int(rng.integers(1, 13)) if nb is None else nb
    root = root or rng.choice(["floating", "revolute", "prismatic"])
    bodies = []
    for k in range(nb):
        kind = root if k == 0 else str(rng.choice(kinds))
        parent = -1 if k == 0 else int(rng.integers(0, k))
        joint = Joint(
            kind,
            parent,
            axis=rng.normal(size=3),
            origin=rng.uniform(-0.5, 0.5, 3) if k else np.zeros(3),
            rotation=Rotation.random(random_state=rng).as_matrix(),
        )
        bodies.append(Body(float(rng.uniform(0.5, 3.0)), random_inertia(rng, 0.1), joint, com=rng.uniform(-0.2, 0.2, 3)))
    sub = Subsystem(bodies)
    q = sub.neutral_q()
    for body, sl in zip(sub.bodies, sub.q_slices):
        if body.joint.kind == "floating":
            q[sl] = np.concatenate([rng.uniform(-1, 1, 3), Rotation.random(random_state=rng).as_quat()])
        elif body.joint.nq:
            q[sl] = rng.uniform(-1, 1)
    sub.q = q
    sub.v = rng.normal(size=sub.nv)
    return sub


def scene_problem(scene: dict, wrenches=None):
    """World built from a scene dictionary and the problem of its first step."""
    from alcontact.assembly import assemble
    from alcontact.scene import scene_from_dict
    from alcontact.simulation import detect_contacts

    world = scene_from_dict(scene)
    problem = assemble(
        world.subsystems,
        detect_contacts(world),
        world.dt,
        world.theta,
        world.gravity,
        world.wrenches_at(world.time, wrenches),
        world.assembly,
        world.limits,
        world.springs,
    )
    return world, problem


def random_state(rng, problem, beta=None):
    """Random velocity and multipliers shaped for ``problem``."""
    from alcontact.assembly import SolverState

    return SolverState(
        vhat=[rng.normal(size=s.nv) * 0.1 for s in problem.subsystems],
        lam=[np.zeros(c.rows) for c in problem.constraints],
        u=[rng.normal(size=c.rows) for c in problem.constraints],
        beta=float(rng.uniform(1.0, 100.0)) if beta is None else beta,
    )


def random_problem(rng, sizes=(4, 3), contacts=3, hard=1, soft=1, internal=True):
    """Synthetic step with random SPD dynamics and random constraint blocks.

    Contacts alternate between one-block and two-block constraints; with
    ``internal`` the first contact has two blocks on subsystem 0.
    """
    from alcontact.assembly import Block, ConstraintKind, ConstraintSpec, ContactProblem, SubsystemTerm

    terms = []
    for n in sizes:
        X = rng.normal(size=(n, n))
        A = X @ X.T + n * np.eye(n)
        v = rng.normal(size=n) * 0.1
        terms.append(SubsystemTerm(None, None, A, A @ v + rng.normal(size=n) * 0.1, v, 2.0))

    def block(j, rows):
        return Block(j, rng.normal(size=(rows, sizes[j])))

    cons = []
    for i in range(contacts):
        if i == 0 and internal:
            blocks = [block(0, 3), block(0, 3)]
        elif i % 2:
            blocks = [block(0, 3), block(len(sizes) - 1, 3)]
        else:
            blocks = [block(int(rng.integers(0, len(sizes))), 3)]
        e = np.array([0.0, 0.0, rng.uniform(-0.2, 0.2)])
        cons.append(ConstraintSpec(ConstraintKind.CONTACT, blocks, e, friction=float(rng.uniform(0.1, 1.0)), point=rng.normal(size=3)))
    for _ in range(hard):
        cons.append(ConstraintSpec(ConstraintKind.HARD, [block(int(rng.integers(0, len(sizes))), 1)], [rng.uniform(-0.2, 0.2)]))
    for _ in range(soft):
        cons.append(
            ConstraintSpec(
                ConstraintKind.SOFT,
                [block(int(rng.integers(0, len(sizes))), 1)],
                [rng.uniform(-0.1, 0.1)],
                stiffness=float(rng.uniform(1, 100)),
                damping=float(rng.uniform(0.5, 10)),
            )
        )
    return ContactProblem(terms, cons, 0.01, 0.5)


def articulated_problem(rng, with_limits=True, with_springs=True):
    """Two floating chains over the ground with every constraint kind.

    Contacts join chain bodies to the ground, to the other chain and to
    non-adjacent bodies of the same chain.  Geometry is random: only the
    Jacobian structure matters here.
    """
    from alcontact.assembly import JointLimit, Spring, assemble
    from alcontact.collision import ContactFeature, contact_frame

    ground = Subsystem([Body(1.0, np.eye(3), Joint("fixed"))])
    chains = [random_tree(rng, nb=4, root="floating", kinds=("revolute",)) for _ in range(2)]
    for c in chains:
        c.v *= 0.1
    subs = [ground, *chains]

    def feat(a, b):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        f = ContactFeature(float(rng.uniform(-0.01, 0.01)), rng.normal(size=3) * 0.3, n, contact_frame(n))
        f.body_a, f.body_b, f.friction = a, b, float(rng.uniform(0.2, 0.8))
        return f

    feats = [feat((1, 2), (0, 0)), feat((2, 3), (0, 0)), feat((1, 3), (2, 1)), feat((1, 0), (1, 3)), feat((2, 0), (2, 2))]
    limits = [JointLimit(1, 6, lower=float(chains[0].q[7]) + 1e-3)] if with_limits else []
    springs = [Spring((1, 1, [0.1, 0, 0]), (2, 2, [0, 0.1, 0]), 0.2, 50.0, 2.0)] if with_springs else []
    return assemble(subs, feats, 1.0 / 240.0, 0.5, limits=limits, springs=springs)
