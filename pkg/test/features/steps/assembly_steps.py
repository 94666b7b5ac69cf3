import numpy as np
import scipy.sparse.linalg as spla
from behave import *
from hamcrest import *

from fibernet import assembly
from fibernet import network as net
from fibernet.analysis import reference_residual, solve_reference
from fibernet.assembly import ProblemSpec, assemble_stiffness, build_problem
from fibernet.errors import AssemblyError
from fibernet.network import Edge, EdgePair
from oracles import (dense_stiffness, random_element_geometry, random_fiber_network,
                     random_network, rigid_modes, rotate)

EPSILON = 1e-3


def _forces(block, u):
    return -(block @ np.asarray(u, dtype=np.float64))


def _pair(kappa=1.0, volume=1.0, eta=0.0, gamma=0.0):
    return EdgePair(0, (0, 1), 1, (0, 2), kappa, volume, eta, gamma, net.INTRA_FIBER)


def _assert_vector(actual, expected, tolerance=1e-15):
    assert_that(actual.tolist(), contains_exactly(*[close_to(value, tolerance)
                                                    for value in expected]))


def _kernel_dimension(matrix):
    eigenvalues = np.linalg.eigvalsh(matrix.toarray())
    return int(np.sum(np.abs(eigenvalues) <= 1e-9 * np.abs(eigenvalues).max()))


@given('a horizontal edge of unit length with k a equal to 1')
def step_impl(context):
    context.positions = np.array([[0.0, 0.0], [1.0, 0.0]])
    context.block = assembly.edge_extension_block(Edge(0, (0, 1), 1.0, 1.0, 1.0),
                                                  context.positions)


@given('a straight edge pair along the x axis with unit lengths and kappa V equal to 1')
def step_impl(context):
    context.positions = np.array([[1.0, 0.0], [0.0, 0.0], [-1.0, 0.0]])
    context.block = assembly.angular_deviation_block(_pair(), context.positions)


@given('a right-angle edge pair with unit lengths and a, w, eta and gamma equal to 1')
def step_impl(context):
    context.positions = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    edges = (Edge(0, (1, 0), 1.0, 1.0, 1.0), Edge(1, (1, 2), 1.0, 1.0, 1.0))
    pair = _pair(kappa=0.0, volume=0.0, eta=1.0, gamma=1.0)
    context.block = assembly.poisson_block(pair, context.positions, edges)


@when('its far node is displaced by {amount:g} along the edge')
def step_impl(context, amount):
    context.forces = _forces(context.block, [0.0, 0.0, amount, 0.0])


@when('its far node is displaced by {amount:g} across the edge')
def step_impl(context, amount):
    context.forces = _forces(context.block, [0.0, 0.0, 0.0, amount])


@when('both of its nodes are translated by ({x:g}, {y:g})')
def step_impl(context, x, y):
    context.forces = _forces(context.block, [x, y, x, y])


@when('its first outer node is lifted by {amount:g}')
def step_impl(context, amount):
    context.forces = _forces(context.block, [0.0, amount, 0.0, 0.0, 0.0, 0.0])


@when('its second edge is stretched by {amount:g} along its axis')
def step_impl(context, amount):
    context.forces = _forces(context.block, [0.0, 0.0, 0.0, 0.0, 0.0, amount])


@then('the force on its first node is ({x:g}, {y:g})')
def step_impl(context, x, y):
    _assert_vector(context.forces[0:2], [x, y])


@then('the force on its far node is ({x:g}, {y:g})')
def step_impl(context, x, y):
    _assert_vector(context.forces[2:4], [x, y])


@then('no edge forces arise')
def step_impl(context):
    _assert_vector(context.forces, [0.0] * 4)


@then('the angular forces on the outer nodes are ({xi:g}, {yi:g}) and ({xl:g}, {yl:g})')
def step_impl(context, xi, yi, xl, yl):
    _assert_vector(context.forces[0:2], [xi, yi])
    _assert_vector(context.forces[4:6], [xl, yl])


@then('the angular force on the center node is ({x:g}, {y:g})')
def step_impl(context, x, y):
    _assert_vector(context.forces[2:4], [x, y])


@then('a rigid translation gives no angular forces')
def step_impl(context):
    _assert_vector(_forces(context.block, np.tile([0.4, -0.7], 3)), [0.0] * 6)


@then('a small rigid rotation gives no angular forces')
def step_impl(context):
    center = context.positions[1]
    u = np.concatenate([EPSILON * rotate(x - center) for x in context.positions])
    _assert_vector(_forces(context.block, u), [0.0] * 6)


@then('the Poisson force on the first outer node is {factor:g} times its edge direction')
def step_impl(context, factor):
    d_i = context.positions[0] - context.positions[1]
    _assert_vector(context.forces[0:2], factor * d_i)


@then('the Poisson force on the second outer node is ({x:g}, {y:g})')
def step_impl(context, x, y):
    _assert_vector(context.forces[4:6], [x, y])


def _random_elements(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        positions = random_element_geometry(rng)
        k, a_i, a_l, w_i, w_l, kappa, volume, eta, gamma = rng.uniform(0.5, 2.0, size=9)
        edges = (Edge(0, (1, 0), k, a_i, w_i), Edge(1, (1, 2), k, a_l, w_l))
        pair = EdgePair(0, (0, 1), 1, (0, 2), kappa, volume, eta, gamma, net.INTRA_FIBER)
        yield positions, edges, pair


@then('for {count:d} random edge pairs with gamma 0 the Poisson block equals two edge blocks '
      'scaled by eta')
def step_impl(context, count):
    for positions, edges, pair in _random_elements(count, 17):
        pair.gamma = 0.0
        block = assembly.poisson_block(pair, positions, edges)
        expected = np.zeros((6, 6))
        for edge, outer in zip(edges, (0, 2)):
            scaled = Edge(edge.id, edge.nodes, pair.eta, edge.a, edge.w)
            dofs = [2, 3, 2 * outer, 2 * outer + 1]
            expected[np.ix_(dofs, dofs)] += assembly.edge_extension_block(scaled, positions)
        scale = np.abs(expected).max()
        assert_that(float(np.abs(block - expected).max()), less_than_or_equal_to(1e-12 * scale))


@then('across {count:d} random elements the edge and angular blocks are symmetric, positive '
      'semidefinite and of rank 1')
def step_impl(context, count):
    for positions, edges, pair in _random_elements(count, 1):
        for block in (assembly.edge_extension_block(edges[0], positions),
                      assembly.angular_deviation_block(pair, positions)):
            scale = np.abs(block).max()
            assert_that(float(np.abs(block - block.T).max()),
                        less_than_or_equal_to(1e-14 * scale))
            eigenvalues = np.linalg.eigvalsh(block)
            assert_that(float(eigenvalues.min()), greater_than_or_equal_to(-1e-12 * scale))
            assert_that(int(np.linalg.matrix_rank(block, tol=1e-10 * scale)), equal_to(1))


@then('across {count:d} random elements every block has zero column sums per axis')
def step_impl(context, count):
    for positions, edges, pair in _random_elements(count, 2):
        for block in (assembly.edge_extension_block(edges[0], positions),
                      assembly.angular_deviation_block(pair, positions),
                      assembly.poisson_block(pair, positions, edges)):
            scale = np.abs(block).max()
            for axis in (0, 1):
                sums = block[axis::2].sum(axis=0)
                assert_that(float(np.abs(sums).max()), less_than_or_equal_to(1e-12 * scale))


@then('across {count:d} random elements a rigid rotation gives no angular forces')
def step_impl(context, count):
    for positions, edges, pair in _random_elements(count, 3):
        block = assembly.angular_deviation_block(pair, positions)
        rotation = np.concatenate([rotate(x) for x in positions])
        scale = np.abs(block).max() * np.abs(rotation).max()
        assert_that(float(np.abs(block @ rotation).max()), less_than_or_equal_to(1e-12 * scale))


def _assert_matches_dense_oracle(network, nodes):
    assert_that(network.n_nodes, less_than_or_equal_to(nodes))
    K = assemble_stiffness(network).K.toarray()
    oracle = dense_stiffness(network)
    assert_that(float(np.abs(K - oracle).max()),
                less_than_or_equal_to(1e-12 * np.abs(oracle).max()))


@then('on {count:d} random networks with at most {nodes:d} nodes the assembled matrix matches '
      'the dense oracle')
def step_impl(context, count, nodes):
    for seed in range(count):
        network = random_network(seed)
        _assert_matches_dense_oracle(network, nodes)


@then('on {count:d} random fiber networks with at most {nodes:d} nodes the assembled matrix '
      'matches the dense oracle')
def step_impl(context, count, nodes):
    for seed in range(count):
        _assert_matches_dense_oracle(random_fiber_network(seed, nodes), nodes)


@then('on {count:d} random networks with at most {nodes:d} nodes the sparse solve matches a '
      'dense solve')
def step_impl(context, count, nodes):
    for seed in range(count):
        network = random_network(seed)
        assert_that(network.n_nodes, less_than_or_equal_to(nodes))
        system = build_problem(network, assemble_stiffness(network), ProblemSpec("force"))
        u = solve_reference(system)

        oracle = dense_stiffness(network)
        free = system.free
        expected = system.lifting()
        rhs = system.F[free] - oracle[free] @ expected
        expected[free] = np.linalg.solve(oracle[np.ix_(free, free)], rhs)
        assert_that(float(np.linalg.norm(u - expected)),
                    less_than_or_equal_to(1e-10 * np.linalg.norm(expected)))


@when('its stiffness matrix is assembled')
def step_impl(context):
    context.system = assemble_stiffness(context.network)


@then('translations and the linearized rotation give no forces')
def step_impl(context):
    K = context.system.K
    norm = spla.norm(K)
    tx, ty, r = rigid_modes(context.network)
    for mode, tolerance in ((tx, 1e-10), (ty, 1e-10), (r, 1e-8)):
        assert_that(float(np.linalg.norm(K @ mode)),
                    less_than_or_equal_to(tolerance * norm * np.linalg.norm(mode)))


@then('the stiffness matrix has a kernel of dimension {dimension:d}')
def step_impl(context, dimension):
    assert_that(_kernel_dimension(context.system.K), equal_to(dimension))


@then('the raw asymmetry is positive')
def step_impl(context):
    assert_that(context.system.asymmetry, greater_than(0.0))


@then('the unexpected asymmetry is below {bound:g}')
def step_impl(context, bound):
    assert_that(context.system.unexpected_asymmetry, less_than(bound))


@then('the stiffness matrix is exactly symmetric')
def step_impl(context):
    K = context.system.K
    assert_that((K - K.T).count_nonzero(), equal_to(0))


@then('assembling it with all coefficients zero raises an AssemblyError')
def step_impl(context):
    network = context.network
    empty = network.replace(edge_k=np.zeros(network.n_edges),
                            pair_kappa=np.zeros(network.n_pairs),
                            pair_eta=np.zeros(network.n_pairs))
    assert_that(calling(assemble_stiffness).with_args(empty), raises(AssemblyError))


@then('assembling it with two coinciding nodes raises an AssemblyError')
def step_impl(context):
    positions = context.network.positions.copy()
    positions[1] = positions[0]
    collapsed = context.network.replace(positions=positions)
    assert_that(calling(assemble_stiffness).with_args(collapsed), raises(AssemblyError))


@when('the right boundary is displaced by a fraction {fraction:g} of the domain')
def step_impl(context, fraction):
    spec = ProblemSpec("displace", displacement_fraction=fraction)
    context.system = build_problem(context.network, context.system, spec)


@when('a diagonal load with scale {scale:g} is applied on a fixed boundary')
def step_impl(context, scale):
    spec = ProblemSpec("force", force_scale=scale)
    context.system = build_problem(context.network, context.system, spec)


@then('every right boundary x dof is prescribed exactly {fraction:g} times {side:g}')
def step_impl(context, fraction, side):
    constrained = context.system.constrained
    right = np.flatnonzero(context.network.side_mask(net.RIGHT))
    assert_that(len(right), greater_than(0))
    for node in right:
        assert_that(constrained[2 * int(node)], equal_to(fraction * side))
        assert_that(constrained[2 * int(node) + 1], equal_to(0.0))


@then('every left boundary dof is fixed at 0')
def step_impl(context):
    constrained = context.system.constrained
    for node in np.flatnonzero(context.network.side_mask(net.LEFT)):
        assert_that(constrained[2 * int(node)], equal_to(0.0))
        assert_that(constrained[2 * int(node) + 1], equal_to(0.0))


@then('the reference solution carries the prescribed values')
def step_impl(context):
    u = solve_reference(context.system)
    system = context.system
    assert_that(np.array_equal(u[system.constrained_dofs], system.constrained_values), is_(True))
    assert_that(reference_residual(system, u), less_than_or_equal_to(1e-10))


@then('the reference solution is identically zero')
def step_impl(context):
    u = solve_reference(context.system)
    assert_that(np.count_nonzero(u), equal_to(0))


@then('no boundary dof is free')
def step_impl(context):
    boundary = np.flatnonzero(context.network.boundary_mask())
    dofs = np.concatenate([2 * boundary, 2 * boundary + 1])
    assert_that(np.intersect1d(dofs, context.system.free).size, equal_to(0))
    assert_that(len(context.system.free) + len(dofs), equal_to(context.network.n_dofs))


@then('every free node carries the same load in both axes')
def step_impl(context):
    F = context.system.F
    interior = np.flatnonzero(~context.network.boundary_mask())
    loads = np.concatenate([F[2 * interior], F[2 * interior + 1]])
    assert_that(float(loads.min()), equal_to(float(loads.max())))
    context.load = float(loads[0])


@then('the load magnitude is {scale:g} times the mean diagonal of K times the domain side')
def step_impl(context, scale):
    expected = scale * context.system.K.diagonal().mean() * context.network.domain_side
    assert_that(context.load * np.sqrt(2.0), close_to(expected, 1e-12 * expected))


@then('the reference solution has a relative residual below {tolerance:g}')
def step_impl(context, tolerance):
    u = solve_reference(context.system)
    assert_that(reference_residual(context.system, u), less_than(tolerance))


@then('the element energies of a random displacement sum to its energy in K')
def step_impl(context):
    u = np.random.default_rng(0).standard_normal(context.network.n_dofs)
    edge_q, pair_q = assembly.element_energies(context.network, u)
    total = float(u @ (context.system.K @ u))
    assert_that(float(edge_q.sum() + pair_q.sum()), close_to(total, 1e-12 * abs(total)))
