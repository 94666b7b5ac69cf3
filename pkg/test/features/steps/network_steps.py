import math
import os
import tempfile

import numpy as np
from behave import *
from hamcrest import *

from fibernet import fibers
from fibernet import network as net
from fibernet import storage
from fibernet.coefficients import (FiberScheme, HomogeneousScheme, RandomUniformScheme,
                                   assign_coefficients)
from oracles import RANDOM_RANGES, networks_identical, random_network


@given('a structured network with m_fine {m:d} on a domain of side {side:g}')
def step_impl(context, m, side):
    context.network = net.generate_structured(m, side)
    context.regenerate = lambda: net.generate_structured(m, side)


@given('a structured network with m_fine {m:d} on a domain of side {side:g} and collinear pairs')
def step_impl(context, m, side):
    context.network = net.generate_structured(m, side, pairs="collinear")


@given('a perturbed network with m_fine {m:d}, magnitude {magnitude:g} and seed {seed:d}')
def step_impl(context, m, magnitude, seed):
    context.network = net.generate_perturbed(m, 1.0, magnitude, seed)
    context.h = 1.0 / m
    context.regenerate = lambda: net.generate_perturbed(m, 1.0, magnitude, seed)


@given('a perturbed network with random coefficients and seed {seed:d}')
def step_impl(context, seed):
    context.network = random_network(seed, m_fine=6)


@given('a structured network with m_fine 2 and an unsupported edge hanging off the center')
def step_impl(context):
    grid = net.generate_structured(2, 1.0)
    context.network = grid.replace(
        positions=np.vstack([grid.positions, [[0.25, 0.25]]]),
        tags=np.append(grid.tags, net.BOUNDARY_TAGS.index(net.INTERIOR)),
        edge_nodes=np.vstack([grid.edge_nodes, [[4, 9]]]),
        edge_k=np.ones(13), edge_a=np.ones(13), edge_w=np.ones(13),
        edge_fiber=np.full(13, net.NO_FIBER))


@given('a structured network with m_fine 2 and a dangling edge held by a pair with kappa '
       '{kappa:g}')
def step_impl(context, kappa):
    grid = net.generate_structured(2, 1.0)
    center = 4
    held = int(np.flatnonzero((grid.edge_nodes == center).any(axis=1))[0])
    outer = int(grid.edge_nodes[held][grid.edge_nodes[held] != center][0])
    n_pairs = grid.n_pairs
    context.network = grid.replace(
        positions=np.vstack([grid.positions, [[0.25, 0.25]]]),
        tags=np.append(grid.tags, net.BOUNDARY_TAGS.index(net.INTERIOR)),
        edge_nodes=np.vstack([grid.edge_nodes, [[center, 9]]]),
        edge_k=np.ones(13), edge_a=np.ones(13), edge_w=np.ones(13),
        edge_fiber=np.full(13, net.NO_FIBER),
        pair_edges=np.vstack([grid.pair_edges, [[held, 12]]]),
        pair_center=np.append(grid.pair_center, center),
        pair_outer=np.vstack([grid.pair_outer, [[outer, 9]]]),
        pair_kappa=np.append(grid.pair_kappa, kappa),
        pair_volume=np.ones(n_pairs + 1), pair_eta=np.zeros(n_pairs + 1),
        pair_gamma=np.zeros(n_pairs + 1), pair_kind=np.zeros(n_pairs + 1))


@given('two fibers crossing at the center of the unit square')
def step_impl(context):
    segments = np.array([[[0.1, 0.5], [0.9, 0.5]], [[0.5, 0.1], [0.5, 0.9]]])
    context.network = fibers.build_fiber_network(1.0, segments, 4)


@given('three fibers crossing at the center of the unit square')
def step_impl(context):
    segments = np.array([[[0.1, 0.5], [0.9, 0.5]], [[0.5, 0.1], [0.5, 0.9]],
                         [[0.2, 0.2], [0.8, 0.8]]])
    context.network = fibers.build_fiber_network(1.0, segments, 4)


@given('two parallel fibers that do not touch')
def step_impl(context):
    segments = np.array([[[0.1, 0.3], [0.9, 0.3]], [[0.1, 0.7], [0.6, 0.7]]])
    joints = [np.array([0.25, 0.5, 0.75]), np.array([0.5])]
    context.network = fibers.build_fiber_network(1.0, segments, 1, joints)


@given('a fiber network with {count:d} fibers of length {length:g} and seed {seed:d}')
def step_impl(context, count, length, seed):
    context.network = fibers.generate_fiber_network(1.0, count, length, 8, seed)
    context.regenerate = lambda: fibers.generate_fiber_network(1.0, count, length, 8, seed)


@when('the same network is generated again')
def step_impl(context):
    context.other = context.regenerate()


@when('the network is pruned')
def step_impl(context):
    context.network = net.prune(context.network)


@when('a perturbed network with magnitude {magnitude:g} is requested')
def step_impl(context, magnitude):
    try:
        net.generate_perturbed(8, 1.0, magnitude, 0)
        context.error = None
    except Exception as err:
        context.error = err


@when('the fiber count is chosen for {target:d} nodes with fibers of length {length:g} '
      'and seed {seed:d}')
def step_impl(context, target, length, seed):
    context.count = fibers.fiber_count_for_target(target, 1.0, length, 8, seed)
    context.node_count = lambda count: fibers.generate_fiber_network(
        1.0, count, length, 8, seed).n_nodes


@when('homogeneous coefficients with k {k:g} are assigned')
def step_impl(context, k):
    scheme = HomogeneousScheme(k=k, a=1e-3, w=1e-3, kappa=10.0, eta=0.1, gamma=0.3)
    context.network = assign_coefficients(context.network, scheme, 0)


@when('random coefficients with k between {low:g} and {high:g} are assigned with seed {seed:d}')
def step_impl(context, low, high, seed):
    ranges = dict(RANDOM_RANGES, k=(low, high))
    context.assign_random = lambda: assign_coefficients(context.network,
                                                        RandomUniformScheme(ranges), seed)
    context.network = context.assign_random()


@when('fiber coefficients with bond kappa ten times intra kappa are assigned')
def step_impl(context):
    scheme = FiberScheme({"k": 3e10, "a": 1.5e-10, "w": 3e-5},
                         {"kappa": 1e10, "eta": 3e9, "gamma": 0.3},
                         {"kappa": 1e11, "eta": 3e9, "gamma": 0.0}, thickness=5e-6)
    context.network = assign_coefficients(context.network, scheme, 0)


@when('the network is written to a file and read back')
def step_impl(context):
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, "network.json")
        storage.write_network(path, context.network)
        context.other = storage.read_network(path)


@then('the network has {nodes:d} nodes and {edges:d} edges')
def step_impl(context, nodes, edges):
    assert_that(context.network.n_nodes, equal_to(nodes))
    assert_that(context.network.n_edges, equal_to(edges))


@then('the network has {pairs:d} edge pairs')
def step_impl(context, pairs):
    assert_that(context.network.n_pairs, equal_to(pairs))


@then('the node coordinates are exactly 0, 0.5 and 1')
def step_impl(context):
    assert_that(sorted(set(context.network.positions.ravel().tolist())),
                equal_to([0.0, 0.5, 1.0]))


@then('the center node carries {count:d} edge pairs')
def step_impl(context, count):
    center = int(np.flatnonzero((context.network.positions == [0.5, 0.5]).all(axis=1))[0])
    assert_that(int((context.network.pair_center == center).sum()), equal_to(count))


@then('every edge pair is straight')
def step_impl(context):
    network = context.network
    for pair in network.pairs():
        d_i = network.positions[pair.outer[0]] - network.positions[pair.center]
        d_l = network.positions[pair.outer[1]] - network.positions[pair.center]
        cosine = np.dot(d_i, d_l) / (np.hypot(*d_i) * np.hypot(*d_l))
        assert_that(cosine, close_to(-1.0, 1e-12))


@then('{count:d} dangling nodes were removed')
def step_impl(context, count):
    assert_that(context.network.removed.get("dangling_nodes", 0), equal_to(count))


@then('its node positions equal those of the structured grid with m_fine {m:d}')
def step_impl(context, m):
    grid = net.generate_structured(m, 1.0)
    assert_that(np.array_equal(context.network.positions, grid.positions), is_(True))
    assert_that(np.array_equal(context.network.edge_nodes, grid.edge_nodes), is_(True))


@then('both networks are identical')
def step_impl(context):
    assert_that(networks_identical(context.network, context.other), is_(True))


@then('every edge length lies between 0.5 h and 1.5 h sqrt(2)')
def step_impl(context):
    lengths = context.network.edge_lengths()
    assert_that(float(lengths.min()), greater_than_or_equal_to(0.5 * context.h))
    assert_that(float(lengths.max()), less_than_or_equal_to(1.5 * context.h * math.sqrt(2)))


@then('every boundary node stays on its side')
def step_impl(context):
    network = context.network
    positions = network.positions
    for side, axis, value in ((net.LEFT, 0, 0.0), (net.RIGHT, 0, 1.0),
                              (net.BOTTOM, 1, 0.0), (net.TOP, 1, 1.0)):
        tagged = network.tags == net.BOUNDARY_TAGS.index(side)
        assert_that(int(tagged.sum()), greater_than(0))
        assert_that(np.all(positions[tagged, axis] == value), is_(True))
    corners = network.tags == net.BOUNDARY_TAGS.index(net.CORNER)
    assert_that(int(corners.sum()), equal_to(4))


@then('a ValueError is raised')
def step_impl(context):
    assert_that(context.error, instance_of(ValueError))


def _shared_node(network):
    owners = {}
    for edge in network.edges():
        for node in edge.nodes:
            owners.setdefault(node, set()).add(edge.fiber_id)
    return [node for node, fiber_ids in owners.items() if len(fiber_ids) >= 2]


@then('exactly 1 node is shared by both fibers')
def step_impl(context):
    shared = _shared_node(context.network)
    assert_that(shared, has_length(1))
    context.shared = shared[0]
    assert_that(context.network.positions[context.shared].tolist(),
                contains_exactly(close_to(0.5, 1e-12), close_to(0.5, 1e-12)))


@then('exactly 1 node is shared, by all {count:d} fibers')
def step_impl(context, count):
    network = context.network
    shared = _shared_node(network)
    assert_that(shared, has_length(1))
    owners = {int(f) for nodes, f in zip(network.edge_nodes, network.edge_fiber)
              if shared[0] in nodes}
    assert_that(owners, has_length(count))
    assert_that(network.positions[shared[0]].tolist(),
                contains_exactly(close_to(0.5, 1e-12), close_to(0.5, 1e-12)))


@then('each fiber has an edge ending at the shared node on either side')
def step_impl(context):
    network = context.network
    incident = [edge for edge in network.edges() if context.shared in edge.nodes]
    assert_that(incident, has_length(4))
    for fiber_id in (0, 1):
        assert_that([edge for edge in incident if edge.fiber_id == fiber_id], has_length(2))


@then('at least 1 inter_fiber_bond pair is centered at the shared node')
def step_impl(context):
    bonds = [pair for pair in context.network.pairs()
             if pair.center == context.shared and pair.kind == net.INTER_FIBER_BOND]
    assert_that(len(bonds), greater_than_or_equal_to(1))


@then('the network is connected')
def step_impl(context):
    assert_that(context.network.is_connected(), is_(True))


@then('only the nodes of one fiber are left')
def step_impl(context):
    assert_that(context.network.n_nodes, equal_to(5))
    assert_that(np.all(context.network.positions[:, 1] == 0.3), is_(True))
    assert_that(context.network.removed["component_nodes"], equal_to(3))


@then('the network touches all four sides')
def step_impl(context):
    for side in net.SIDES:
        assert_that(bool(context.network.side_mask(side).any()), is_(True))


@then('every node of degree 3 or more belongs to at least 2 fibers')
def step_impl(context):
    network = context.network
    degrees = network.degrees()
    owners = {}
    for nodes, fiber_id in zip(network.edge_nodes, network.edge_fiber):
        for node in nodes:
            owners.setdefault(int(node), set()).add(int(fiber_id))
    for node in np.flatnonzero(degrees >= 3):
        assert_that(len(owners[int(node)]), greater_than_or_equal_to(2))


@then('the chosen fiber count gives at least {target:d} nodes')
def step_impl(context, target):
    assert_that(context.node_count(context.count), greater_than_or_equal_to(target))


@then('one fiber less gives fewer than {target:d} nodes')
def step_impl(context, target):
    assert_that(context.node_count(context.count - 1), less_than(target))


@then('every edge has k exactly {k:g}')
def step_impl(context, k):
    assert_that(np.all(context.network.edge_k == k), is_(True))


@then('every edge k lies within {low:g} and {high:g}')
def step_impl(context, low, high):
    assert_that(float(context.network.edge_k.min()), greater_than_or_equal_to(low))
    assert_that(float(context.network.edge_k.max()), less_than_or_equal_to(high))


@then('assigning them again with seed {seed:d} gives identical coefficients')
def step_impl(context, seed):
    again = context.assign_random()
    assert_that(networks_identical(context.network, again), is_(True))


@then('every inter_fiber_bond pair has ten times the kappa of every intra_fiber pair')
def step_impl(context):
    network = context.network
    bond = network.pair_kind == net.PAIR_KINDS.index(net.INTER_FIBER_BOND)
    assert_that(int(bond.sum()), greater_than(0))
    assert_that(int((~bond).sum()), greater_than(0))
    assert_that(np.all(network.pair_kappa[bond] == 10 * network.pair_kappa[~bond].max()),
                is_(True))
    assert_that(network.pair_kappa[~bond].min(), equal_to(network.pair_kappa[~bond].max()))
