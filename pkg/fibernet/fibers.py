"""Unordered fiber networks.

Straight fibers of equal length are dropped with uniformly random midpoint
and orientation, clipped to the domain and cut into segments. Every crossing
of two fibers becomes a node shared by both, joined by bond pairs.
"""

import logging

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import connected_components

from typing import cast, Dict, List, Optional, Tuple

from . import network as net
from . import progress
from .errors import NetworkError

# Relative distance (times domain side) under which two points along a fiber coincide
GEOMETRY_TOLERANCE = 1e-9

BOND_PAIR_MODES = ("all", "single")

_ENDPOINT = 0
_CROSSING = 1
_JOINT = 2

_MAX_TARGET_ITERATIONS = 40


def _merge_roots(n_nodes: int, merges: List[Tuple[int, int]]) -> np.ndarray:
    """Lowest node id of the merged group of every node."""
    if n_nodes == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = np.array(merges, dtype=np.int64).reshape(-1, 2)
    graph = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                              shape=(n_nodes, n_nodes))
    _, labels = connected_components(graph, directed=False)
    roots = np.full(labels.max() + 1, n_nodes, dtype=np.int64)
    np.minimum.at(roots, labels, np.arange(n_nodes))
    return cast(np.ndarray, roots[labels])


def place_fibers(domain_side: float, fiber_count: int, fiber_length: float,
                 seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Random fibers as (count, 2, 2) unclipped endpoints plus clipped endpoints.

    Each fiber draws one (x, y, angle) triple so the first k fibers do not
    depend on how many fibers are placed in total.
    """
    rng = np.random.default_rng(seed)
    draws = rng.uniform(0.0, 1.0, size=(fiber_count, 3))
    middle = draws[:, :2] * domain_side
    angle = draws[:, 2] * np.pi
    half = 0.5 * fiber_length * np.column_stack([np.cos(angle), np.sin(angle)])
    raw = np.stack([middle - half, middle + half], axis=1)
    return raw, clip_segments(raw, domain_side)


def clip_segments(segments: np.ndarray, domain_side: float) -> np.ndarray:
    """Liang-Barsky clipping of segments whose midpoint lies inside the square."""
    start = segments[:, 0]
    delta = segments[:, 1] - start
    t_low = np.zeros(len(segments))
    t_high = np.ones(len(segments))
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis in range(2):
            d = delta[:, axis]
            for bound in (0.0, domain_side):
                t = (bound - start[:, axis]) / d
                entering = np.where(bound == 0.0, d > 0, d < 0)
                moving = d != 0
                t_low = np.where(moving & entering, np.maximum(t_low, t), t_low)
                t_high = np.where(moving & ~entering, np.minimum(t_high, t), t_high)

    clipped = np.stack([start + t_low[:, None] * delta, start + t_high[:, None] * delta], axis=1)
    tol = net.BOUNDARY_TOLERANCE * domain_side
    clipped = np.where(np.abs(clipped) <= tol, 0.0, clipped)
    clipped = np.where(np.abs(clipped - domain_side) <= tol, domain_side, clipped)
    return cast(np.ndarray, np.clip(clipped, 0.0, domain_side))


def _crossings(segments: np.ndarray, first: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Crossings of segment `first` with all later segments: (others, t, u)."""
    p = segments[first, 0]
    r = segments[first, 1] - p
    q = segments[first + 1:, 0]
    s = segments[first + 1:, 1] - q
    denominator = r[0] * s[:, 1] - r[1] * s[:, 0]
    offset = q - p
    scale = np.hypot(*r) * np.hypot(s[:, 0], s[:, 1])
    parallel = np.abs(denominator) <= 1e-14 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offset[:, 0] * s[:, 1] - offset[:, 1] * s[:, 0]) / denominator
        u = (offset[:, 0] * r[1] - offset[:, 1] * r[0]) / denominator
    hit = ~parallel & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    others = np.flatnonzero(hit) + first + 1
    return others, t[hit], u[hit]


def build_fiber_network(domain_side: float, segments: np.ndarray, segments_per_fiber: int,
                        joints: Optional[List[np.ndarray]] = None,
                        bond_pairs: str = "all") -> net.Network:
    """Network from already clipped fibers given as (count, 2, 2) endpoints.

    `joints` optionally lists, per fiber, the parameters in (0, 1) of its
    internal segment joints; by default each fiber is cut into
    `segments_per_fiber` equal pieces. The result is not pruned.
    """
    if segments_per_fiber < 1:
        raise ValueError("segments_per_fiber must be at least 1, got {}".format(
            segments_per_fiber))
    if bond_pairs not in BOND_PAIR_MODES:
        raise ValueError("bond_pairs must be one of {}, not '{}'".format(
            BOND_PAIR_MODES, bond_pairs))

    eps = GEOMETRY_TOLERANCE * domain_side
    lengths = np.hypot(*(segments[:, 1] - segments[:, 0]).T)
    fibers = [f for f in range(len(segments)) if lengths[f] > eps]
    if joints is None:
        cuts = np.arange(1, segments_per_fiber) / segments_per_fiber
        joints = [cuts for _ in range(len(segments))]

    positions: List[np.ndarray] = []
    along: Dict[int, List[Tuple[float, int, int]]] = {f: [] for f in fibers}

    def new_node(point: np.ndarray) -> int:
        positions.append(np.asarray(point, dtype=np.float64))
        return len(positions) - 1

    endpoints: Dict[int, Tuple[int, int]] = {}
    for f in fibers:
        endpoints[f] = (new_node(segments[f, 0]), new_node(segments[f, 1]))
        along[f].append((0.0, endpoints[f][0], _ENDPOINT))
        along[f].append((1.0, endpoints[f][1], _ENDPOINT))

    active = segments[fibers]
    crossing_count = 0
    for position, f in enumerate(fibers):
        others, t_values, u_values = _crossings(active, position)
        for other_position, t, u in zip(others, t_values, u_values):
            g = fibers[other_position]
            if t * lengths[f] < eps:
                node = endpoints[f][0]
            elif (1 - t) * lengths[f] < eps:
                node = endpoints[f][1]
            elif u * lengths[g] < eps:
                node = endpoints[g][0]
            elif (1 - u) * lengths[g] < eps:
                node = endpoints[g][1]
            else:
                node = new_node(segments[f, 0] + t * (segments[f, 1] - segments[f, 0]))
            for fiber, parameter in ((f, float(t)), (g, float(u))):
                if all(entry[1] != node for entry in along[fiber]):
                    along[fiber].append((parameter, node, _CROSSING))
            crossing_count += 1

    for f in fibers:
        for parameter in joints[f]:
            point = segments[f, 0] + parameter * (segments[f, 1] - segments[f, 0])
            along[f].append((float(parameter), new_node(point), _JOINT))

    merges: List[Tuple[int, int]] = []
    chains: Dict[int, List[int]] = {}
    for f in fibers:
        entries = sorted(along[f], key=lambda entry: (entry[0], entry[2], entry[1]))
        chain: List[Tuple[float, int, int]] = []
        for entry in entries:
            if chain and (entry[0] - chain[-1][0]) * lengths[f] < eps:
                previous = chain[-1]
                if entry[2] == _JOINT:
                    continue
                if previous[2] == _JOINT:
                    chain[-1] = entry
                    continue
                merges.append((previous[1], entry[1]))
                continue
            chain.append(entry)
        chains[f] = [entry[1] for entry in chain]

    root = _merge_roots(len(positions), merges)
    edge_nodes: List[Tuple[int, int]] = []
    edge_fiber: List[int] = []
    edge_index: Dict[Tuple[int, int], int] = {}
    fiber_edges: Dict[int, List[int]] = {}
    for f in fibers:
        fiber_edges[f] = []
        chain_nodes = [int(root[node]) for node in chains[f]]
        for a, b in zip(chain_nodes[:-1], chain_nodes[1:]):
            if a == b:
                continue
            key = (min(a, b), max(a, b))
            if key not in edge_index:
                edge_index[key] = len(edge_nodes)
                edge_nodes.append((a, b))
                edge_fiber.append(f)
            fiber_edges[f].append(edge_index[key])

    used = np.unique(np.array(edge_nodes, dtype=np.int64).ravel())
    renumber = {int(old): new for new, old in enumerate(used)}
    node_positions = np.array([positions[old] for old in used]).reshape(-1, 2)
    edges = np.array([(renumber[a], renumber[b]) for a, b in edge_nodes],
                     dtype=np.int64).reshape(-1, 2)

    pair_edges, pair_center, pair_outer, pair_kind = _fiber_pairs(
        edges, fiber_edges, np.array(edge_fiber, dtype=np.int64), bond_pairs)

    logging.debug("Fiber network: {} fibers, {} crossings, {} nodes, {} edges, {} pairs".format(
        len(fibers), crossing_count, len(node_positions), len(edges), len(pair_edges)))

    return net.Network(domain_side=domain_side, positions=node_positions, edge_nodes=edges,
                       edge_fiber=edge_fiber, pair_edges=pair_edges, pair_center=pair_center,
                       pair_outer=pair_outer, pair_kind=pair_kind,
                       generator={"type": "fiber", "fiber_count": len(segments),
                                  "segments_per_fiber": segments_per_fiber,
                                  "bond_pairs": bond_pairs})


def _fiber_pairs(edges: np.ndarray, fiber_edges: Dict[int, List[int]], edge_fiber: np.ndarray,
                 bond_pairs: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pair_edges: List[Tuple[int, int]] = []
    pair_center: List[int] = []
    pair_outer: List[Tuple[int, int]] = []
    pair_kind: List[int] = []

    def add(e_i: int, e_l: int, kind: str) -> None:
        shared = set(edges[e_i]) & set(edges[e_l])
        if len(shared) != 1:
            return
        center = shared.pop()
        i = net._other_end(edges[e_i], center)
        l = net._other_end(edges[e_l], center)
        if i == l:
            return
        pair_edges.append((e_i, e_l))
        pair_center.append(int(center))
        pair_outer.append((i, l))
        pair_kind.append(net.PAIR_KINDS.index(kind))

    for f in sorted(fiber_edges):
        chain = fiber_edges[f]
        for e_i, e_l in zip(chain[:-1], chain[1:]):
            if e_i != e_l:
                add(e_i, e_l, net.INTRA_FIBER)

    incident: Dict[int, List[int]] = {}
    for edge_id, (a, b) in enumerate(edges):
        incident.setdefault(int(a), []).append(edge_id)
        incident.setdefault(int(b), []).append(edge_id)

    for node in sorted(incident):
        by_fiber: Dict[int, List[int]] = {}
        for edge_id in incident[node]:
            by_fiber.setdefault(int(edge_fiber[edge_id]), []).append(edge_id)
        owners = sorted(by_fiber)
        for position, fiber_a in enumerate(owners):
            for fiber_b in owners[position + 1:]:
                combinations = [(e_i, e_l) for e_i in by_fiber[fiber_a]
                                for e_l in by_fiber[fiber_b]]
                if bond_pairs == "single":
                    combinations = combinations[:1]
                for e_i, e_l in combinations:
                    add(e_i, e_l, net.INTER_FIBER_BOND)

    return (np.array(pair_edges, dtype=np.int64).reshape(-1, 2),
            np.array(pair_center, dtype=np.int64),
            np.array(pair_outer, dtype=np.int64).reshape(-1, 2),
            np.array(pair_kind, dtype=np.int8))


def _missing_sides(network: net.Network) -> List[str]:
    return [side for side in net.SIDES if not network.side_mask(side).any()]


def generate_fiber_network(domain_side: float, fiber_count: int, fiber_length: float,
                           segments_per_fiber: int, seed: int,
                           bond_pairs: str = "all") -> net.Network:
    if fiber_count < 2:
        raise ValueError("fiber_count must be at least 2, got {}".format(fiber_count))
    if not 0 < fiber_length < domain_side:
        raise ValueError("fiber_length must lie in (0, domain_side), got {}".format(
            fiber_length))

    raw, clipped = place_fibers(domain_side, fiber_count, fiber_length, seed)

    # joints are spaced along the unclipped fiber, only those left after clipping survive
    joints = []
    cuts = np.arange(1, segments_per_fiber) / segments_per_fiber
    for f in range(fiber_count):
        raw_delta = raw[f, 1] - raw[f, 0]
        axis = int(np.argmax(np.abs(raw_delta)))
        start = (clipped[f, 0, axis] - raw[f, 0, axis]) / raw_delta[axis]
        end = (clipped[f, 1, axis] - raw[f, 0, axis]) / raw_delta[axis]
        inside = cuts[(cuts > start) & (cuts < end)]
        joints.append((inside - start) / (end - start) if end > start else inside[:0])

    network = build_fiber_network(domain_side, clipped, segments_per_fiber, joints, bond_pairs)
    network = net.prune(network)

    missing = _missing_sides(network)
    if missing:
        raise NetworkError("Fiber network with {} fibers does not reach the {} side(s); "
                           "increase fiber_count or fiber_length".format(
                               fiber_count, ", ".join(missing)))

    generator = dict(network.generator, fiber_count=fiber_count, fiber_length=fiber_length)
    return network.replace(seed=seed, generator=generator)


def fiber_count_for_target(target_nodes: int, domain_side: float, fiber_length: float,
                           segments_per_fiber: int, seed: int,
                           bond_pairs: str = "all") -> int:
    """Smallest fiber count whose pruned network has at least `target_nodes` nodes."""
    if target_nodes < 2:
        raise ValueError("target_nodes must be at least 2, got {}".format(target_nodes))

    cache: Dict[int, int] = {}

    def node_count(count: int) -> int:
        if count not in cache:
            try:
                cache[count] = generate_fiber_network(domain_side, count, fiber_length,
                                                      segments_per_fiber, seed,
                                                      bond_pairs).n_nodes
            except NetworkError:
                cache[count] = 0
            logging.debug("fiber_count={} gives {} nodes".format(count, cache[count]))
        return cache[count]

    bar = progress.bar(_MAX_TARGET_ITERATIONS, "fiber count")
    low, high = 1, 2
    iterations = 0
    while node_count(high) < target_nodes:
        low, high = high, high * 2
        iterations += 1
        bar.update(min(iterations, _MAX_TARGET_ITERATIONS))
        if iterations >= _MAX_TARGET_ITERATIONS:
            raise NetworkError("No fiber count reaches {} nodes".format(target_nodes))

    while high - low > 1:
        middle = (low + high) // 2
        if node_count(middle) >= target_nodes:
            high = middle
        else:
            low = middle
        iterations += 1
        bar.update(min(iterations, _MAX_TARGET_ITERATIONS))
    bar.finish()

    logging.info("Using {} fibers for a target of {} nodes ({} nodes)".format(
        high, target_nodes, node_count(high)))
    return high
