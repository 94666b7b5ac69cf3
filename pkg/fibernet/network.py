import itertools
import logging

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import connected_components

from typing import cast, Any, Dict, Iterator, List, Optional, Tuple

from .errors import NetworkError

INTERIOR = "interior"
LEFT = "left"
RIGHT = "right"
TOP = "top"
BOTTOM = "bottom"
CORNER = "corner"
BOUNDARY_TAGS = (INTERIOR, LEFT, RIGHT, TOP, BOTTOM, CORNER)
SIDES = (LEFT, RIGHT, TOP, BOTTOM)

INTRA_FIBER = "intra_fiber"
INTER_FIBER_BOND = "inter_fiber_bond"
PAIR_KINDS = (INTRA_FIBER, INTER_FIBER_BOND)

PAIR_SETS = ("all", "collinear", "perpendicular")

# Relative distance (times domain side) under which a node counts as lying on a side
BOUNDARY_TOLERANCE = 1e-6

NO_FIBER = -1


class Node:
    id: int
    position: Tuple[float, float]
    boundary_tag: str

    def __init__(self, id: int, position: Tuple[float, float], boundary_tag: str) -> None:
        self.id = id
        self.position = position
        self.boundary_tag = boundary_tag

    def __repr__(self) -> str:
        return "Node({}, {}, {})".format(self.id, self.position, self.boundary_tag)


class Edge:
    id: int
    nodes: Tuple[int, int]
    k: float
    a: float
    w: float
    fiber_id: Optional[int]

    def __init__(self, id: int, nodes: Tuple[int, int], k: float, a: float, w: float,
                 fiber_id: Optional[int] = None) -> None:
        self.id = id
        self.nodes = nodes
        self.k = k
        self.a = a
        self.w = w
        self.fiber_id = fiber_id

    def __repr__(self) -> str:
        return "Edge({}, {}, fiber={})".format(self.id, self.nodes, self.fiber_id)


class EdgePair:
    id: int
    edges: Tuple[int, int]
    center: int
    outer: Tuple[int, int]
    kappa: float
    volume: float
    eta: float
    gamma: float
    kind: str

    def __init__(self, id: int, edges: Tuple[int, int], center: int, outer: Tuple[int, int],
                 kappa: float, volume: float, eta: float, gamma: float, kind: str) -> None:
        self.id = id
        self.edges = edges
        self.center = center
        self.outer = outer
        self.kappa = kappa
        self.volume = volume
        self.eta = eta
        self.gamma = gamma
        self.kind = kind

    def __repr__(self) -> str:
        return "EdgePair({}, edges={}, center={}, {})".format(
            self.id, self.edges, self.center, self.kind)


def _frozen(values: Any, dtype: Any) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.flags.writeable = False
    return array


class Network:
    """A discrete network on the square [0, domain_side]^2.

    Nodes, edges and edge pairs are stored column-wise in read-only arrays;
    `node`, `edge` and `pair` return record views. A network never changes
    after construction, operations return new instances via `replace`.
    """

    domain_side: float
    positions: np.ndarray
    tags: np.ndarray
    edge_nodes: np.ndarray
    edge_k: np.ndarray
    edge_a: np.ndarray
    edge_w: np.ndarray
    edge_fiber: np.ndarray
    pair_edges: np.ndarray
    pair_center: np.ndarray
    pair_outer: np.ndarray
    pair_kappa: np.ndarray
    pair_volume: np.ndarray
    pair_eta: np.ndarray
    pair_gamma: np.ndarray
    pair_kind: np.ndarray
    seed: Optional[int]
    generator: Dict[str, Any]
    scheme: Dict[str, Any]
    removed: Dict[str, int]

    def __init__(self, *, domain_side: float, positions: Any, edge_nodes: Any,
                 pair_edges: Any, pair_center: Any, pair_outer: Any,
                 tags: Any = None, edge_k: Any = None, edge_a: Any = None,
                 edge_w: Any = None, edge_fiber: Any = None, pair_kappa: Any = None,
                 pair_volume: Any = None, pair_eta: Any = None, pair_gamma: Any = None,
                 pair_kind: Any = None, seed: Optional[int] = None,
                 generator: Optional[Dict[str, Any]] = None,
                 scheme: Optional[Dict[str, Any]] = None,
                 removed: Optional[Dict[str, int]] = None) -> None:
        self.domain_side = float(domain_side)
        self.positions = _frozen(positions, np.float64).reshape(-1, 2)
        self.edge_nodes = _frozen(edge_nodes, np.int64).reshape(-1, 2)
        self.pair_edges = _frozen(pair_edges, np.int64).reshape(-1, 2)
        self.pair_center = _frozen(pair_center, np.int64).reshape(-1)
        self.pair_outer = _frozen(pair_outer, np.int64).reshape(-1, 2)

        n_edges = len(self.edge_nodes)
        n_pairs = len(self.pair_edges)

        if tags is None:
            tags = boundary_tags(self.positions, self.domain_side)
        self.tags = _frozen(tags, np.int8)

        def edge_values(values: Any, default: float) -> np.ndarray:
            return _frozen(np.full(n_edges, default) if values is None else values, np.float64)

        def pair_values(values: Any, default: float) -> np.ndarray:
            return _frozen(np.full(n_pairs, default) if values is None else values, np.float64)

        self.edge_k = edge_values(edge_k, 1.0)
        self.edge_a = edge_values(edge_a, 1.0)
        self.edge_w = edge_values(edge_w, 1.0)
        self.edge_fiber = _frozen(np.full(n_edges, NO_FIBER) if edge_fiber is None
                                  else edge_fiber, np.int64)
        self.pair_kappa = pair_values(pair_kappa, 1.0)
        self.pair_volume = pair_values(pair_volume, 1.0)
        self.pair_eta = pair_values(pair_eta, 0.0)
        self.pair_gamma = pair_values(pair_gamma, 0.0)
        self.pair_kind = _frozen(np.zeros(n_pairs) if pair_kind is None else pair_kind, np.int8)

        self.seed = seed
        self.generator = dict(generator or {})
        self.scheme = dict(scheme or {})
        self.removed = dict(removed or {})

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.edge_nodes)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_edges)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def replace(self, **changes: Any) -> 'Network':
        fields = dict(domain_side=self.domain_side, positions=self.positions,
                      edge_nodes=self.edge_nodes, pair_edges=self.pair_edges,
                      pair_center=self.pair_center, pair_outer=self.pair_outer,
                      tags=self.tags, edge_k=self.edge_k, edge_a=self.edge_a,
                      edge_w=self.edge_w, edge_fiber=self.edge_fiber,
                      pair_kappa=self.pair_kappa, pair_volume=self.pair_volume,
                      pair_eta=self.pair_eta, pair_gamma=self.pair_gamma,
                      pair_kind=self.pair_kind, seed=self.seed, generator=self.generator,
                      scheme=self.scheme, removed=self.removed)
        fields.update(changes)
        return Network(**fields)

    def node(self, index: int) -> Node:
        x, y = self.positions[index]
        return Node(index, (float(x), float(y)), BOUNDARY_TAGS[self.tags[index]])

    def edge(self, index: int) -> Edge:
        i, other = self.edge_nodes[index]
        fiber = int(self.edge_fiber[index])
        return Edge(index, (int(i), int(other)), float(self.edge_k[index]),
                    float(self.edge_a[index]), float(self.edge_w[index]),
                    None if fiber == NO_FIBER else fiber)

    def pair(self, index: int) -> EdgePair:
        e_i, e_l = self.pair_edges[index]
        i, l = self.pair_outer[index]
        return EdgePair(index, (int(e_i), int(e_l)), int(self.pair_center[index]),
                        (int(i), int(l)), float(self.pair_kappa[index]),
                        float(self.pair_volume[index]), float(self.pair_eta[index]),
                        float(self.pair_gamma[index]), PAIR_KINDS[self.pair_kind[index]])

    def nodes(self) -> Iterator[Node]:
        return (self.node(i) for i in range(self.n_nodes))

    def edges(self) -> Iterator[Edge]:
        return (self.edge(i) for i in range(self.n_edges))

    def pairs(self) -> Iterator[EdgePair]:
        return (self.pair(i) for i in range(self.n_pairs))

    def edge_lengths(self) -> np.ndarray:
        vectors = self.positions[self.edge_nodes[:, 1]] - self.positions[self.edge_nodes[:, 0]]
        return cast(np.ndarray, np.hypot(vectors[:, 0], vectors[:, 1]))

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edge_nodes.ravel(), minlength=self.n_nodes)

    def side_mask(self, side: str) -> np.ndarray:
        return side_mask(self.positions, self.domain_side, side)

    def boundary_mask(self) -> np.ndarray:
        return cast(np.ndarray, self.tags != BOUNDARY_TAGS.index(INTERIOR))

    def is_connected(self) -> bool:
        if self.n_nodes == 0:
            return False
        count, _ = connected_components(_adjacency(self.n_nodes, self.edge_nodes),
                                        directed=False)
        return bool(count == 1)


def side_mask(positions: np.ndarray, domain_side: float, side: str) -> np.ndarray:
    tol = BOUNDARY_TOLERANCE * domain_side
    if side == LEFT:
        return cast(np.ndarray, positions[:, 0] <= tol)
    elif side == RIGHT:
        return cast(np.ndarray, positions[:, 0] >= domain_side - tol)
    elif side == BOTTOM:
        return cast(np.ndarray, positions[:, 1] <= tol)
    elif side == TOP:
        return cast(np.ndarray, positions[:, 1] >= domain_side - tol)
    raise ValueError("Unknown side '{}'".format(side))


def boundary_tags(positions: np.ndarray, domain_side: float) -> np.ndarray:
    masks = {side: side_mask(positions, domain_side, side) for side in SIDES}
    count = sum(mask.astype(np.int8) for mask in masks.values())
    tags = np.zeros(len(positions), dtype=np.int8)
    for side in SIDES:
        tags[masks[side]] = BOUNDARY_TAGS.index(side)
    tags[count >= 2] = BOUNDARY_TAGS.index(CORNER)
    return tags


def _adjacency(n_nodes: int, edge_nodes: np.ndarray) -> sparse.coo_matrix:
    ones = np.ones(len(edge_nodes))
    return sparse.coo_matrix((ones, (edge_nodes[:, 0], edge_nodes[:, 1])),
                             shape=(n_nodes, n_nodes))


def _classify_pair(direction_i: np.ndarray, direction_l: np.ndarray) -> str:
    # straight-through pairs open by more than 135 degrees
    if float(np.dot(direction_i, direction_l)) <= -np.sqrt(0.5):
        return "collinear"
    return "perpendicular"


def enumerate_edge_pairs(positions: np.ndarray, edge_nodes: np.ndarray,
                         pair_set: str = "all") -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One pair for every unordered couple of edges sharing a node.

    Returns (pair_edges, pair_center, pair_outer) with pairs ordered by center
    node, then by edge ids. `pair_set` keeps only straight-through
    ("collinear") or angled ("perpendicular") pairs.
    """
    if pair_set not in PAIR_SETS:
        raise ValueError("pair set must be one of {}, not '{}'".format(PAIR_SETS, pair_set))

    incident: List[List[int]] = [[] for _ in range(len(positions))]
    for edge_id, (a, b) in enumerate(edge_nodes):
        incident[a].append(edge_id)
        incident[b].append(edge_id)

    pair_edges = []
    pair_center = []
    pair_outer = []
    for center, edge_ids in enumerate(incident):
        for e_i, e_l in itertools.combinations(edge_ids, 2):
            i = _other_end(edge_nodes[e_i], center)
            l = _other_end(edge_nodes[e_l], center)
            if i == l:
                continue
            if pair_set != "all":
                d_i = positions[i] - positions[center]
                d_l = positions[l] - positions[center]
                d_i = d_i / np.hypot(*d_i)
                d_l = d_l / np.hypot(*d_l)
                if _classify_pair(d_i, d_l) != pair_set:
                    continue
            pair_edges.append((e_i, e_l))
            pair_center.append(center)
            pair_outer.append((i, l))

    return (np.array(pair_edges, dtype=np.int64).reshape(-1, 2),
            np.array(pair_center, dtype=np.int64),
            np.array(pair_outer, dtype=np.int64).reshape(-1, 2))


def _other_end(nodes: np.ndarray, center: int) -> int:
    return int(nodes[1] if nodes[0] == center else nodes[0])


def _grid_positions(m_fine: int, domain_side: float) -> np.ndarray:
    coordinates = np.arange(m_fine + 1) * (domain_side / m_fine)
    coordinates[-1] = domain_side
    x, y = np.meshgrid(coordinates, coordinates)
    return np.column_stack([x.ravel(), y.ravel()])


def _grid_edges(m_fine: int) -> np.ndarray:
    ids = np.arange((m_fine + 1) ** 2).reshape(m_fine + 1, m_fine + 1)
    horizontal = np.column_stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()])
    vertical = np.column_stack([ids[:-1, :].ravel(), ids[1:, :].ravel()])
    return np.vstack([horizontal, vertical])


def generate_structured(m_fine: int, domain_side: float, pairs: str = "all") -> Network:
    """Equidistant (m_fine+1)^2 grid with horizontal and vertical edges."""
    if m_fine < 2:
        raise ValueError("m_fine must be at least 2, got {}".format(m_fine))
    if domain_side <= 0:
        raise ValueError("domain side must be positive, got {}".format(domain_side))

    positions = _grid_positions(m_fine, domain_side)
    edge_nodes = _grid_edges(m_fine)
    pair_edges, pair_center, pair_outer = enumerate_edge_pairs(positions, edge_nodes, pairs)
    logging.debug("Structured network: {} nodes, {} edges, {} pairs".format(
        len(positions), len(edge_nodes), len(pair_edges)))

    return Network(domain_side=domain_side, positions=positions, edge_nodes=edge_nodes,
                   pair_edges=pair_edges, pair_center=pair_center, pair_outer=pair_outer,
                   generator={"type": "structured", "m_fine": m_fine, "pairs": pairs})


def generate_perturbed(m_fine: int, domain_side: float, magnitude: float, seed: int,
                       pairs: str = "all") -> Network:
    """Structured grid with every node displaced by a uniform random offset.

    Interior nodes move in both axes by at most magnitude*h, side nodes only
    along their side and corners stay put, so the square is preserved.
    Edge pairs are enumerated on the unperturbed grid.
    """
    if not 0 <= magnitude < 0.5:
        raise ValueError("perturbation magnitude must lie in [0, 0.5), got {}".format(magnitude))

    grid = generate_structured(m_fine, domain_side, pairs)
    h = domain_side / m_fine
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-magnitude * h, magnitude * h, size=(grid.n_nodes, 2))

    tags = grid.tags
    offsets[np.isin(tags, [BOUNDARY_TAGS.index(LEFT), BOUNDARY_TAGS.index(RIGHT)]), 0] = 0.0
    offsets[np.isin(tags, [BOUNDARY_TAGS.index(TOP), BOUNDARY_TAGS.index(BOTTOM)]), 1] = 0.0
    offsets[tags == BOUNDARY_TAGS.index(CORNER)] = 0.0

    generator = dict(grid.generator, type="perturbed", magnitude=magnitude)
    return grid.replace(positions=grid.positions + offsets, tags=tags, seed=seed,
                        generator=generator)


def prune(network: Network) -> Network:
    """Keep the largest component and strip unsupported dangling edges.

    A degree-1 node is removed together with its edge when no edge pair with
    a positive angular stiffness holds that edge at its other end; this
    repeats until nothing changes.
    Ids are renumbered densely, counts of removed items are recorded.
    """
    n = network.n_nodes
    edge_nodes = network.edge_nodes
    if n == 0:
        raise NetworkError("Cannot prune an empty network")

    _, labels = connected_components(_adjacency(n, edge_nodes), directed=False)
    counts = np.bincount(labels)
    node_keep = labels == int(np.argmax(counts))
    component_removed = int(n - node_keep.sum())

    edge_keep = node_keep[edge_nodes[:, 0]] & node_keep[edge_nodes[:, 1]]
    pair_keep = edge_keep[network.pair_edges].all(axis=1)
    stiff = (network.pair_kappa > 0) & (network.pair_volume > 0)

    dangling_removed = 0
    while True:
        degree = np.bincount(edge_nodes[edge_keep].ravel(), minlength=n)
        supported = np.zeros((network.n_edges, 2), dtype=bool)
        for column in range(2):
            kept_pairs = np.flatnonzero(pair_keep & stiff)
            edges = network.pair_edges[kept_pairs, column]
            centers = network.pair_center[kept_pairs]
            supported[edges[edge_nodes[edges, 0] == centers], 0] = True
            supported[edges[edge_nodes[edges, 1] == centers], 1] = True

        tip = degree == 1
        # a tip at end 0 needs support at end 1 and vice versa
        loose = edge_keep & ((tip[edge_nodes[:, 0]] & ~supported[:, 1]) |
                             (tip[edge_nodes[:, 1]] & ~supported[:, 0]))
        if not loose.any():
            break

        edge_keep &= ~loose
        pair_keep &= edge_keep[network.pair_edges].all(axis=1)
        orphaned = node_keep & (np.bincount(edge_nodes[edge_keep].ravel(), minlength=n) == 0)
        dangling_removed += int(orphaned.sum())
        node_keep &= ~orphaned

    if not node_keep.any():
        raise NetworkError("Pruning removed every node of the network")

    new_node = np.cumsum(node_keep) - 1
    new_edge = np.cumsum(edge_keep) - 1
    kept_pairs = np.flatnonzero(pair_keep)

    removed = dict(network.removed)
    removed["component_nodes"] = removed.get("component_nodes", 0) + component_removed
    removed["dangling_nodes"] = removed.get("dangling_nodes", 0) + dangling_removed
    removed["edges"] = removed.get("edges", 0) + int((~edge_keep).sum())
    removed["pairs"] = removed.get("pairs", 0) + int((~pair_keep).sum())

    if component_removed or dangling_removed:
        logging.info("Pruned {} disconnected and {} dangling nodes".format(
            component_removed, dangling_removed))

    return network.replace(
        positions=network.positions[node_keep],
        tags=network.tags[node_keep],
        edge_nodes=new_node[edge_nodes[edge_keep]],
        edge_k=network.edge_k[edge_keep],
        edge_a=network.edge_a[edge_keep],
        edge_w=network.edge_w[edge_keep],
        edge_fiber=network.edge_fiber[edge_keep],
        pair_edges=new_edge[network.pair_edges[kept_pairs]],
        pair_center=new_node[network.pair_center[kept_pairs]],
        pair_outer=new_node[network.pair_outer[kept_pairs]],
        pair_kappa=network.pair_kappa[kept_pairs],
        pair_volume=network.pair_volume[kept_pairs],
        pair_eta=network.pair_eta[kept_pairs],
        pair_gamma=network.pair_gamma[kept_pairs],
        pair_kind=network.pair_kind[kept_pairs],
        removed=removed)
