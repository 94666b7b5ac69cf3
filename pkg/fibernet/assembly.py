"""Stiffness assembly for the three force-displacement relations.

Degrees of freedom are interleaved, dof 2*node + axis. Every element block
maps displacements to the negated nodal forces, K u = -F_internal, so edge
extension, angular deviation and the Poisson effect all add restoring
stiffness.
"""

import logging

import numpy as np
import scipy.sparse as sparse

from typing import cast, Any, Dict, Optional, Sequence, Tuple

from . import network as net
from .errors import AssemblyError
from .network import Edge, EdgePair, Network

# Counterclockwise quarter rotation
R90 = np.array([[0.0, -1.0], [1.0, 0.0]])

DEFAULT_ASYMMETRY_BOUND = 1e-6

FIXED_BOUNDARY_FORCE = "force"
DISPLACED_RIGHT_BOUNDARY = "displace"
PROBLEM_KINDS = (FIXED_BOUNDARY_FORCE, DISPLACED_RIGHT_BOUNDARY)

# Pairs whose edges leave the center within this angle of each other overlap
_OVERLAP_COSINE = 1.0 - 1e-12


class ProblemSpec:
    kind: str
    force_scale: float
    displacement_fraction: float

    def __init__(self, kind: str, force_scale: float = 1e-3,
                 displacement_fraction: float = 0.10) -> None:
        if kind not in PROBLEM_KINDS:
            raise ValueError("problem kind must be one of {}, not '{}'".format(
                PROBLEM_KINDS, kind))
        if not force_scale > 0:
            raise ValueError("force_scale must be positive, got {}".format(force_scale))
        if not displacement_fraction >= 0:
            raise ValueError("displacement_fraction must be non-negative, got {}".format(
                displacement_fraction))
        self.kind = kind
        self.force_scale = force_scale
        self.displacement_fraction = displacement_fraction

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "force_scale": self.force_scale,
                "displacement_fraction": self.displacement_fraction}


class StiffnessSystem:
    """K over 2n dofs plus, once a problem is built, F and the constraints.

    `constrained_dofs` is sorted; `free` lists every other dof in order.
    """

    K: sparse.csr_matrix
    F: np.ndarray
    constrained_dofs: np.ndarray
    constrained_values: np.ndarray
    free: np.ndarray
    asymmetry: float
    unexpected_asymmetry: float
    problem: Optional[ProblemSpec]

    def __init__(self, K: sparse.csr_matrix, F: Optional[np.ndarray] = None,
                 constrained_dofs: Optional[np.ndarray] = None,
                 constrained_values: Optional[np.ndarray] = None,
                 asymmetry: float = 0.0, unexpected_asymmetry: float = 0.0,
                 problem: Optional[ProblemSpec] = None) -> None:
        n_dofs = K.shape[0]
        self.K = K
        self.F = np.zeros(n_dofs) if F is None else np.asarray(F, dtype=np.float64)
        if constrained_dofs is None:
            constrained_dofs = np.zeros(0, dtype=np.int64)
            constrained_values = np.zeros(0)
        order = np.argsort(constrained_dofs, kind="stable")
        self.constrained_dofs = np.asarray(constrained_dofs, dtype=np.int64)[order]
        self.constrained_values = np.asarray(constrained_values, dtype=np.float64)[order]
        mask = np.ones(n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        self.free = np.flatnonzero(mask)
        self.asymmetry = asymmetry
        self.unexpected_asymmetry = unexpected_asymmetry
        self.problem = problem
        self._free_matrix: Optional[sparse.csr_matrix] = None

    @property
    def n_dofs(self) -> int:
        return cast(int, self.K.shape[0])

    @property
    def constrained(self) -> Dict[int, float]:
        return {int(d): float(v) for d, v in zip(self.constrained_dofs, self.constrained_values)}

    def lifting(self) -> np.ndarray:
        """Full-length vector carrying the prescribed values, zero on free dofs."""
        u = np.zeros(self.n_dofs)
        u[self.constrained_dofs] = self.constrained_values
        return u

    def free_matrix(self) -> sparse.csr_matrix:
        if self._free_matrix is None:
            self._free_matrix = self.K[self.free][:, self.free].tocsr()
        return self._free_matrix

    def effective_load(self) -> np.ndarray:
        """Right-hand side on free dofs after lifting the prescribed values."""
        return cast(np.ndarray, self.F[self.free] - (self.K @ self.lifting())[self.free])


def _unit(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.hypot(vectors[:, 0], vectors[:, 1])
    if np.any(lengths <= 0):
        raise AssemblyError("Zero-length edge in assembly")
    return vectors / lengths[:, None], lengths


def _outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return cast(np.ndarray, np.einsum("pi,pj->pij", u, v))


def edge_blocks(positions: np.ndarray, edge_nodes: np.ndarray, k: np.ndarray,
                a: np.ndarray) -> np.ndarray:
    """(m, 4, 4) blocks s*[[D, -D], [-D, D]] with s = k a / L and D = d d^T."""
    d, length = _unit(positions[edge_nodes[:, 1]] - positions[edge_nodes[:, 0]])
    D = _outer(d, d) * (k * a / length)[:, None, None]
    blocks = np.empty((len(edge_nodes), 4, 4))
    blocks[:, :2, :2] = D
    blocks[:, 2:, 2:] = D
    blocks[:, :2, 2:] = -D
    blocks[:, 2:, :2] = -D
    return blocks


class PairGeometry:
    """Directions, normals and lengths of edge pairs seen from their center."""

    d_i: np.ndarray
    d_l: np.ndarray
    n_i: np.ndarray
    n_l: np.ndarray
    length_i: np.ndarray
    length_l: np.ndarray

    def __init__(self, positions: np.ndarray, center: np.ndarray, outer: np.ndarray) -> None:
        origin = positions[center]
        self.d_i, self.length_i = _unit(positions[outer[:, 0]] - origin)
        self.d_l, self.length_l = _unit(positions[outer[:, 1]] - origin)
        # opposite rotational senses so a rigid rotation leaves the angle unchanged
        self.n_i = self.d_i @ R90.T
        self.n_l = -(self.d_l @ R90.T)

    def overlapping(self) -> np.ndarray:
        return cast(np.ndarray, np.einsum("pi,pi->p", self.d_i, self.d_l) >= _OVERLAP_COSINE)


def angular_gradients(geometry: PairGeometry) -> np.ndarray:
    """(p, 6) gradients of the linearized angle change over dofs of (i, j, l)."""
    g_i = geometry.n_i / geometry.length_i[:, None]
    g_l = geometry.n_l / geometry.length_l[:, None]
    return np.hstack([g_i, -g_i - g_l, g_l])


def angular_blocks(geometry: PairGeometry, kappa: np.ndarray, volume: np.ndarray) -> np.ndarray:
    g = angular_gradients(geometry)
    return cast(np.ndarray, _outer(g, g) * (kappa * volume)[:, None, None])


def _balanced(rows_i: np.ndarray, rows_l: np.ndarray) -> np.ndarray:
    """6x6 blocks from the (2, 6) rows of nodes i and l; node j balances both."""
    blocks = np.empty((len(rows_i), 6, 6))
    blocks[:, 0:2, :] = rows_i
    blocks[:, 4:6, :] = rows_l
    blocks[:, 2:4, :] = -(rows_i + rows_l)
    return blocks


def poisson_blocks(geometry: PairGeometry, eta: np.ndarray, gamma: np.ndarray,
                   area: np.ndarray, width: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Poisson-effect blocks split into (self, cross) parts.

    `area` and `width` are (p, 2) arrays for the edges (e_i, e_l). The self
    part is symmetric; the cross part couples the extension of one edge to
    the force on the other and is symmetric only when
    a_i * w_l == a_l * w_i.
    """
    alpha_i = eta * area[:, 0] / geometry.length_i
    alpha_l = eta * area[:, 1] / geometry.length_l
    sine = np.abs(np.einsum("pi,pi->p", geometry.n_i, geometry.d_l))
    common = eta * gamma * sine / (2.0 * geometry.length_i * geometry.length_l)
    beta_il = common * area[:, 0] * width[:, 1]
    beta_li = common * area[:, 1] * width[:, 0]

    D_i = _outer(geometry.d_i, geometry.d_i)
    D_l = _outer(geometry.d_l, geometry.d_l)
    zero = np.zeros_like(D_i)

    self_i = np.concatenate([alpha_i[:, None, None] * D_i, -alpha_i[:, None, None] * D_i, zero],
                            axis=2)
    self_l = np.concatenate([zero, -alpha_l[:, None, None] * D_l, alpha_l[:, None, None] * D_l],
                            axis=2)

    C_il = beta_il[:, None, None] * _outer(geometry.d_i, geometry.d_l)
    C_li = beta_li[:, None, None] * _outer(geometry.d_l, geometry.d_i)
    cross_i = np.concatenate([zero, -C_il, C_il], axis=2)
    cross_l = np.concatenate([C_li, -C_li, zero], axis=2)

    return _balanced(self_i, self_l), _balanced(cross_i, cross_l)


def _edge_dofs(edge_nodes: np.ndarray) -> np.ndarray:
    nodes = edge_nodes.reshape(-1, 2)
    return np.stack([2 * nodes[:, 0], 2 * nodes[:, 0] + 1,
                     2 * nodes[:, 1], 2 * nodes[:, 1] + 1], axis=1)


def _pair_dofs(center: np.ndarray, outer: np.ndarray) -> np.ndarray:
    nodes = np.column_stack([outer[:, 0], center, outer[:, 1]])
    return np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 6)


def edge_extension_block(edge: Edge, positions: np.ndarray) -> np.ndarray:
    """4x4 block of one edge over the dofs of its two nodes, in edge order."""
    nodes = np.array([edge.nodes])
    return edge_blocks(positions, nodes, np.array([edge.k]), np.array([edge.a]))[0]


def angular_deviation_block(pair: EdgePair, positions: np.ndarray) -> np.ndarray:
    """6x6 block kappa*V*g g^T over the dofs of (i, j, l)."""
    geometry = PairGeometry(positions, np.array([pair.center]), np.array([pair.outer]))
    return angular_blocks(geometry, np.array([pair.kappa]), np.array([pair.volume]))[0]


def poisson_block(pair: EdgePair, positions: np.ndarray,
                  edges: Tuple[Edge, Edge]) -> np.ndarray:
    """6x6 Poisson block over (i, j, l); `edges` are the pair's (e_i, e_l)."""
    geometry = PairGeometry(positions, np.array([pair.center]), np.array([pair.outer]))
    area = np.array([[edges[0].a, edges[1].a]])
    width = np.array([[edges[0].w, edges[1].w]])
    own, cross = poisson_blocks(geometry, np.array([pair.eta]), np.array([pair.gamma]),
                                area, width)
    return cast(np.ndarray, own[0] + cross[0])


class _Elements:
    """All element blocks of a network with their global dofs."""

    edge_dofs: np.ndarray
    edge_blocks: np.ndarray
    pair_dofs: np.ndarray
    pair_blocks: np.ndarray
    cross_blocks: np.ndarray
    pair_index: np.ndarray

    def __init__(self, network: Network) -> None:
        positions = network.positions
        if network.n_edges and np.any(network.edge_lengths() <= 0):
            raise AssemblyError("Network has zero-length edges")

        self.edge_dofs = _edge_dofs(network.edge_nodes)
        self.edge_blocks = edge_blocks(positions, network.edge_nodes, network.edge_k,
                                       network.edge_a)

        geometry = PairGeometry(positions, network.pair_center, network.pair_outer)
        valid = ~geometry.overlapping()
        if not valid.all():
            logging.warning("Dropping {} degenerate edge pairs with overlapping edges".format(
                int((~valid).sum())))
        self.pair_index = np.flatnonzero(valid)
        geometry = PairGeometry(positions, network.pair_center[valid], network.pair_outer[valid])

        edges = network.pair_edges[valid]
        angular = angular_blocks(geometry, network.pair_kappa[valid], network.pair_volume[valid])
        own, cross = poisson_blocks(geometry, network.pair_eta[valid],
                                    network.pair_gamma[valid], network.edge_a[edges],
                                    network.edge_w[edges])
        self.pair_dofs = _pair_dofs(network.pair_center[valid], network.pair_outer[valid])
        self.pair_blocks = angular + own + cross
        self.cross_blocks = cross


def _scatter(dofs: np.ndarray, blocks: np.ndarray, n_dofs: int) -> sparse.csr_matrix:
    size = dofs.shape[1]
    rows = np.repeat(dofs, size, axis=1).ravel()
    cols = np.tile(dofs, (1, size)).ravel()
    return sparse.coo_matrix((blocks.reshape(-1), (rows, cols)),
                             shape=(n_dofs, n_dofs)).tocsr()


def _max_abs(matrix: sparse.spmatrix) -> float:
    return float(abs(matrix).max()) if matrix.nnz else 0.0


def assemble_stiffness(network: Network,
                       asymmetry_bound: float = DEFAULT_ASYMMETRY_BOUND) -> StiffnessSystem:
    """Global K from all edges and edge pairs, symmetrized.

    The raw asymmetry is recorded. Only asymmetry not explained by the
    Poisson cross terms is held against `asymmetry_bound`.
    """
    n_dofs = network.n_dofs
    elements = _Elements(network)
    raw = (_scatter(elements.edge_dofs, elements.edge_blocks, n_dofs) +
           _scatter(elements.pair_dofs, elements.pair_blocks, n_dofs))
    cross = _scatter(elements.pair_dofs, elements.cross_blocks, n_dofs)

    scale = _max_abs(raw)
    if scale == 0.0:
        raise AssemblyError("Assembled stiffness matrix is identically zero")
    skew = raw - raw.T
    asymmetry = _max_abs(skew) / scale
    unexpected = _max_abs(skew - (cross - cross.T)) / scale
    logging.info("Assembled K: {} dofs, {} nonzeros, relative asymmetry {:.3e}".format(
        n_dofs, raw.nnz, asymmetry))
    if unexpected > asymmetry_bound:
        raise AssemblyError("Stiffness asymmetry {:.3e} exceeds bound {:.1e}; "
                            "element sign conventions are inconsistent".format(
                                unexpected, asymmetry_bound))

    K = ((raw + raw.T) * 0.5).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return StiffnessSystem(K, asymmetry=asymmetry, unexpected_asymmetry=unexpected)


def element_energies(network: Network, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Quadratic forms u_e^T B_e u_e per edge and per edge pair.

    Their total equals u^T K u. Pairs dropped as degenerate report zero.
    """
    elements = _Elements(network)
    u = np.asarray(u, dtype=np.float64)
    u_edges = u[elements.edge_dofs]
    edge_q = np.einsum("pi,pij,pj->p", u_edges, elements.edge_blocks, u_edges)
    u_pairs = u[elements.pair_dofs]
    pair_q = np.zeros(network.n_pairs)
    pair_q[elements.pair_index] = np.einsum("pi,pij,pj->p", u_pairs, elements.pair_blocks,
                                            u_pairs)
    return edge_q, pair_q


def _require_sides(network: Network, sides: Sequence[str]) -> None:
    for side in sides:
        if not network.side_mask(side).any():
            raise AssemblyError("No network nodes lie on the {} boundary".format(side))


def build_problem(network: Network, stiffness: StiffnessSystem,
                  spec: ProblemSpec) -> StiffnessSystem:
    """Load vector and constraints for one of the two boundary-value problems."""
    n_dofs = network.n_dofs
    if stiffness.n_dofs != n_dofs:
        raise ValueError("Stiffness matrix has {} dofs, network has {}".format(
            stiffness.n_dofs, n_dofs))
    F = np.zeros(n_dofs)

    if spec.kind == FIXED_BOUNDARY_FORCE:
        _require_sides(network, net.SIDES)
        fixed = np.flatnonzero(network.boundary_mask())
        dofs = np.concatenate([2 * fixed, 2 * fixed + 1])
        values = np.zeros(len(dofs))

        magnitude = (spec.force_scale * float(stiffness.K.diagonal().mean()) *
                     network.domain_side)
        free_nodes = np.flatnonzero(~network.boundary_mask())
        F[2 * free_nodes] = magnitude / np.sqrt(2.0)
        F[2 * free_nodes + 1] = magnitude / np.sqrt(2.0)
        logging.debug("Diagonal load of {:.6e} N on {} free nodes".format(
            magnitude, len(free_nodes)))
    else:
        _require_sides(network, (net.LEFT, net.RIGHT))
        left = np.flatnonzero(network.side_mask(net.LEFT))
        right = np.flatnonzero(network.side_mask(net.RIGHT) & ~network.side_mask(net.LEFT))
        shift = spec.displacement_fraction * network.domain_side
        dofs = np.concatenate([2 * left, 2 * left + 1, 2 * right, 2 * right + 1])
        values = np.concatenate([np.zeros(2 * len(left)), np.full(len(right), shift),
                                 np.zeros(len(right))])

    return StiffnessSystem(stiffness.K, F, dofs, values, asymmetry=stiffness.asymmetry,
                           unexpected_asymmetry=stiffness.unexpected_asymmetry, problem=spec)
