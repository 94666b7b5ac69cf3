"""Localized orthogonal decomposition on a network.

A coarse equidistant grid supplies bilinear shape functions evaluated in the
network nodes. Each shape function gets a corrector from the l2-orthogonal
fine space, computed on a patch around its coarse node, and the corrected
functions span the multiscale space used for a coarse Galerkin solve.

All vectors and matrices here live in free coordinates, i.e. indexed by
position in `StiffnessSystem.free`, unless a name says otherwise.
"""

import logging
import math

import numpy as np
import scipy.linalg as linalg
import scipy.linalg.lapack as lapack
import scipy.sparse as sparse
from joblib import Parallel, delayed  # type: ignore
from scipy.spatial import cKDTree

from typing import cast, Any, Dict, Iterator, List, Optional, Sequence, Tuple

from . import progress
from .assembly import StiffnessSystem, element_energies
from .errors import CorrectorError, NetworkError, SolverError
from .network import Network, BOUNDARY_TOLERANCE
from .solvers import SpdFactor

DEFAULT_LOCALIZATION_FACTOR = 1.5

# Fraction of a coarse cell under which a node is snapped onto a grid line
_SNAP = 1e-9

_CONSTRAINT_TOLERANCE = 1e-10
# relative to the largest diagonal entry of the Schur complement
_PIVOT_TOLERANCE = 1e-12
_PROJECTION_STEPS = 3


class CoarseGrid:
    """Equidistant m x m grid of square elements over the network domain.

    Coarse node q = row*(m+1) + col sits at (col*H, row*H). Element
    e = row*m + col covers [col*H, (col+1)*H] x [row*H, (row+1)*H]; a network
    node on a shared element side belongs to the lower-index element.
    """

    m: int
    H: float
    domain_side: float
    coarse_positions: np.ndarray
    element_of_node: np.ndarray
    local_coordinates: np.ndarray

    def __init__(self, m: int, domain_side: float, node_positions: np.ndarray) -> None:
        self.m = m
        self.domain_side = domain_side
        self.H = domain_side / m
        ticks = np.arange(m + 1) * self.H
        ticks[-1] = domain_side
        x, y = np.meshgrid(ticks, ticks)
        self.coarse_positions = np.column_stack([x.ravel(), y.ravel()])

        t = node_positions / self.H
        nearest = np.round(t)
        t = np.where(np.abs(t - nearest) <= _SNAP, nearest, t)
        cell = np.clip(np.ceil(t).astype(np.int64) - 1, 0, m - 1)
        self.local_coordinates = np.clip(t - cell, 0.0, 1.0)
        self.element_of_node = cell[:, 1] * m + cell[:, 0]

    @property
    def n_coarse_nodes(self) -> int:
        return (self.m + 1) ** 2

    @property
    def n_elements(self) -> int:
        return self.m * self.m

    def element_nodes(self, element: int) -> np.ndarray:
        return np.flatnonzero(self.element_of_node == element)

    def element_corners(self, element: int) -> Tuple[int, int, int, int]:
        row, col = divmod(element, self.m)
        q = row * (self.m + 1) + col
        return q, q + 1, q + self.m + 1, q + self.m + 2


def build_coarse_grid(network: Network, m: int) -> CoarseGrid:
    if m < 2:
        raise ValueError("coarse grid needs m >= 2, got {}".format(m))
    side = network.domain_side
    tol = BOUNDARY_TOLERANCE * side
    positions = network.positions
    outside = np.any((positions < -tol) | (positions > side + tol), axis=1)
    if outside.any():
        raise NetworkError("{} network nodes lie outside the domain [0, {}]^2, first is node {}"
                           .format(int(outside.sum()), side, int(np.argmax(outside))))
    grid = CoarseGrid(m, side, positions)
    logging.debug("Coarse grid m={} H={:.6e}".format(m, grid.H))
    return grid


class ShapeMatrix:
    """Bilinear coarse shape functions evaluated in the network nodes.

    `full` has a row 2*q + axis per coarse dof and a column per network dof.
    `matrix` keeps only the rows in `retained`, restricted to the free
    columns `free`.
    """

    full: sparse.csr_matrix
    retained: np.ndarray
    matrix: sparse.csr_matrix
    free: np.ndarray

    def __init__(self, full: sparse.csr_matrix, free: np.ndarray) -> None:
        self.full = full
        self.free = free
        restricted = full[:, free].tocsr()
        self.retained = np.flatnonzero(restricted.getnnz(axis=1) > 0)
        self.matrix = restricted[self.retained].tocsr()

    @property
    def n_retained(self) -> int:
        return len(self.retained)

    def coarse_node(self, row: int) -> int:
        return int(self.retained[row]) // 2


def evaluate_shape_functions(grid: CoarseGrid, network: Network,
                             system: Optional[StiffnessSystem] = None) -> ShapeMatrix:
    """Shape matrix of `grid` on `network`; without a system every dof is free."""
    if len(grid.element_of_node) != network.n_nodes:
        raise ValueError("coarse grid was built for {} nodes, network has {}".format(
            len(grid.element_of_node), network.n_nodes))

    xi, eta = grid.local_coordinates[:, 0], grid.local_coordinates[:, 1]
    weights = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])
    row, col = np.divmod(grid.element_of_node, grid.m)
    first = row * (grid.m + 1) + col
    corners = np.column_stack([first, first + 1, first + grid.m + 1, first + grid.m + 2])

    nodes = np.repeat(np.arange(network.n_nodes), 4)
    coarse = corners.ravel()
    values = weights.ravel()
    rows = np.concatenate([2 * coarse, 2 * coarse + 1])
    cols = np.concatenate([2 * nodes, 2 * nodes + 1])
    full = sparse.coo_matrix((np.concatenate([values, values]), (rows, cols)),
                             shape=(2 * grid.n_coarse_nodes, network.n_dofs)).tocsr()
    full.eliminate_zeros()

    free = np.arange(network.n_dofs) if system is None else system.free
    shape = ShapeMatrix(full, free)
    logging.debug("Shape matrix: {} of {} coarse dofs retained".format(
        shape.n_retained, 2 * grid.n_coarse_nodes))
    return shape


class Patch:
    coarse_node: int
    radius: float
    dofs: np.ndarray
    constraints: np.ndarray

    def __init__(self, coarse_node: int, radius: float, dofs: np.ndarray,
                 constraints: np.ndarray) -> None:
        self.coarse_node = coarse_node
        self.radius = radius
        self.dofs = dofs
        self.constraints = constraints

    @classmethod
    def covering(cls, shape_matrix: sparse.spmatrix, dofs: np.ndarray, coarse_node: int = -1,
                 radius: float = math.inf) -> 'Patch':
        """Patch on `dofs` constrained by every shape row nonzero there."""
        dofs = np.sort(np.asarray(dofs, dtype=np.int64))
        touched = sparse.csc_matrix(shape_matrix)[:, dofs].getnnz(axis=1) > 0
        return cls(coarse_node, radius, dofs, np.flatnonzero(touched))


def _free_positions(network: Network, shape: ShapeMatrix) -> np.ndarray:
    return cast(np.ndarray, network.positions[shape.free // 2])


def compute_patch(grid: CoarseGrid, network: Network, shape: ShapeMatrix, coarse_node: int,
                  ell: float, tree: Optional[cKDTree] = None) -> Patch:
    """Free dofs whose node lies within distance `ell` of the coarse node.

    `tree` may be a prebuilt tree over the free-dof node positions.
    """
    if not ell > 0:
        raise ValueError("localization radius must be positive, got {}".format(ell))
    if tree is None:
        tree = cKDTree(_free_positions(network, shape))
    center = grid.coarse_positions[coarse_node]
    dofs = np.array(tree.query_ball_point(center, ell), dtype=np.int64)
    if len(dofs) == 0:
        raise CorrectorError("empty patch around coarse node {} with radius {:.3e}; "
                             "increase the localization factor".format(coarse_node, ell),
                             coarse_dof=2 * coarse_node)
    return Patch.covering(shape.matrix, dofs, coarse_node, ell)


class Corrector:
    coarse_dof: int
    dofs: np.ndarray
    values: np.ndarray
    residual_norm: float
    constraint_norm: float

    def __init__(self, coarse_dof: int, dofs: np.ndarray, values: np.ndarray,
                 residual_norm: float, constraint_norm: float) -> None:
        self.coarse_dof = coarse_dof
        self.dofs = dofs
        self.values = values
        self.residual_norm = residual_norm
        self.constraint_norm = constraint_norm

    def vector(self, size: int) -> np.ndarray:
        phi = np.zeros(size)
        phi[self.dofs] = self.values
        return phi


class _PatchSolver:
    """Saddle-point solver of one patch, shared by every solve on its coarse node.

    Eliminates phi through the Schur complement S = L K^-1 L^T over the
    multipliers. The constraint rows are scaled to unit length and S is
    factored once by pivoted Cholesky; rows that are numerically dependent
    on the selected ones are dropped.
    """

    def __init__(self, K: sparse.spmatrix, shape_matrix: sparse.spmatrix, patch: Patch,
                 constraint_tolerance: float = _CONSTRAINT_TOLERANCE) -> None:
        self.K = sparse.csr_matrix(K)
        self.patch = patch
        self.constraint_tolerance = constraint_tolerance
        dofs = patch.dofs
        self.K_PP = self.K[dofs][:, dofs]
        self.factor = SpdFactor(self.K_PP, "patch matrix of coarse node {}".format(
            patch.coarse_node))
        L = sparse.csr_matrix(shape_matrix)[patch.constraints][:, dofs].toarray()
        lengths = np.linalg.norm(L, axis=1) if len(L) else np.zeros(0)
        self.L = L[lengths > 0] / lengths[lengths > 0, None]
        self.selected = np.zeros(0, dtype=np.int64)
        self.upper = np.zeros((0, 0))
        self.Y = np.zeros((len(dofs), 0))
        if len(self.L):
            self._factor_schur()

    def _factor_schur(self) -> None:
        Y = self.factor.solve(self.L.T)
        S = self.L @ Y
        S = 0.5 * (S + S.T)
        c, piv, rank, info = lapack.dpstrf(S, tol=_PIVOT_TOLERANCE * float(np.max(np.diag(S))))
        if info < 0:
            raise SolverError("pivoted Cholesky of the Schur complement failed ({})".format(info))
        self.selected = piv[:rank] - 1
        self.upper = np.triu(c[:rank, :rank])
        self.Y = Y[:, self.selected]
        if rank < len(S):
            logging.debug("Patch of coarse node {} has {} dependent constraints".format(
                self.patch.coarse_node, len(S) - rank))

    def _multipliers(self, rhs: np.ndarray) -> np.ndarray:
        return cast(np.ndarray, linalg.cho_solve((self.upper, False), rhs))

    def solve(self, coarse_dof: int, shape_row: np.ndarray) -> Corrector:
        """Corrector of the shape function `shape_row` (free coordinates)."""
        return self.solve_load(coarse_dof, (self.K @ shape_row)[self.patch.dofs])

    def solve_load(self, label: int, b: np.ndarray) -> Corrector:
        """Fine-space function x on the patch with w^T K x = w^T b for every
        fine-space w supported there; `b` is given on the patch dofs.
        """
        x0 = self.factor.solve_refined(b, 1e-12)
        if len(self.selected):
            rows = self.L[self.selected]
            mu = self._multipliers(rows @ x0)
            phi = x0 - self.Y @ mu
            for _ in range(_PROJECTION_STEPS):
                if np.linalg.norm(self.L @ phi) <= self.constraint_tolerance * np.linalg.norm(phi):
                    break
                step = self._multipliers(rows @ phi)
                mu = mu + step
                phi = phi - self.Y @ step
            residual = self.K_PP @ phi + rows.T @ mu - b
        else:
            phi = x0
            residual = self.K_PP @ phi - b

        if not np.all(np.isfinite(phi)):
            raise CorrectorError("corrector solve produced non-finite values", label)

        scale = float(np.linalg.norm(b))
        residual_norm = float(np.linalg.norm(residual)) / scale if scale > 0 else 0.0
        constraint_norm = float(np.linalg.norm(self.L @ phi)) if len(self.L) else 0.0
        # phi vanishes when the shape function is already K-orthogonal to the fine space
        reference = max(float(np.linalg.norm(phi)), float(np.linalg.norm(self.L @ x0))
                        if len(self.L) else 0.0)
        if constraint_norm > self.constraint_tolerance * reference:
            raise CorrectorError("corrector leaves the fine space: constraint violation "
                                 "{:.3e} exceeds {:.1e}".format(constraint_norm / reference,
                                                                self.constraint_tolerance),
                                 label)
        return Corrector(label, self.patch.dofs, phi, residual_norm, constraint_norm)


def solve_corrector(K: sparse.spmatrix, shape_matrix: sparse.spmatrix, row: int,
                    patch: Patch, coarse_dof: Optional[int] = None,
                    constraint_tolerance: float = _CONSTRAINT_TOLERANCE) -> Corrector:
    """Corrector of shape row `row`: the fine-space function on `patch` with
    w^T K phi = w^T K lambda for every fine-space w supported there.

    `K` is the free-coordinate stiffness matrix and `shape_matrix` the
    retained, free-restricted shape matrix. With the patch rows L of that
    matrix scaled to unit length, CorrectorError is raised when ||L phi|| exceeds
    `constraint_tolerance` times the larger of ||phi|| and the violation of
    the unconstrained solve.
    """
    label = row if coarse_dof is None else coarse_dof
    try:
        solver = _PatchSolver(K, shape_matrix, patch, constraint_tolerance)
    except SolverError as err:
        raise CorrectorError(str(err), label)
    shape_row = sparse.csr_matrix(shape_matrix)[row].toarray().ravel()
    return solver.solve(label, shape_row)


def localization_radius(H: float, m: int, factor: float = DEFAULT_LOCALIZATION_FACTOR,
                        base: Optional[float] = None) -> float:
    """factor * H * log(m), natural logarithm unless `base` is given."""
    if not factor > 0:
        raise ValueError("localization factor must be positive, got {}".format(factor))
    logarithm = math.log(m) if base is None else math.log(m, base)
    return factor * H * logarithm


class MultiscaleBasis:
    """Columns psi = lambda - phi for every retained coarse dof.

    `lifting` is the boundary corrector: the fine-space part, in free
    coordinates, of the extension of the prescribed values held in
    `prescribed_dofs` and `prescribed_values`.
    """

    Psi: sparse.csc_matrix
    ell: float
    coarse_dofs: np.ndarray
    correctors: List[Corrector]
    lifting: np.ndarray
    prescribed_dofs: np.ndarray
    prescribed_values: np.ndarray

    def __init__(self, Psi: sparse.csc_matrix, ell: float, coarse_dofs: np.ndarray,
                 correctors: List[Corrector], lifting: Optional[np.ndarray] = None,
                 prescribed_dofs: Optional[np.ndarray] = None,
                 prescribed_values: Optional[np.ndarray] = None) -> None:
        self.Psi = Psi
        self.ell = ell
        self.coarse_dofs = coarse_dofs
        self.correctors = correctors
        self.lifting = np.zeros(Psi.shape[0]) if lifting is None else lifting
        self.prescribed_dofs = (np.zeros(0, dtype=np.int64) if prescribed_dofs is None
                                else prescribed_dofs)
        self.prescribed_values = (np.zeros(0) if prescribed_values is None
                                  else prescribed_values)

    @property
    def size(self) -> int:
        return cast(int, self.Psi.shape[1])

    def matches(self, system: StiffnessSystem) -> bool:
        """Whether the boundary corrector was built for the prescribed values of `system`."""
        if not np.any(self.lifting):
            return True
        return (np.array_equal(self.prescribed_dofs, system.constrained_dofs)
                and np.array_equal(self.prescribed_values, system.constrained_values))


def _coarse_nodes(shape: ShapeMatrix, pieces: Dict[int, np.ndarray]
                  ) -> Iterator[Tuple[int, List[int], Optional[np.ndarray]]]:
    nodes: Dict[int, List[int]] = {node: [] for node in pieces}
    for row in range(shape.n_retained):
        nodes.setdefault(shape.coarse_node(row), []).append(row)
    return ((node, rows, pieces.get(node)) for node, rows in sorted(nodes.items()))


def boundary_load_pieces(shape: ShapeMatrix, load: np.ndarray) -> Dict[int, np.ndarray]:
    """Split a free-coordinate load by the coarse partition of unity.

    Every coarse node whose shape function meets the support of `load` gets
    the load weighted by its shape values; the pieces sum to `load`.
    """
    support = np.flatnonzero(load)
    if len(support) == 0:
        return {}
    dofs = shape.free[support]
    # x rows of `full` hold the nodal shape values
    weights = shape.full[0::2][:, dofs - dofs % 2].tocsr()
    pieces = {}
    for node in np.flatnonzero(weights.getnnz(axis=1) > 0):
        piece = np.zeros(len(load))
        piece[support] = weights[node].toarray().ravel() * load[support]
        pieces[int(node)] = piece
    return pieces


def _node_solves(K: sparse.csr_matrix, shape: ShapeMatrix, grid: CoarseGrid,
                 network: Network, tree: cKDTree, node: int, rows: Sequence[int],
                 piece: Optional[np.ndarray], ell: float
                 ) -> Tuple[List[Corrector], Optional[Corrector]]:
    label = int(shape.retained[rows[0]]) if rows else 2 * node
    try:
        patch = compute_patch(grid, network, shape, node, ell, tree)
    except CorrectorError:
        if rows:
            raise
        # the piece lies outside every patch dof and is lost to localization
        return [], None
    try:
        solver = _PatchSolver(K, shape.matrix, patch)
    except SolverError as err:
        raise CorrectorError(str(err), label)
    correctors = []
    for row in rows:
        shape_row = shape.matrix[row].toarray().ravel()
        correctors.append(solver.solve(int(shape.retained[row]), shape_row))
    lifting = None
    if piece is not None and np.any(piece[patch.dofs]):
        lifting = solver.solve_load(label, piece[patch.dofs])
    return correctors, lifting


def build_multiscale_basis(grid: CoarseGrid, network: Network, system: StiffnessSystem,
                           shape: ShapeMatrix, ell: float, threads: int = 1) -> MultiscaleBasis:
    """Solve every corrector and assemble the multiscale basis.

    Prescribed nonzero values also get a boundary corrector, solved piece by
    piece on the same patches. Patches are solved by `threads` workers;
    results are merged in coarse dof order so the basis does not depend on
    scheduling.
    """
    if not ell > 0:
        raise ValueError("localization radius must be positive, got {}".format(ell))
    if threads < 1:
        raise ValueError("threads must be at least 1, got {}".format(threads))

    K = system.free_matrix()
    tree = cKDTree(_free_positions(network, shape))
    boundary_load = -(system.K @ system.lifting())[system.free]
    groups = list(_coarse_nodes(shape, boundary_load_pieces(shape, boundary_load)))
    logging.info("Solving {} correctors on {} patches with ell={:.4e} ({} threads)".format(
        shape.n_retained, len(groups), ell, threads))

    bar = progress.bar(len(groups), "correctors m={}".format(grid.m))
    results = Parallel(n_jobs=threads, prefer="threads", return_as="generator")(
        delayed(_node_solves)(K, shape, grid, network, tree, node, rows, piece, ell)
        for node, rows, piece in groups)
    correctors: List[Corrector] = []
    n_free = len(shape.free)
    lifting = np.zeros(n_free)
    for done, (node_correctors, node_lifting) in enumerate(results, start=1):
        correctors.extend(node_correctors)
        if node_lifting is not None:
            lifting[node_lifting.dofs] += node_lifting.values
        bar.update(done)
    bar.finish()

    rows = np.concatenate([c.dofs for c in correctors]) if correctors else np.zeros(0, int)
    values = np.concatenate([c.values for c in correctors]) if correctors else np.zeros(0)
    cols = np.repeat(np.arange(len(correctors)), [len(c.dofs) for c in correctors])
    Phi = sparse.csc_matrix((values, (rows, cols)), shape=(n_free, shape.n_retained))
    Psi = (shape.matrix.T.tocsc() - Phi).tocsc()
    Psi.sort_indices()

    worst = max((c.residual_norm for c in correctors), default=0.0)
    logging.debug("Largest relative corrector residual {:.3e}".format(worst))
    return MultiscaleBasis(Psi, ell, shape.retained.copy(), correctors, lifting,
                           system.constrained_dofs.copy(), system.constrained_values.copy())


def coarse_matrix(system: StiffnessSystem, basis: MultiscaleBasis) -> np.ndarray:
    """Dense Galerkin matrix Psi^T K Psi, symmetrized."""
    K = system.free_matrix()
    A = (basis.Psi.T @ (K @ basis.Psi)).toarray()
    asymmetry = np.abs(A - A.T).max() if A.size else 0.0
    scale = np.abs(A).max() if A.size else 0.0
    if scale > 0:
        logging.debug("Coarse matrix relative asymmetry {:.3e}".format(asymmetry / scale))
    return cast(np.ndarray, 0.5 * (A + A.T))


def solve_multiscale(system: StiffnessSystem, basis: MultiscaleBasis) -> np.ndarray:
    """Coarse Galerkin solve in the multiscale space; full-length displacement.

    The solution is the prescribed values plus the boundary corrector plus
    a combination of basis functions.
    """
    if basis.Psi.shape[0] != len(system.free):
        raise ValueError("basis has {} rows, system has {} free dofs".format(
            basis.Psi.shape[0], len(system.free)))
    if not basis.matches(system):
        raise ValueError("basis was built for other prescribed values than the system's")

    u = system.lifting()
    u[system.free] += basis.lifting
    if basis.size == 0:
        return u
    A = coarse_matrix(system, basis)
    rhs = basis.Psi.T @ (system.effective_load() - system.free_matrix() @ basis.lifting)
    try:
        factor = linalg.cho_factor(A)
    except linalg.LinAlgError:
        raise SolverError("Coarse matrix of size {} is not positive definite; basis and "
                          "constraints do not match".format(basis.size))
    c = linalg.cho_solve(factor, rhs)
    u[system.free] += basis.Psi @ c
    return u


def tail_energy(network: Network, phi: np.ndarray, center: Sequence[float],
                radius: float) -> float:
    """Energy norm of `phi` (full length) carried by elements entirely outside
    the ball of `radius` around `center`.
    """
    distance = np.hypot(*(network.positions - np.asarray(center, dtype=np.float64)).T)
    outside = distance > radius
    edge_q, pair_q = element_energies(network, phi)
    edge_outside = outside[network.edge_nodes].all(axis=1)
    pair_outside = (outside[network.pair_center] & outside[network.pair_outer].all(axis=1))
    energy = float(edge_q[edge_outside].sum() + pair_q[pair_outside].sum())
    return math.sqrt(max(energy, 0.0))


def basis_vectors(system: StiffnessSystem, basis: MultiscaleBasis,
                  columns: Optional[Sequence[int]] = None) -> Iterator[Tuple[int, np.ndarray]]:
    """Full-length psi vectors (zero on constrained dofs) with their coarse dof."""
    if columns is None:
        columns = range(basis.size)
    for column in columns:
        psi = np.zeros(system.n_dofs)
        psi[system.free] = basis.Psi[:, column].toarray().ravel()
        yield int(basis.coarse_dofs[column]), psi


def describe_basis(basis: MultiscaleBasis) -> Dict[str, Any]:
    return {"size": basis.size, "ell": basis.ell, "nnz": int(basis.Psi.nnz),
            "max_residual": max((c.residual_norm for c in basis.correctors), default=0.0)}
