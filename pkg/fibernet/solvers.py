import logging

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from typing import cast, Any

from .errors import SolverError

_REFINEMENT_STEPS = 3
_POLISH_ITERATIONS = 200


class SpdFactor:
    """Sparse LU factorization used as a Cholesky substitute.

    The matrix is factored with a symmetric fill-reducing ordering and no
    row pivoting, so the pivots on the diagonal of U are positive exactly
    when the matrix is positive definite.
    """

    size: int
    label: str

    def __init__(self, matrix: Any, label: str = "matrix") -> None:
        matrix = sparse.csc_matrix(matrix)
        self.size = matrix.shape[0]
        self.label = label
        self.matrix = matrix
        self.lu = None
        if self.size == 0:
            return

        try:
            self.lu = spla.splu(matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as err:
            raise SolverError("Factorization of {} ({} x {}) failed: {}".format(
                label, self.size, self.size, err))

        pivots = self.lu.U.diagonal()
        if not np.all(np.isfinite(pivots)) or np.any(pivots <= 0):
            raise SolverError("{} ({} x {}) is not positive definite; smallest pivot {:.3e}"
                              .format(label, self.size, self.size, float(np.min(pivots))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.lu is None:
            return np.zeros_like(rhs, dtype=np.float64)
        return cast(np.ndarray, self.lu.solve(np.asarray(rhs, dtype=np.float64)))

    def relative_residual(self, rhs: np.ndarray, solution: np.ndarray) -> float:
        norm = float(np.linalg.norm(rhs))
        residual = float(np.linalg.norm(rhs - self.matrix @ solution))
        return residual / norm if norm > 0 else residual

    def solve_refined(self, rhs: np.ndarray, tolerance: float) -> np.ndarray:
        """Solve with iterative refinement towards ||A x - b|| <= tolerance*||b||.

        When refinement stalls the solution is polished by conjugate gradients
        preconditioned with the factorization. The caller checks the residual.
        """
        rhs = np.asarray(rhs, dtype=np.float64)
        solution = self.solve(rhs)
        if not np.any(rhs):
            return solution
        for step in range(_REFINEMENT_STEPS):
            relative = self.relative_residual(rhs, solution)
            if relative <= tolerance:
                return solution
            logging.debug("Refining solve of {} (step {}, residual {:.3e})".format(
                self.label, step + 1, relative))
            solution = solution + self.solve(rhs - self.matrix @ solution)

        relative = self.relative_residual(rhs, solution)
        if relative <= tolerance or not np.all(np.isfinite(solution)):
            return solution
        logging.debug("Polishing solve of {} with preconditioned CG (residual {:.3e})".format(
            self.label, relative))
        preconditioner = spla.LinearOperator(self.matrix.shape, matvec=self.solve,
                                             dtype=np.float64)
        polished, _ = spla.cg(self.matrix, rhs, x0=solution, rtol=tolerance, atol=0.0,
                              maxiter=_POLISH_ITERATIONS, M=preconditioner)
        if self.relative_residual(rhs, polished) < relative:
            return cast(np.ndarray, polished)
        return solution
