"""Reference solutions, error norms, convergence rates and the study driver."""

import logging
import math
import time

import numpy as np
import scipy.sparse as sparse

from typing import Any, Dict, List, Optional, Sequence, Tuple

from . import multiscale as ms
from . import progress
from .assembly import ProblemSpec, StiffnessSystem, assemble_stiffness, build_problem
from .coefficients import CoefficientScheme
from .errors import NumericalError, SolverError, StudyError
from .models import NetworkSpec, derive_seeds, generate_network
from .network import Network
from .solvers import SpdFactor

REFERENCE_TOLERANCE = 1e-10
MIN_FIT_ROWS = 3

# factor used for a global corrector in a localization sweep
GLOBAL = math.inf


def reference_residual(system: StiffnessSystem, u: np.ndarray) -> float:
    """||K u - F|| / ||F|| over the free dofs, F including the lifted load."""
    residual = (system.K @ u - system.F)[system.free]
    scale = float(np.linalg.norm(system.effective_load()))
    if scale == 0.0:
        return float(np.linalg.norm(residual))
    return float(np.linalg.norm(residual)) / scale


def solve_reference(system: StiffnessSystem,
                    tolerance: float = REFERENCE_TOLERANCE) -> np.ndarray:
    """Exact fine-scale displacement by sparse direct factorization."""
    u = system.lifting()
    rhs = system.effective_load()
    if len(rhs) == 0 or not np.any(rhs):
        return u
    factor = SpdFactor(system.free_matrix(), "free stiffness matrix")
    u[system.free] = factor.solve_refined(rhs, tolerance)

    if not np.all(np.isfinite(u)):
        raise SolverError("Reference solve produced non-finite displacements")
    residual = reference_residual(system, u)
    logging.debug("Reference solve: relative residual {:.3e}".format(residual))
    if residual > tolerance:
        raise SolverError("Reference residual {:.3e} exceeds {:.1e}; the free stiffness "
                          "matrix is too ill-conditioned".format(residual, tolerance))
    return u


def relative_errors(u: np.ndarray, u_ms: np.ndarray, K: sparse.spmatrix) -> Dict[str, float]:
    u = np.asarray(u, dtype=np.float64)
    error = u - np.asarray(u_ms, dtype=np.float64)
    norm_u = float(np.linalg.norm(u))
    energy_u = float(u @ (K @ u))
    if norm_u == 0.0 or energy_u <= 0.0:
        raise ValueError("relative errors are undefined for a zero reference solution")
    energy_error = max(float(error @ (K @ error)), 0.0)
    return {"rel_l2": float(np.linalg.norm(error)) / norm_u,
            "rel_energy": math.sqrt(energy_error / energy_u)}


class RateFit:
    rate_l2: float
    rate_energy: float
    variance_l2: float
    variance_energy: float
    rows: int

    def __init__(self, rate_l2: float, rate_energy: float, variance_l2: float,
                 variance_energy: float, rows: int) -> None:
        self.rate_l2 = rate_l2
        self.rate_energy = rate_energy
        self.variance_l2 = variance_l2
        self.variance_energy = variance_energy
        self.rows = rows

    def describe(self) -> Dict[str, Any]:
        return dict(vars(self))


def fit_slope(H: Sequence[float], errors: Sequence[float],
              label: str = "error") -> Tuple[float, float]:
    """Least-squares slope of log(error) against log(H) and the residual variance.

    Rows with a zero error are left out. Fewer than three usable rows give NaN.
    """
    H = np.asarray(H, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    usable = errors > 0
    if not usable.all():
        logging.warning("Excluding {} rows with zero {} from the rate fit".format(
            int((~usable).sum()), label))
    if usable.sum() < MIN_FIT_ROWS:
        logging.warning("Only {} usable rows for the {} rate, need {}".format(
            int(usable.sum()), label, MIN_FIT_ROWS))
        return math.nan, math.nan

    x = np.log(H[usable])
    y = np.log(errors[usable])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    return float(slope), float(np.mean(residual ** 2))


class StudyRow:
    m: int
    H: float
    ell: float
    rel_l2: float
    rel_energy: float
    wall_seconds: Optional[float]

    def __init__(self, m: int, H: float, ell: float, rel_l2: float, rel_energy: float,
                 wall_seconds: Optional[float] = None) -> None:
        self.m = m
        self.H = H
        self.ell = ell
        self.rel_l2 = rel_l2
        self.rel_energy = rel_energy
        self.wall_seconds = wall_seconds


def fit_rate(rows: Sequence[StudyRow]) -> RateFit:
    if len(rows) < MIN_FIT_ROWS:
        raise ValueError("rate fit needs at least {} rows, got {}".format(
            MIN_FIT_ROWS, len(rows)))
    H = [row.H for row in rows]
    rate_l2, variance_l2 = fit_slope(H, [row.rel_l2 for row in rows], "l2 error")
    rate_energy, variance_energy = fit_slope(H, [row.rel_energy for row in rows],
                                             "energy error")
    return RateFit(rate_l2, rate_energy, variance_l2, variance_energy, len(rows))


class StudyConfig:
    network: NetworkSpec
    scheme: CoefficientScheme
    problem: ProblemSpec
    coarse_sizes: List[int]
    loc_factor: float
    log_base: Optional[float]
    threads: int
    record_timing: bool
    asymmetry_bound: float

    def __init__(self, network: NetworkSpec, scheme: CoefficientScheme, problem: ProblemSpec,
                 coarse_sizes: Sequence[int], loc_factor: float = ms.DEFAULT_LOCALIZATION_FACTOR,
                 log_base: Optional[float] = None, threads: int = 1,
                 record_timing: bool = False, asymmetry_bound: float = 1e-6) -> None:
        sizes = list(coarse_sizes)
        if not sizes:
            raise ValueError("coarse_sizes must not be empty")
        if any(m < 2 for m in sizes):
            raise ValueError("every coarse size must be at least 2, got {}".format(sizes))
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("coarse sizes must be strictly increasing, got {}".format(sizes))
        if not loc_factor > 0:
            raise ValueError("localization factor must be positive, got {}".format(loc_factor))
        self.network = network
        self.scheme = scheme
        self.problem = problem
        self.coarse_sizes = sizes
        self.loc_factor = loc_factor
        self.log_base = log_base
        self.threads = threads
        self.record_timing = record_timing
        self.asymmetry_bound = asymmetry_bound


class StudyResult:
    rows: List[StudyRow]
    failures: Dict[int, str]
    fit: RateFit
    metadata: Dict[str, Any]

    def __init__(self, rows: List[StudyRow], failures: Dict[int, str], fit: RateFit,
                 metadata: Dict[str, Any]) -> None:
        self.rows = rows
        self.failures = failures
        self.fit = fit
        self.metadata = metadata


def lod_solution(network: Network, system: StiffnessSystem, m: int, ell: float,
                 threads: int = 1) -> Tuple[np.ndarray, ms.MultiscaleBasis]:
    grid = ms.build_coarse_grid(network, m)
    shape = ms.evaluate_shape_functions(grid, network, system)
    basis = ms.build_multiscale_basis(grid, network, system, shape, ell, threads)
    return ms.solve_multiscale(system, basis), basis


def _radius(network: Network, m: int, factor: float, base: Optional[float]) -> float:
    if math.isinf(factor):
        return 2.0 * math.sqrt(2.0) * network.domain_side
    return ms.localization_radius(network.domain_side / m, m, factor, base)


def run_study(config: StudyConfig) -> StudyResult:
    """Errors of the multiscale solution over the coarse sizes of `config`.

    The network, stiffness matrix and reference solution are computed once.
    A coarse size that fails numerically is recorded and skipped.
    """
    network = generate_network(config.network, config.scheme)
    system = build_problem(network, assemble_stiffness(network, config.asymmetry_bound),
                           config.problem)
    u = solve_reference(system)

    rows: List[StudyRow] = []
    failures: Dict[int, str] = {}
    bar = progress.bar(len(config.coarse_sizes), "study")
    for done, m in enumerate(config.coarse_sizes, start=1):
        start = time.perf_counter()
        ell = _radius(network, m, config.loc_factor, config.log_base)
        try:
            u_ms, _ = lod_solution(network, system, m, ell, config.threads)
            errors = relative_errors(u, u_ms, system.K)
        except NumericalError as err:
            logging.warning("Coarse size m={} failed: {}".format(m, err))
            failures[m] = str(err)
            bar.update(done)
            continue
        elapsed = time.perf_counter() - start
        logging.info("m={} H={:.4e} ell={:.4e}: rel_l2={:.4e} rel_energy={:.4e} ({:.1f}s)".format(
            m, network.domain_side / m, ell, errors["rel_l2"], errors["rel_energy"], elapsed))
        rows.append(StudyRow(m, network.domain_side / m, ell, errors["rel_l2"],
                             errors["rel_energy"], elapsed if config.record_timing else None))
        bar.update(done)
    bar.finish()

    if len(rows) < MIN_FIT_ROWS:
        raise StudyError("Only {} of {} coarse sizes succeeded, need {}".format(
            len(rows), len(config.coarse_sizes), MIN_FIT_ROWS))
    fit = fit_rate(rows)

    geometry_seed, coefficient_seed = derive_seeds(config.network.seed)
    metadata = {"seeds": {"seed": config.network.seed, "geometry": geometry_seed,
                          "coefficients": coefficient_seed},
                "network": {"nodes": network.n_nodes, "edges": network.n_edges,
                            "pairs": network.n_pairs, "removed": dict(network.removed)},
                "asymmetry": system.asymmetry,
                "failures": {str(m): message for m, message in failures.items()}}
    return StudyResult(rows, failures, fit, metadata)


class SweepPoint:
    factor: float
    ell: float
    rel_l2: float
    rel_energy: float

    def __init__(self, factor: float, ell: float, rel_l2: float, rel_energy: float) -> None:
        self.factor = factor
        self.ell = ell
        self.rel_l2 = rel_l2
        self.rel_energy = rel_energy


def localization_sweep(network: Network, system: StiffnessSystem, m: int,
                       factors: Sequence[float], u: Optional[np.ndarray] = None,
                       log_base: Optional[float] = None, threads: int = 1) -> List[SweepPoint]:
    """Errors at one coarse size for several localization factors.

    A factor of `GLOBAL` uses correctors over the whole network.
    """
    if u is None:
        u = solve_reference(system)
    points = []
    for factor in factors:
        ell = _radius(network, m, factor, log_base)
        u_ms, _ = lod_solution(network, system, m, ell, threads)
        errors = relative_errors(u, u_ms, system.K)
        points.append(SweepPoint(factor, ell, errors["rel_l2"], errors["rel_energy"]))
        logging.info("m={} factor={} ell={:.4e}: rel_energy={:.4e}".format(
            m, factor, ell, errors["rel_energy"]))
    return points


def summarize(result: StudyResult) -> List[str]:
    fit = result.fit
    return ["rate_l2 = {:.4f} (residual variance {:.3e})".format(fit.rate_l2, fit.variance_l2),
            "rate_energy = {:.4f} (residual variance {:.3e})".format(fit.rate_energy,
                                                                    fit.variance_energy)]
