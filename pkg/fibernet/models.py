"""Network parameters and the seeded generation pipeline.

A single seed drives everything: it is split into a geometry seed and a
coefficient seed, so changing the coefficient scheme never moves a node.
"""

import logging

import numpy as np

from typing import Any, Dict, Optional, Tuple

from . import fibers
from . import network as net
from .coefficients import CoefficientScheme, assign_coefficients
from .network import Network

NETWORK_TYPES = ("structured", "perturbed", "fiber")


class NetworkSpec:
    type: str
    domain_side: float
    seed: int
    m_fine: int
    magnitude: float
    pairs: str
    fiber_count: Optional[int]
    target_nodes: Optional[int]
    fiber_length: Optional[float]
    segments_per_fiber: int
    bond_pairs: str

    def __init__(self, type: str, domain_side: float = 1.0, seed: int = 0, m_fine: int = 64,
                 magnitude: float = 0.3, pairs: str = "all",
                 fiber_count: Optional[int] = None, target_nodes: Optional[int] = None,
                 fiber_length: Optional[float] = None, segments_per_fiber: int = 8,
                 bond_pairs: str = "all") -> None:
        if type not in NETWORK_TYPES:
            raise ValueError("network type must be one of {}, not '{}'".format(
                NETWORK_TYPES, type))
        if not domain_side > 0:
            raise ValueError("domain side must be positive, got {}".format(domain_side))
        if seed < 0:
            raise ValueError("seed must be non-negative, got {}".format(seed))
        if type == "fiber" and fiber_count is None and target_nodes is None:
            raise ValueError("fiber networks need fiber_count or target_nodes")
        self.type = type
        self.domain_side = domain_side
        self.seed = seed
        self.m_fine = m_fine
        self.magnitude = magnitude
        self.pairs = pairs
        self.fiber_count = fiber_count
        self.target_nodes = target_nodes
        self.fiber_length = fiber_length
        self.segments_per_fiber = segments_per_fiber
        self.bond_pairs = bond_pairs

    @property
    def resolved_fiber_length(self) -> float:
        return self.fiber_length if self.fiber_length is not None else 0.2 * self.domain_side

    def describe(self) -> Dict[str, Any]:
        return dict(vars(self))


def derive_seeds(seed: int) -> Tuple[int, int]:
    """(geometry seed, coefficient seed) derived from the run seed."""
    geometry, coefficients = np.random.SeedSequence(seed).generate_state(2)
    return int(geometry), int(coefficients)


def _geometry(spec: NetworkSpec, geometry_seed: int) -> Network:
    if spec.type == "structured":
        return net.generate_structured(spec.m_fine, spec.domain_side, spec.pairs)
    elif spec.type == "perturbed":
        return net.generate_perturbed(spec.m_fine, spec.domain_side, spec.magnitude,
                                      geometry_seed, spec.pairs)

    length = spec.resolved_fiber_length
    count = spec.fiber_count
    if count is None:
        assert spec.target_nodes is not None
        count = fibers.fiber_count_for_target(spec.target_nodes, spec.domain_side, length,
                                              spec.segments_per_fiber, geometry_seed,
                                              spec.bond_pairs)
    return fibers.generate_fiber_network(spec.domain_side, count, length,
                                         spec.segments_per_fiber, geometry_seed,
                                         spec.bond_pairs)


def generate_network(spec: NetworkSpec, scheme: CoefficientScheme) -> Network:
    """Generate, prune and parametrize a network from its parameters."""
    geometry_seed, coefficient_seed = derive_seeds(spec.seed)
    network = net.prune(_geometry(spec, geometry_seed))
    # sampled angular coefficients of zero can leave edges unsupported
    network = net.prune(assign_coefficients(network, scheme, coefficient_seed))
    logging.info("Generated {} network: {} nodes, {} edges, {} edge pairs".format(
        spec.type, network.n_nodes, network.n_edges, network.n_pairs))
    generator = dict(network.generator, geometry_seed=geometry_seed,
                     coefficient_seed=coefficient_seed)
    return network.replace(seed=spec.seed, generator=generator)
