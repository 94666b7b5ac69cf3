"""Coefficient schemes for edges (k, a, w) and edge pairs (kappa, V, eta, gamma).

When a scheme gives no connection volume it is derived per pair as
V = w_i * w_l * thickness from the widths of the two edges.
"""

import numpy as np

from typing import Any, Dict, Optional, Tuple

from .network import Network, PAIR_KINDS, INTRA_FIBER, INTER_FIBER_BOND

Range = Tuple[float, float]

EDGE_COEFFICIENTS = ("k", "a", "w")
PAIR_COEFFICIENTS = ("kappa", "eta", "gamma")


def _check_positive(name: str, value: float) -> None:
    if not value > 0:
        raise ValueError("coefficient {} must be positive, got {}".format(name, value))


def _check_non_negative(name: str, value: float) -> None:
    if not value >= 0:
        raise ValueError("coefficient {} must be non-negative, got {}".format(name, value))


def _check_range(name: str, bounds: Range) -> None:
    low, high = bounds
    if not 0 < low <= high:
        raise ValueError("range for {} must satisfy 0 < low <= high, got [{}, {}]".format(
            name, low, high))


def _derived_volume(network: Network, thickness: float) -> np.ndarray:
    widths = network.edge_w[network.pair_edges]
    return widths[:, 0] * widths[:, 1] * thickness


class CoefficientScheme:
    name = "abstract"

    def assign(self, network: Network, rng: np.random.Generator) -> Network:
        raise NotImplementedError

    def describe(self) -> Dict[str, Any]:
        raise NotImplementedError


class HomogeneousScheme(CoefficientScheme):
    name = "homogeneous"

    k: float
    a: float
    w: float
    kappa: float
    eta: float
    gamma: float
    volume: Optional[float]
    thickness: float

    def __init__(self, k: float, a: float, w: float, kappa: float, eta: float, gamma: float,
                 volume: Optional[float] = None, thickness: float = 1.0) -> None:
        for name, value in (("k", k), ("a", a), ("w", w), ("thickness", thickness)):
            _check_positive(name, value)
        for name, value in (("kappa", kappa), ("eta", eta), ("gamma", gamma)):
            _check_non_negative(name, value)
        if volume is not None:
            _check_positive("V", volume)
        self.k, self.a, self.w = k, a, w
        self.kappa, self.eta, self.gamma = kappa, eta, gamma
        self.volume = volume
        self.thickness = thickness

    def assign(self, network: Network, rng: np.random.Generator) -> Network:
        n_edges, n_pairs = network.n_edges, network.n_pairs
        network = network.replace(edge_k=np.full(n_edges, self.k),
                                  edge_a=np.full(n_edges, self.a),
                                  edge_w=np.full(n_edges, self.w))
        volume = (np.full(n_pairs, self.volume) if self.volume is not None
                  else _derived_volume(network, self.thickness))
        return network.replace(pair_kappa=np.full(n_pairs, self.kappa),
                               pair_eta=np.full(n_pairs, self.eta),
                               pair_gamma=np.full(n_pairs, self.gamma),
                               pair_volume=volume, scheme=self.describe())

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "k": self.k, "a": self.a, "w": self.w, "kappa": self.kappa,
                "eta": self.eta, "gamma": self.gamma, "volume": self.volume,
                "thickness": self.thickness}


class RandomUniformScheme(CoefficientScheme):
    """Each coefficient drawn independently from its own uniform range."""

    name = "random"

    ranges: Dict[str, Range]
    volume: Optional[Range]
    thickness: float

    def __init__(self, ranges: Dict[str, Range], volume: Optional[Range] = None,
                 thickness: float = 1.0) -> None:
        for name in EDGE_COEFFICIENTS + PAIR_COEFFICIENTS:
            if name not in ranges:
                raise ValueError("missing range for coefficient {}".format(name))
            _check_range(name, ranges[name])
        if volume is not None:
            _check_range("V", volume)
        _check_positive("thickness", thickness)
        self.ranges = {name: (float(ranges[name][0]), float(ranges[name][1]))
                       for name in EDGE_COEFFICIENTS + PAIR_COEFFICIENTS}
        self.volume = volume
        self.thickness = thickness

    def assign(self, network: Network, rng: np.random.Generator) -> Network:
        drawn = {}
        for name in EDGE_COEFFICIENTS:
            drawn[name] = rng.uniform(*self.ranges[name], size=network.n_edges)
        for name in PAIR_COEFFICIENTS:
            drawn[name] = rng.uniform(*self.ranges[name], size=network.n_pairs)

        network = network.replace(edge_k=drawn["k"], edge_a=drawn["a"], edge_w=drawn["w"])
        volume = (rng.uniform(*self.volume, size=network.n_pairs) if self.volume is not None
                  else _derived_volume(network, self.thickness))
        return network.replace(pair_kappa=drawn["kappa"], pair_eta=drawn["eta"],
                               pair_gamma=drawn["gamma"], pair_volume=volume,
                               scheme=self.describe())

    def describe(self) -> Dict[str, Any]:
        description: Dict[str, Any] = {"name": self.name, "thickness": self.thickness,
                                       "volume": list(self.volume) if self.volume else None}
        for name, bounds in self.ranges.items():
            description[name] = list(bounds)
        return description


class FiberScheme(CoefficientScheme):
    """Fiber coefficients: one set for edges, one per edge-pair kind.

    With `randomize = (low, high)` every coefficient of every element is
    multiplied by its own factor drawn uniformly from that range.
    """

    name = "fiber"

    edge: Dict[str, float]
    intra: Dict[str, float]
    bond: Dict[str, float]
    randomize: Optional[Range]
    thickness: float

    def __init__(self, edge: Dict[str, float], intra: Dict[str, float], bond: Dict[str, float],
                 randomize: Optional[Range] = None, thickness: float = 1.0) -> None:
        for name in EDGE_COEFFICIENTS:
            _check_positive(name, edge[name])
        for values in (intra, bond):
            for name in PAIR_COEFFICIENTS:
                _check_non_negative(name, values[name])
        if randomize is not None:
            _check_range("randomize", randomize)
        _check_positive("thickness", thickness)
        self.edge = {name: float(edge[name]) for name in EDGE_COEFFICIENTS}
        self.intra = {name: float(intra[name]) for name in PAIR_COEFFICIENTS}
        self.bond = {name: float(bond[name]) for name in PAIR_COEFFICIENTS}
        self.randomize = randomize
        self.thickness = thickness

    def _factors(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.randomize is None:
            return np.ones(size)
        return rng.uniform(*self.randomize, size=size)

    def assign(self, network: Network, rng: np.random.Generator) -> Network:
        edge_values = {name: self.edge[name] * self._factors(rng, network.n_edges)
                       for name in EDGE_COEFFICIENTS}
        network = network.replace(edge_k=edge_values["k"], edge_a=edge_values["a"],
                                  edge_w=edge_values["w"])

        is_bond = network.pair_kind == PAIR_KINDS.index(INTER_FIBER_BOND)
        pair_values = {}
        for name in PAIR_COEFFICIENTS:
            base = np.where(is_bond, self.bond[name], self.intra[name])
            pair_values[name] = base * self._factors(rng, network.n_pairs)
        volume = _derived_volume(network, self.thickness)
        return network.replace(pair_kappa=pair_values["kappa"], pair_eta=pair_values["eta"],
                               pair_gamma=pair_values["gamma"], pair_volume=volume,
                               scheme=self.describe())

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "edge": dict(self.edge), INTRA_FIBER: dict(self.intra),
                INTER_FIBER_BOND: dict(self.bond), "thickness": self.thickness,
                "randomize": list(self.randomize) if self.randomize else None}


def assign_coefficients(network: Network, scheme: CoefficientScheme, seed: int) -> Network:
    """Coefficients for every edge and edge pair, a pure function of the seed."""
    return scheme.assign(network, np.random.default_rng(seed))
