"""Layered run configuration.

Values are resolved from, in increasing priority: the packaged
`defaults/defaults.ini`, an optional packaged preset, a user config file and
command line flags. Every typed getter reports problems as a ConfigError
naming the offending `[section] key`.
"""

import configparser
import hashlib
import logging
import math
import os

from typing import cast, Any, Dict, List, Optional, Sequence, Tuple

try:
    from importlib.resources import files as _resource_files
except ImportError:
    # Try backported to PY<39 `importlib_resources`.
    from importlib_resources import files as _resource_files  # type: ignore

from . import network as net
from .analysis import StudyConfig
from .assembly import ProblemSpec, PROBLEM_KINDS
from .coefficients import (CoefficientScheme, FiberScheme, HomogeneousScheme,
                           RandomUniformScheme, EDGE_COEFFICIENTS, PAIR_COEFFICIENTS)
from .errors import ConfigError
from .fibers import BOND_PAIR_MODES
from .models import NetworkSpec, NETWORK_TYPES

SECTIONS = ("network", "coefficients", "problem", "multiscale", "study", "run")
SCHEMES = ("homogeneous", "random", "fiber")
PRESETS = ("perturbed", "stiff", "fiber")
METHODS = ("exact", "lod")

THREADS_ENV = "FIBERNET_THREADS"

_TRUE = ("yes", "true", "on", "1")
_FALSE = ("no", "false", "off", "0")


def _packaged(name: str) -> str:
    resource = _resource_files("fibernet").joinpath("defaults").joinpath(name)
    return cast(str, resource.read_text(encoding="utf8"))


class Settings:
    """Resolved configuration with typed, validated access."""

    parser: configparser.ConfigParser
    sources: List[str]

    def __init__(self, preset: Optional[str] = None, config_file: Optional[str] = None,
                 overrides: Optional[Dict[Tuple[str, str], Any]] = None) -> None:
        self.defaults = configparser.ConfigParser(interpolation=None)
        self.defaults.read_string(_packaged("defaults.ini"), source="defaults.ini")
        self.parser = configparser.ConfigParser(interpolation=None)
        self.parser.read_dict(self.defaults)
        self.sources = ["defaults.ini"]

        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError("unknown preset '{}', choose from {}".format(
                    preset, ", ".join(PRESETS)))
            self._read_string(_packaged("{}.ini".format(preset)), "preset:{}".format(preset))

        if config_file is not None:
            if not os.path.isfile(config_file):
                raise ConfigError("config file '{}' does not exist".format(config_file))
            with open(config_file, encoding="utf8") as f:
                self._read_string(f.read(), config_file)

        for (section, key), value in (overrides or {}).items():
            if value is None:
                continue
            if isinstance(value, (list, tuple)):
                value = ", ".join(str(v) for v in value)
            self.set(section, key, str(value))

    def _read_string(self, text: str, source: str) -> None:
        layer = configparser.ConfigParser(interpolation=None)
        try:
            layer.read_string(text, source=source)
        except configparser.Error as err:
            raise ConfigError("cannot parse {}: {}".format(source, err))
        for section in layer.sections():
            for key, value in layer[section].items():
                self.set(section, key, value, source)
        self.sources.append(source)
        logging.debug("Read configuration from {}".format(source))

    def set(self, section: str, key: str, value: str, source: str = "command line") -> None:
        # defaults.ini defines every section and key
        if not self.defaults.has_section(section):
            raise ConfigError("{}: unknown section [{}]".format(source, section))
        if key not in self.defaults[section]:
            raise ConfigError("{}: unknown key [{}] {}".format(source, section, key))
        self.parser[section][key] = value

    def raw(self, section: str, key: str) -> str:
        try:
            return self.parser[section][key].strip()
        except KeyError:
            raise ConfigError("[{}] {}: missing".format(section, key))

    def _fail(self, section: str, key: str, message: str) -> ConfigError:
        return ConfigError("[{}] {}: {} (got '{}')".format(section, key, message,
                                                         self.raw(section, key)))

    def is_set(self, section: str, key: str) -> bool:
        return self.raw(section, key) != ""

    def get_int(self, section: str, key: str, minimum: Optional[int] = None) -> int:
        try:
            value = int(self.raw(section, key))
        except ValueError:
            raise self._fail(section, key, "expected an integer")
        if minimum is not None and value < minimum:
            raise self._fail(section, key, "must be at least {}".format(minimum))
        return value

    def get_float(self, section: str, key: str, positive: bool = False,
                  non_negative: bool = False) -> float:
        try:
            value = float(self.raw(section, key))
        except ValueError:
            raise self._fail(section, key, "expected a number")
        if not math.isfinite(value):
            raise self._fail(section, key, "must be finite")
        if positive and not value > 0:
            raise self._fail(section, key, "must be positive")
        if non_negative and not value >= 0:
            raise self._fail(section, key, "must be non-negative")
        return value

    def get_optional_int(self, section: str, key: str, minimum: Optional[int] = None
                         ) -> Optional[int]:
        return self.get_int(section, key, minimum) if self.is_set(section, key) else None

    def get_optional_float(self, section: str, key: str) -> Optional[float]:
        return self.get_float(section, key, positive=True) if self.is_set(section, key) else None

    def get_bool(self, section: str, key: str) -> bool:
        value = self.raw(section, key).lower()
        if value in _TRUE:
            return True
        if value in _FALSE:
            return False
        raise self._fail(section, key, "expected yes or no")

    def get_choice(self, section: str, key: str, choices: Sequence[str]) -> str:
        value = self.raw(section, key)
        if value not in choices:
            raise self._fail(section, key, "must be one of {}".format(", ".join(choices)))
        return value

    def get_int_list(self, section: str, key: str) -> List[int]:
        try:
            return [int(part) for part in self.raw(section, key).split(",") if part.strip()]
        except ValueError:
            raise self._fail(section, key, "expected a comma separated list of integers")

    def get_range(self, section: str, key: str) -> Tuple[float, float]:
        parts = [part for part in self.raw(section, key).split(",") if part.strip()]
        try:
            low, high = (float(part) for part in parts)
        except ValueError:
            raise self._fail(section, key, "expected 'low, high'")
        if not 0 < low <= high:
            raise self._fail(section, key, "must satisfy 0 < low <= high")
        return low, high

    def get_optional_range(self, section: str, key: str) -> Optional[Tuple[float, float]]:
        return self.get_range(section, key) if self.is_set(section, key) else None

    @property
    def seed(self) -> int:
        return self.get_int("run", "seed", minimum=0)

    @property
    def output(self) -> str:
        return self.raw("run", "output") or "."

    @property
    def progress(self) -> bool:
        return self.get_bool("run", "progress")

    def threads(self, flag: Optional[int] = None) -> int:
        if flag is not None:
            if flag < 1:
                raise ConfigError("--threads must be at least 1, got {}".format(flag))
            return flag
        env_specified = os.getenv(THREADS_ENV)
        if env_specified is not None:
            try:
                threads = int(env_specified)
            except ValueError:
                threads = 0
            if threads < 1:
                raise ConfigError("{} must be a positive integer, got '{}'".format(
                    THREADS_ENV, env_specified))
            return threads
        return self.get_int("run", "threads", minimum=1)

    def network_spec(self) -> NetworkSpec:
        section = "network"
        kind = self.get_choice(section, "type", NETWORK_TYPES)
        magnitude = self.get_float(section, "magnitude", non_negative=True)
        if kind == "perturbed" and not magnitude < 0.5:
            raise self._fail(section, "magnitude", "must be below 0.5")
        fiber_count = self.get_optional_int(section, "fiber_count", minimum=1)
        target_nodes = self.get_optional_int(section, "target_nodes", minimum=2)
        if kind == "fiber" and fiber_count is None and target_nodes is None:
            raise ConfigError("[network] fiber_count or [network] target_nodes must be set "
                              "for fiber networks")
        return NetworkSpec(
            type=kind,
            domain_side=self.get_float(section, "domain_side", positive=True),
            seed=self.seed,
            m_fine=self.get_int(section, "m_fine", minimum=2),
            magnitude=magnitude,
            pairs=self.get_choice(section, "pairs", net.PAIR_SETS),
            fiber_count=fiber_count,
            target_nodes=target_nodes,
            fiber_length=self.get_optional_float(section, "fiber_length"),
            segments_per_fiber=self.get_int(section, "segments_per_fiber", minimum=1),
            bond_pairs=self.get_choice(section, "bond_pairs", BOND_PAIR_MODES))

    def scheme(self) -> CoefficientScheme:
        section = "coefficients"
        name = self.get_choice(section, "scheme", SCHEMES)
        thickness = self.get_float(section, "thickness", positive=True)
        if name == "homogeneous":
            values = {key: self.get_float(section, key, positive=key in EDGE_COEFFICIENTS,
                                          non_negative=True)
                      for key in EDGE_COEFFICIENTS + PAIR_COEFFICIENTS}
            volume = self.get_optional_float(section, "volume")
            return HomogeneousScheme(volume=volume, thickness=thickness, **values)
        elif name == "random":
            ranges = {key: self.get_range(section, "{}_range".format(key))
                      for key in EDGE_COEFFICIENTS + PAIR_COEFFICIENTS}
            return RandomUniformScheme(ranges, self.get_optional_range(section, "volume_range"),
                                       thickness)

        edge = {key: self.get_float(section, "fiber_{}".format(key), positive=True)
                for key in EDGE_COEFFICIENTS}
        intra = {key: self.get_float(section, "intra_{}".format(key), non_negative=True)
                 for key in PAIR_COEFFICIENTS}
        bond = {key: self.get_float(section, "bond_{}".format(key), non_negative=True)
                for key in PAIR_COEFFICIENTS}
        return FiberScheme(edge, intra, bond, self.get_optional_range(section, "randomize"),
                           thickness)

    def problem(self) -> ProblemSpec:
        section = "problem"
        return ProblemSpec(self.get_choice(section, "kind", PROBLEM_KINDS),
                           self.get_float(section, "force_scale", positive=True),
                           self.get_float(section, "displacement_fraction", non_negative=True))

    def coarse_m(self) -> int:
        return self.get_int("multiscale", "m", minimum=2)

    def loc_factor(self) -> float:
        return self.get_float("multiscale", "loc_factor", positive=True)

    def log_base(self) -> Optional[float]:
        value = self.raw("multiscale", "log_base")
        if value in ("", "e"):
            return None
        base = self.get_float("multiscale", "log_base", positive=True)
        if base == 1.0:
            raise self._fail("multiscale", "log_base", "must not be 1")
        return base

    def asymmetry_bound(self) -> float:
        return self.get_float("multiscale", "asymmetry_bound", positive=True)

    def method(self) -> str:
        return self.get_choice("multiscale", "method", METHODS)

    def study_config(self, threads: int) -> StudyConfig:
        sizes = self.get_int_list("study", "coarse_sizes")
        if len(sizes) < 3:
            raise self._fail("study", "coarse_sizes", "needs at least three coarse sizes")
        if any(m < 2 for m in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise self._fail("study", "coarse_sizes",
                             "must be strictly increasing and at least 2")
        return StudyConfig(self.network_spec(), self.scheme(), self.problem(), sizes,
                           self.loc_factor(), self.log_base(), threads,
                           self.get_bool("study", "record_timing"), self.asymmetry_bound())

    def as_dict(self) -> Dict[str, Dict[str, str]]:
        return {section: {key: self.parser[section][key].strip()
                          for key in sorted(self.parser[section])}
                for section in SECTIONS if self.parser.has_section(section)}

    def canonical_text(self) -> str:
        lines = []
        for section, values in self.as_dict().items():
            for key, value in values.items():
                lines.append("{}.{}={}".format(section, key, value))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf8")).hexdigest()
