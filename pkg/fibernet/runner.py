import argparse
import json
import logging
import os
import time

import numpy as np

from typing import Any, Dict, List, Optional

from . import analysis
from . import multiscale as ms
from . import storage
from . import __version__
from .assembly import assemble_stiffness, build_problem
from .config import Settings
from .errors import NumericalError
from .models import derive_seeds, generate_network
from .network import Network

NETWORK_FILE = "network.json"
SYSTEM_FILE = "system.json"
MATRIX_FILE = "matrix.coo"
SOLUTION_FILE = "solution.json"
BASIS_FILE = "basis.coo"
STUDY_FILE = "study.csv"
STUDY_METADATA_FILE = "study_meta.json"


class FibernetRun:
    """One command execution: resolves inputs, computes and writes artifacts.

    Artifacts go into the output directory; the manifest listing them is
    removed first and written last.
    """

    settings: Settings
    config: argparse.Namespace
    output: str
    artifacts: Dict[str, str]

    def __init__(self, settings: Settings, config: argparse.Namespace) -> None:
        self.settings = settings
        self.config = config
        self.output = settings.output
        self.artifacts = {}

    def __path(self, role: str, name: str) -> str:
        self.artifacts[role] = name
        return os.path.join(self.output, name)

    def __threads(self) -> int:
        return self.settings.threads(getattr(self.config, "threads", None))

    def __seeds(self) -> Dict[str, int]:
        geometry, coefficients = derive_seeds(self.settings.seed)
        return {"seed": self.settings.seed, "geometry": geometry, "coefficients": coefficients}

    def __write_manifest(self, extra: Optional[Dict[str, Any]] = None) -> None:
        manifest = {"command": self.config.command,
                    "config": getattr(self.config, "config", None),
                    "preset": getattr(self.config, "preset", None),
                    "sources": self.settings.sources,
                    "parameters": self.settings.as_dict(),
                    "config_hash": self.settings.digest(),
                    "seeds": self.__seeds(),
                    "artifacts": dict(self.artifacts),
                    "format_versions": {"container": storage.FORMAT_VERSION},
                    "fibernet_version": __version__}
        manifest.update(extra or {})
        storage.write_manifest(self.output, manifest)

    def __load_network(self) -> Network:
        if self.config.network is not None:
            logging.info("Loading network from '{}'".format(self.config.network))
            return storage.read_network(self.config.network)
        return generate_network(self.settings.network_spec(), self.settings.scheme())

    def cmd_generate(self) -> int:
        network = generate_network(self.settings.network_spec(), self.settings.scheme())
        storage.write_network(self.__path("network", NETWORK_FILE), network)
        self.__write_manifest({"network": {"nodes": network.n_nodes, "edges": network.n_edges,
                                           "pairs": network.n_pairs}})
        print("{}: {} nodes, {} edges, {} edge pairs".format(
            os.path.join(self.output, NETWORK_FILE), network.n_nodes, network.n_edges,
            network.n_pairs))
        return 0

    def cmd_solve(self) -> int:
        network = self.__load_network()
        system = build_problem(network, assemble_stiffness(network,
                                                           self.settings.asymmetry_bound()),
                               self.settings.problem())
        method = self.settings.method()
        compare = bool(self.config.compare)
        solutions: Dict[str, np.ndarray] = {}
        header: Dict[str, Any] = {"problem": system.problem.describe() if system.problem else None,
                                  "n_dofs": system.n_dofs}

        if method == "exact" or compare:
            solutions["exact"] = analysis.solve_reference(system)

        basis = None
        if method == "lod" or compare:
            m = self.settings.coarse_m()
            H = network.domain_side / m
            ell = ms.localization_radius(H, m, self.settings.loc_factor(),
                                         self.settings.log_base())
            start = time.perf_counter()
            solutions["lod"], basis = analysis.lod_solution(network, system, m, ell,
                                                            self.__threads())
            logging.info("Multiscale solve with m={} took {:.1f}s".format(
                m, time.perf_counter() - start))
            header.update(m=m, H=H, ell=ell, basis=ms.describe_basis(basis))

        lines: List[str] = []
        if compare:
            try:
                errors = analysis.relative_errors(solutions["exact"], solutions["lod"],
                                                  system.K)
            except ValueError as err:
                raise NumericalError("cannot compare solutions: {}".format(err))
            header["errors"] = errors
            lines.extend("{} = {:.17g}".format(name, value) for name, value in errors.items())

        storage.write_solution(self.__path("solution", SOLUTION_FILE), header, solutions)
        matrix_file = None
        if self.config.export_matrix:
            storage.write_matrix(self.__path("matrix", MATRIX_FILE), system.K)
            matrix_file = MATRIX_FILE
        storage.write_system(self.__path("system", SYSTEM_FILE), system, matrix_file)
        if self.config.dump_basis:
            if basis is None:
                logging.warning("--dump-basis needs the lod method; no basis written")
            else:
                storage.write_basis(self.__path("basis", BASIS_FILE),
                                    ms.basis_vectors(system, basis))

        self.__write_manifest()
        for line in lines:
            print(line)
        return 0

    def cmd_study(self) -> int:
        study = self.settings.study_config(self.__threads())
        start = time.perf_counter()
        result = analysis.run_study(study)
        logging.info("Study finished in {:.1f}s".format(time.perf_counter() - start))

        storage.write_study_csv(self.__path("table", STUDY_FILE), result.rows)
        metadata = dict(result.metadata, slopes=result.fit.describe(),
                        config_hash=self.settings.digest(), coarse_sizes=study.coarse_sizes,
                        fibernet_version=__version__)
        storage.write_study_metadata(self.__path("metadata", STUDY_METADATA_FILE), metadata)
        self.__write_manifest()

        for line in analysis.summarize(result):
            print(line)
        return 0

    def cmd_info(self) -> int:
        description = storage.describe_file(self.config.file)
        for key in sorted(description):
            value = description[key]
            if isinstance(value, (dict, list)):
                value = json.dumps(value, sort_keys=True)
            print("{}: {}".format(key, value))
        return 0

    def run(self) -> int:
        command = self.config.command
        if command == "info":
            return self.cmd_info()

        storage.remove_manifest(self.output)
        if command == "generate":
            return self.cmd_generate()
        elif command == "solve":
            return self.cmd_solve()
        elif command == "study":
            return self.cmd_study()
        raise ValueError("Unknown command '{}'".format(command))
