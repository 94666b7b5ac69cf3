"""Versioned on-disk formats.

JSON containers carry `format_version` and `kind` at the top and write one
record per line, so files diff cleanly. Floats are written with repr and
read back bit-identically. Text tables use 17 significant digits.
Every file is written to `<path>.part` first and renamed into place.
"""

import csv
import io
import json
import logging
import os

import numpy as np
import scipy.sparse as sparse

from typing import cast, Any, Dict, Iterable, List, Optional, Sequence, Tuple

from . import network as net
from .errors import FormatError
from .network import Network

FORMAT_VERSION = "1.0"

NETWORK = "network"
SYSTEM = "system"
SOLUTION = "solution"
STUDY_METADATA = "study_metadata"
MANIFEST = "manifest"
KINDS = (NETWORK, SYSTEM, SOLUTION, STUDY_METADATA, MANIFEST)

MANIFEST_NAME = "manifest.json"

STUDY_COLUMNS = ("m", "H", "ell", "rel_l2", "rel_energy", "wall_seconds")


def _g17(value: float) -> str:
    return "{:.17g}".format(value)


def atomic_write(path: str, text: str) -> None:
    part_path = path + ".part"
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(part_path, "w", encoding="utf8", newline="") as out:
        out.write(text)
    os.rename(part_path, path)
    logging.debug("Wrote '{}'".format(path))


def _container(kind: str, header: Dict[str, Any],
               sections: Sequence[Tuple[str, Iterable[Any]]] = ()) -> str:
    lines = ["{",
             '"format_version": {},'.format(json.dumps(FORMAT_VERSION)),
             '"kind": {},'.format(json.dumps(kind)),
             '"header": {}{}'.format(json.dumps(header, sort_keys=True),
                                     "," if sections else "")]
    for index, (name, records) in enumerate(sections):
        body = [json.dumps(record) for record in records]
        lines.append('"{}": ['.format(name))
        lines.append(",\n".join(body))
        lines.append("]" + ("," if index < len(sections) - 1 else ""))
    lines.append("}")
    return "\n".join(line for line in lines if line) + "\n"


def read_container(path: str, kind: Optional[str] = None) -> Dict[str, Any]:
    with open(path, encoding="utf8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as err:
            raise FormatError("'{}' is not a fibernet file: {}".format(path, err))
    if not isinstance(data, dict) or "format_version" not in data or "kind" not in data:
        raise FormatError("'{}' is not a fibernet file".format(path))
    if data["format_version"] != FORMAT_VERSION:
        raise FormatError("'{}' has format version {}, this fibernet reads {}".format(
            path, data["format_version"], FORMAT_VERSION))
    if kind is not None and data["kind"] != kind:
        raise FormatError("'{}' holds a {}, expected a {}".format(path, data["kind"], kind))
    return cast(Dict[str, Any], data)


def write_network(path: str, network: Network) -> None:
    header = {"domain_side": network.domain_side, "seed": network.seed,
              "generator": network.generator, "scheme": network.scheme,
              "removed": network.removed,
              "counts": {"nodes": network.n_nodes, "edges": network.n_edges,
                         "pairs": network.n_pairs}}
    nodes = ({"id": node.id, "x": node.position[0], "y": node.position[1],
              "tag": node.boundary_tag} for node in network.nodes())
    edges = ({"id": edge.id, "i": edge.nodes[0], "j": edge.nodes[1], "k": edge.k,
              "a": edge.a, "w": edge.w, "fiber": edge.fiber_id} for edge in network.edges())
    pairs = ({"id": pair.id, "e1": pair.edges[0], "e2": pair.edges[1], "center": pair.center,
              "kappa": pair.kappa, "V": pair.volume, "eta": pair.eta, "gamma": pair.gamma,
              "kind": pair.kind} for pair in network.pairs())
    atomic_write(path, _container(NETWORK, header,
                                  [("nodes", nodes), ("edges", edges), ("pairs", pairs)]))


def _checked_ids(records: List[Dict[str, Any]], name: str, path: str) -> None:
    for index, record in enumerate(records):
        if record.get("id") != index:
            raise FormatError("'{}': {} record {} has id {}".format(
                path, name, index, record.get("id")))


def read_network(path: str) -> Network:
    data = read_container(path, NETWORK)
    try:
        header = data["header"]
        nodes, edges, pairs = data["nodes"], data["edges"], data["pairs"]
        for name, records in (("node", nodes), ("edge", edges), ("pair", pairs)):
            _checked_ids(records, name, path)

        edge_nodes = np.array([[e["i"], e["j"]] for e in edges], dtype=np.int64).reshape(-1, 2)
        pair_edges = np.array([[p["e1"], p["e2"]] for p in pairs],
                              dtype=np.int64).reshape(-1, 2)
        pair_center = np.array([p["center"] for p in pairs], dtype=np.int64)
        pair_outer = np.array([[net._other_end(edge_nodes[e], c) for e in edge_ids]
                               for edge_ids, c in zip(pair_edges, pair_center)],
                              dtype=np.int64).reshape(-1, 2)
        fiber = [net.NO_FIBER if e["fiber"] is None else e["fiber"] for e in edges]

        return Network(
            domain_side=header["domain_side"],
            positions=np.array([[n["x"], n["y"]] for n in nodes], dtype=np.float64),
            tags=np.array([net.BOUNDARY_TAGS.index(n["tag"]) for n in nodes], dtype=np.int8),
            edge_nodes=edge_nodes,
            edge_k=[e["k"] for e in edges], edge_a=[e["a"] for e in edges],
            edge_w=[e["w"] for e in edges], edge_fiber=fiber,
            pair_edges=pair_edges, pair_center=pair_center, pair_outer=pair_outer,
            pair_kappa=[p["kappa"] for p in pairs], pair_volume=[p["V"] for p in pairs],
            pair_eta=[p["eta"] for p in pairs], pair_gamma=[p["gamma"] for p in pairs],
            pair_kind=[net.PAIR_KINDS.index(p["kind"]) for p in pairs],
            seed=header.get("seed"), generator=header.get("generator"),
            scheme=header.get("scheme"), removed=header.get("removed"))
    except (KeyError, TypeError, ValueError, IndexError) as err:
        raise FormatError("'{}' is not a valid network file: {!r}".format(path, err))


def coordinate_text(matrix: sparse.spmatrix) -> str:
    """`row col value` lines, 0-based, sorted row-major."""
    coo = sparse.coo_matrix(matrix)
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    lines = ["{} {} {}".format(int(r), int(c), _g17(v))
             for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order])]
    return "\n".join(lines) + ("\n" if lines else "")


def write_matrix(path: str, matrix: sparse.spmatrix) -> None:
    atomic_write(path, coordinate_text(matrix))


def read_matrix(path: str, shape: Tuple[int, int]) -> sparse.csr_matrix:
    rows, cols, values = [], [], []
    with open(path, encoding="utf8") as f:
        for number, line in enumerate(f, start=1):
            fields = line.split()
            if len(fields) != 3:
                raise FormatError("'{}' line {}: expected 'row col value'".format(path, number))
            rows.append(int(fields[0]))
            cols.append(int(fields[1]))
            values.append(float(fields[2]))
    return sparse.csr_matrix((values, (rows, cols)), shape=shape)


def write_system(path: str, system: Any, matrix_file: Optional[str] = None) -> None:
    header = {"n_dofs": system.n_dofs, "nnz": int(system.K.nnz),
              "asymmetry": system.asymmetry,
              "unexpected_asymmetry": system.unexpected_asymmetry,
              "problem": system.problem.describe() if system.problem else None,
              "matrix_file": matrix_file}
    load = ({"dof": int(d), "F": float(f)} for d, f in enumerate(system.F) if f != 0.0)
    constraints = ({"dof": int(d), "value": float(v)}
                   for d, v in zip(system.constrained_dofs, system.constrained_values))
    atomic_write(path, _container(SYSTEM, header, [("load", load),
                                                   ("constraints", constraints)]))


def write_solution(path: str, header: Dict[str, Any],
                   solutions: Dict[str, np.ndarray]) -> None:
    """Displacement vectors by method name, one record per node."""
    names = sorted(solutions)
    n_nodes = len(solutions[names[0]]) // 2 if names else 0
    records = []
    for node in range(n_nodes):
        record: Dict[str, Any] = {"node": node}
        for name in names:
            record[name] = [float(solutions[name][2 * node]),
                            float(solutions[name][2 * node + 1])]
        records.append(record)
    atomic_write(path, _container(SOLUTION, dict(header, methods=names),
                                  [("displacements", records)]))


def read_solution(path: str) -> Dict[str, np.ndarray]:
    data = read_container(path, SOLUTION)
    solutions = {}
    for name in data["header"]["methods"]:
        solutions[name] = np.array([r[name] for r in data["displacements"]],
                                   dtype=np.float64).ravel()
    return solutions


def write_basis(path: str, vectors: Iterable[Tuple[int, np.ndarray]]) -> None:
    """Multiscale basis as `coarse_dof dof value` lines."""
    lines = []
    for coarse_dof, psi in vectors:
        support = np.flatnonzero(psi)
        lines.extend("{} {} {}".format(coarse_dof, int(d), _g17(psi[d])) for d in support)
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def study_csv(rows: Iterable[Any]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(STUDY_COLUMNS)
    for row in rows:
        wall = "" if row.wall_seconds is None else _g17(row.wall_seconds)
        writer.writerow([row.m, _g17(row.H), _g17(row.ell), _g17(row.rel_l2),
                         _g17(row.rel_energy), wall])
    return out.getvalue()


def write_study_csv(path: str, rows: Iterable[Any]) -> None:
    atomic_write(path, study_csv(rows))


def read_study_csv(path: str) -> List[Dict[str, str]]:
    with open(path, encoding="utf8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != STUDY_COLUMNS:
            raise FormatError("'{}' does not have the study columns {}".format(
                path, ",".join(STUDY_COLUMNS)))
        return list(reader)


def write_study_metadata(path: str, metadata: Dict[str, Any]) -> None:
    atomic_write(path, _container(STUDY_METADATA, metadata))


def write_manifest(directory: str, manifest: Dict[str, Any]) -> str:
    path = os.path.join(directory, MANIFEST_NAME)
    artifacts = manifest.get("artifacts", {})
    for name in artifacts.values():
        if not os.path.exists(os.path.join(directory, name)):
            raise FormatError("manifest references missing artifact '{}'".format(name))
    atomic_write(path, _container(MANIFEST, manifest))
    return path


def remove_manifest(directory: str) -> None:
    path = os.path.join(directory, MANIFEST_NAME)
    if os.path.exists(path):
        logging.debug("Removing stale manifest '{}'".format(path))
        os.remove(path)


def describe_file(path: str) -> Dict[str, Any]:
    """Header metadata of any fibernet output file."""
    if path.endswith(".csv"):
        rows = read_study_csv(path)
        return {"kind": "study_table", "rows": len(rows),
                "m": [int(row["m"]) for row in rows]}
    if path.endswith(".coo"):
        with open(path, encoding="utf8") as f:
            count = sum(1 for _ in f)
        return {"kind": "coordinate_text", "entries": count}

    data = read_container(path)
    description = {"kind": data["kind"], "format_version": data["format_version"]}
    description.update(data["header"])
    for key, value in data.items():
        if isinstance(value, list):
            description[key] = len(value)
    return description
