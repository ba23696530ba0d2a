"""Readers and writers for the plain-text interchange formats.

All files are UTF-8. Floats are written with repr() so a read-back is
bit-exact, and every writer is deterministic for identical inputs.

Formats:
  class list      class_id<TAB>display name<TAB>{seen|unseen}
  taxonomy        parent_id<TAB>child_id, '#' lines ignored
  word vectors    token v1 ... vd (GloVe text convention)
  classifiers     class_id<TAB>v1 ... vD
  features        sample_id<TAB>class_id<TAB>v1 ... vD
  graph export    JSON header line {n, norm_mode, k, alpha}, then i<TAB>j<TAB>value
  eval report     JSON {setting, n_samples, hit_at:{"1","2","5","10","20"}}
  loss curve      CSV epoch,loss
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InputError
from .graph import ClassIndex
from .harness import EvalReport, ZslDataset
from .tensor import SparseAdjacency

GRAPH_FILES = {
    "taxonomy": "graph_a.tsv",
    "knn": "graph_b.tsv",
    "merged": "graph_c.tsv",
    "normalized": "graph_a_hat.tsv",
}


def _lines(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if line.strip():
                    yield lineno, line
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def read_class_list(path) -> ClassIndex:
    """Seen classes come first in file order, then unseen in file order."""
    seen, unseen = [], []
    for lineno, line in _lines(path):
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected 3 tab-separated fields")
        cid, display, role = parts
        if role == "seen":
            seen.append((cid, display))
        elif role == "unseen":
            unseen.append((cid, display))
        else:
            raise InputError(f"{path}:{lineno}: role must be 'seen' or 'unseen', got {role!r}")
    ordered = seen + unseen
    if not ordered:
        raise InputError(f"{path}: no classes")
    return ClassIndex(
        names=tuple(c for c, _ in ordered),
        n_seen=len(seen),
        n_unseen=len(unseen),
        display_names=tuple(d for _, d in ordered),
    )


def write_class_list(path, index: ClassIndex) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, (cid, display) in enumerate(zip(index.names, index.display_names)):
            role = "seen" if i < index.n_seen else "unseen"
            fh.write(f"{cid}\t{display}\t{role}\n")


def read_taxonomy(path) -> list:
    edges = []
    for lineno, line in _lines(path):
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected parent<TAB>child")
        edges.append((parts[0], parts[1]))
    return edges


def write_taxonomy(path, edges) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for parent, child in edges:
            fh.write(f"{parent}\t{child}\n")


def read_word_vectors(path) -> dict:
    vectors = {}
    dim = None
    for lineno, line in _lines(path):
        parts = line.split(" ")
        if len(parts) < 2:
            raise InputError(f"{path}:{lineno}: expected token and at least one value")
        token = parts[0]
        try:
            vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: bad float: {exc}") from exc
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise InputError(
                f"{path}:{lineno}: vector has {vec.size} values, earlier lines had {dim}"
            )
        vectors[token] = vec
    if not vectors:
        raise InputError(f"{path}: no word vectors")
    return vectors


def write_word_vectors(path, vectors: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in vectors:
            vals = " ".join(repr(float(v)) for v in np.asarray(vectors[token]).reshape(-1))
            fh.write(f"{token} {vals}\n")


def _parse_vector(path, lineno, text):
    try:
        return np.asarray([float(v) for v in text.split(" ") if v], dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"{path}:{lineno}: bad float: {exc}") from exc


def write_matrix_blob(path, matrix: np.ndarray) -> None:
    """One matrix in the checkpoint blob convention: int64-LE rows, cols,
    then row-major float64-LE payload."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(np.asarray(matrix.shape, dtype="<i8").tobytes())
        fh.write(matrix.tobytes())


def read_matrix_blob(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dims = np.frombuffer(fh.read(16), dtype="<i8")
        if dims.size != 2 or dims.min() < 0:
            raise InputError(f"{path}: bad matrix blob size prefix")
        rows, cols = int(dims[0]), int(dims[1])
        payload = fh.read(rows * cols * 8)
        if len(payload) != rows * cols * 8:
            raise InputError(f"{path}: truncated matrix blob")
        if fh.read(1):
            raise InputError(f"{path}: trailing bytes after matrix blob")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)


def read_classifiers(path, index: ClassIndex, expect: str = "seen") -> np.ndarray:
    """Classifier rows keyed by class id.

    expect='seen' requires exactly the seen classes (training targets);
    expect='all' requires every class (oracle/eval use). Rows come back in
    index order. A '.bin' path is read in the checkpoint blob convention
    instead, rows already in index order.
    """
    if expect not in ("seen", "all"):
        raise ValueError(f"expect must be 'seen' or 'all', got {expect!r}")
    wanted = index.names[: index.n_seen] if expect == "seen" else index.names
    if str(path).endswith(".bin"):
        matrix = read_matrix_blob(path)
        if matrix.shape[0] != len(wanted):
            raise InputError(
                f"{path}: blob has {matrix.shape[0]} rows, expected {len(wanted)} "
                f"({expect} classes)"
            )
        return matrix
    rows = {}
    dim = None
    for lineno, line in _lines(path):
        if line.startswith("#"):
            continue
        cid, _, rest = line.partition("\t")
        if not rest:
            raise InputError(f"{path}:{lineno}: expected class_id<TAB>values")
        if cid not in index.names:
            raise InputError(f"{path}:{lineno}: unknown class id {cid!r}")
        if cid in rows:
            raise InputError(f"{path}:{lineno}: duplicate class id {cid!r}")
        vec = _parse_vector(path, lineno, rest)
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise InputError(f"{path}:{lineno}: dim {vec.size}, earlier lines had {dim}")
        rows[cid] = vec
    missing = [c for c in wanted if c not in rows]
    if missing:
        raise InputError(f"{path}: missing classifier rows for: {', '.join(missing[:10])}")
    extra = [c for c in rows if c not in wanted]
    if extra:
        raise InputError(
            f"{path}: unexpected classifier rows (expected {expect} classes only): "
            + ", ".join(extra[:10])
        )
    return np.stack([rows[c] for c in wanted])


def write_classifiers(path, index: ClassIndex, matrix: np.ndarray, scope: str = "seen") -> None:
    names = index.names[: index.n_seen] if scope == "seen" else index.names
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] != len(names):
        raise InputError(f"{matrix.shape[0]} rows for {len(names)} {scope} classes")
    with open(path, "w", encoding="utf-8") as fh:
        for cid, row in zip(names, matrix):
            fh.write(cid + "\t" + " ".join(repr(float(v)) for v in row) + "\n")


def read_features(path, index: ClassIndex):
    """Returns (features, labels) aligned arrays from sample rows."""
    feats, labels = [], []
    dim = None
    for lineno, line in _lines(path):
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected sample_id<TAB>class_id<TAB>values")
        _, cid, rest = parts
        try:
            labels.append(index.position(cid))
        except KeyError:
            raise InputError(f"{path}:{lineno}: unknown class id {cid!r}")
        vec = _parse_vector(path, lineno, rest)
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise InputError(f"{path}:{lineno}: dim {vec.size}, earlier lines had {dim}")
        feats.append(vec)
    if not feats:
        raise InputError(f"{path}: no feature rows")
    return np.stack(feats), np.asarray(labels, dtype=np.int64)


def write_features(path, index: ClassIndex, features: np.ndarray, labels) -> None:
    features = np.asarray(features, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for i, (row, label) in enumerate(zip(features, labels)):
            cid = index.names[int(label)]
            fh.write(f"x{i:05d}\t{cid}\t" + " ".join(repr(float(v)) for v in row) + "\n")


def write_adjacency(path, adj: SparseAdjacency, *, norm_mode: str,
                    k: int, alpha: float) -> None:
    header = {"n": adj.n, "norm_mode": norm_mode, "k": k, "alpha": alpha}
    rows, cols, vals = adj.coo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            fh.write(f"{i}\t{j}\t{repr(v)}\n")


def read_adjacency(path):
    """Returns (SparseAdjacency, header dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
            n = int(header["n"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: bad graph header: {exc}") from exc
        rows, cols, vals = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise InputError(f"{path}:{lineno}: expected i<TAB>j<TAB>value")
            try:
                rows.append(int(parts[0]))
                cols.append(int(parts[1]))
                vals.append(float(parts[2]))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return SparseAdjacency.from_coo(n, rows, cols, vals), header


def write_loss_curve(path, curve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(curve):
            fh.write(f"{epoch},{repr(float(loss))}\n")


def render_eval_report(report: EvalReport) -> str:
    # insertion order is deterministic and keeps hit_at in natural k order
    return json.dumps(report.to_json_dict(), indent=2)


SYNTH_FILES = {
    "classes": "classes.tsv",
    "taxonomy": "taxonomy.tsv",
    "word_vectors": "word_vectors.txt",
    "gt_classifiers": "gt_classifiers.tsv",
    "oracle_classifiers": "oracle_classifiers.tsv",
    "features": "features.tsv",
    "manifest": "manifest.json",
}


def write_synth_fixture(out_dir, dataset: ZslDataset, taxonomy_edges,
                        manifest: dict) -> dict:
    """Write a complete synthetic fixture directory; returns name->path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = dataset.index
    paths = {name: str(out / fname) for name, fname in SYNTH_FILES.items()}
    write_class_list(paths["classes"], index)
    write_taxonomy(paths["taxonomy"], taxonomy_edges)
    # tokens are the class ids themselves, so name embedding reproduces the table
    write_word_vectors(
        paths["word_vectors"],
        {cid: dataset.embeddings.vectors[i] for i, cid in enumerate(index.names)},
    )
    write_classifiers(paths["gt_classifiers"], index, dataset.gt_classifiers, scope="seen")
    if dataset.oracle_classifiers is not None:
        write_classifiers(paths["oracle_classifiers"], index,
                          dataset.oracle_classifiers, scope="all")
    else:
        paths.pop("oracle_classifiers")
    write_features(paths["features"], index, dataset.eval_features, dataset.eval_labels)
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return paths
