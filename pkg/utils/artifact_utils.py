"""
Artifact persistence for pipeline runs.

Interaction matrices are text triplets with a provenance column, the
similarity matrix and the embeddings are small binary containers with a
magic header. Every writer is deterministic, so re-running a stage on
unchanged inputs reproduces identical bytes.
"""

import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import scipy.sparse as sp
import yaml

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.matrix import EmbeddingTable, InteractionMatrix, Provenance, SimilarityMatrix, from_arrays
from src.models import ParseError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SIMILARITY_MAGIC = b"SADS"
EMBEDDING_MAGIC = b"SADE"

_SIMILARITY_HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("n_items", "<i8"), ("nnz", "<i8")])
_EMBEDDING_HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("n_users", "<i8"),
                              ("n_items", "<i8"), ("dim", "<i8")])

PathLike = Union[str, Path]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def sha256_file(path: PathLike) -> str:
    """Hex SHA-256 digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# =============================================================================
# Interaction matrices
# =============================================================================

def write_interactions(path: PathLike, M: InteractionMatrix) -> Path:
    """Write `# n_users n_items nnz` then `user item weight provenance` rows"""
    path = _prepare(path)
    users, items, weights, provenance = M.to_records()
    labels = [Provenance(int(p)).label for p in provenance]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# {M.n_users} {M.n_items} {M.nnz}\n")
        for u, i, w, label in zip(users, items, weights, labels):
            f.write(f"{u}\t{i}\t{float(w)!r}\t{label}\n")
    return path


def read_interactions(path: PathLike) -> InteractionMatrix:
    """
    Read a triplet file written by `write_interactions`.

    Raises:
        ParseError: If the header or a row is malformed
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 4 or header[0] != "#":
            raise ParseError("Expected header '# n_users n_items nnz'", str(path), 1)
        try:
            n_users, n_items, nnz = (int(v) for v in header[1:])
        except ValueError:
            raise ParseError("Header sizes must be integers", str(path), 1)

        users: List[int] = []
        items: List[int] = []
        weights: List[float] = []
        provenance: List[int] = []
        for line_number, line in enumerate(f, start=2):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 4:
                raise ParseError(f"Expected 4 fields, got {len(tokens)}", str(path), line_number)
            try:
                users.append(int(tokens[0]))
                items.append(int(tokens[1]))
                weights.append(float(tokens[2]))
                provenance.append(int(Provenance.from_label(tokens[3])))
            except ValueError as e:
                raise ParseError(str(e), str(path), line_number)

    if len(users) != nnz:
        raise ParseError(f"Header announces {nnz} entries, found {len(users)}", str(path))
    try:
        return from_arrays(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
                           np.array(weights), n_users, n_items, np.array(provenance, dtype=np.int8))
    except IndexError as e:
        raise ParseError(str(e), str(path))


# =============================================================================
# Similarity matrix
# =============================================================================

def write_similarity(path: PathLike, S: SimilarityMatrix) -> Path:
    """Binary layout: header, int32 rows, int32 cols, float64 values (column-major order)"""
    path = _prepare(path)
    coo = S.csc.tocoo()
    order = np.lexsort((coo.row, coo.col))
    header = np.array([(SIMILARITY_MAGIC, FORMAT_VERSION, S.n_items, S.nnz)], dtype=_SIMILARITY_HEADER)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(coo.row[order].astype("<i4").tobytes())
        f.write(coo.col[order].astype("<i4").tobytes())
        f.write(coo.data[order].astype("<f8").tobytes())
    return path


def read_similarity(path: PathLike) -> SimilarityMatrix:
    """
    Raises:
        ParseError: If the file is not a similarity container
    """
    raw = Path(path).read_bytes()
    if len(raw) < _SIMILARITY_HEADER.itemsize:
        raise ParseError("Truncated similarity file", str(path))
    header = np.frombuffer(raw[:_SIMILARITY_HEADER.itemsize], dtype=_SIMILARITY_HEADER)[0]
    if bytes(header["magic"]) != SIMILARITY_MAGIC:
        raise ParseError("Not a similarity matrix file (bad magic)", str(path))
    if int(header["version"]) != FORMAT_VERSION:
        raise ParseError(f"Unsupported similarity format version {int(header['version'])}", str(path))

    n_items, nnz = int(header["n_items"]), int(header["nnz"])
    offset = _SIMILARITY_HEADER.itemsize
    expected = offset + nnz * (4 + 4 + 8)
    if len(raw) != expected:
        raise ParseError(f"Expected {expected} bytes, found {len(raw)}", str(path))
    rows = np.frombuffer(raw, dtype="<i4", count=nnz, offset=offset)
    cols = np.frombuffer(raw, dtype="<i4", count=nnz, offset=offset + 4 * nnz)
    values = np.frombuffer(raw, dtype="<f8", count=nnz, offset=offset + 8 * nnz)
    csc = sp.csc_matrix((values.copy(), (rows.astype(np.int64), cols.astype(np.int64))), shape=(n_items, n_items))
    return SimilarityMatrix(csc)


def write_similarity_text(path: PathLike, S: SimilarityMatrix) -> Path:
    """Human-readable `row col value` triplets of the similarity matrix"""
    path = _prepare(path)
    coo = S.csc.tocoo()
    order = np.lexsort((coo.row, coo.col))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# {S.n_items} {S.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            f.write(f"{r}\t{c}\t{float(v)!r}\n")
    return path


# =============================================================================
# Embeddings
# =============================================================================

def write_embeddings(path: PathLike, E: EmbeddingTable) -> Path:
    """Binary layout: header then float32 user rows then float32 item rows"""
    path = _prepare(path)
    header = np.array([(EMBEDDING_MAGIC, FORMAT_VERSION, E.n_users, E.n_items, E.dim)], dtype=_EMBEDDING_HEADER)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(E.user_matrix, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(E.item_matrix, dtype="<f4").tobytes())
    return path


def read_embeddings(path: PathLike) -> EmbeddingTable:
    """
    Raises:
        ParseError: If the file is not an embedding container
    """
    raw = Path(path).read_bytes()
    if len(raw) < _EMBEDDING_HEADER.itemsize:
        raise ParseError("Truncated embedding file", str(path))
    header = np.frombuffer(raw[:_EMBEDDING_HEADER.itemsize], dtype=_EMBEDDING_HEADER)[0]
    if bytes(header["magic"]) != EMBEDDING_MAGIC:
        raise ParseError("Not an embedding file (bad magic)", str(path))
    if int(header["version"]) != FORMAT_VERSION:
        raise ParseError(f"Unsupported embedding format version {int(header['version'])}", str(path))

    n_users, n_items, dim = int(header["n_users"]), int(header["n_items"]), int(header["dim"])
    offset = _EMBEDDING_HEADER.itemsize
    expected = offset + 4 * dim * (n_users + n_items)
    if len(raw) != expected:
        raise ParseError(f"Expected {expected} bytes, found {len(raw)}", str(path))
    users = np.frombuffer(raw, dtype="<f4", count=n_users * dim, offset=offset)
    items = np.frombuffer(raw, dtype="<f4", count=n_items * dim, offset=offset + 4 * n_users * dim)
    return EmbeddingTable(users.reshape(n_users, dim).astype(np.float64),
                          items.reshape(n_items, dim).astype(np.float64))


# =============================================================================
# Id maps, manifests and inspection
# =============================================================================

def write_id_map(path: PathLike, ids: List[str]) -> Path:
    """Two columns: external id, internal index"""
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for index, external in enumerate(ids):
            f.write(f"{external}\t{index}\n")
    return path


def read_id_map(path: PathLike) -> List[str]:
    ids: Dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise ParseError("Expected 'external internal'", str(path), line_number)
            ids[int(tokens[1])] = tokens[0]
    if sorted(ids) != list(range(len(ids))):
        raise ParseError("Internal indices must be 0..n-1", str(path))
    return [ids[i] for i in range(len(ids))]


def write_yaml(path: PathLike, data: Dict[str, Any]) -> Path:
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False, width=120, allow_unicode=True)
    return path


def read_yaml(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def describe_artifact(path: PathLike) -> Dict[str, Any]:
    """
    Header and summary statistics of any artifact a run produces.

    Raises:
        ParseError: If the file type is not recognized
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"File not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)

    info: Dict[str, Any] = {"path": str(path), "bytes": path.stat().st_size, "sha256": sha256_file(path)}
    if magic == SIMILARITY_MAGIC:
        S = read_similarity(path)
        per_column = S.column_nnz()
        info.update({
            "type": "similarity",
            "n_items": S.n_items,
            "nnz": S.nnz,
            "nnz_per_column": {"mean": float(per_column.mean()) if S.n_items else 0.0,
                               "max": int(per_column.max()) if S.n_items else 0},
            "value_range": [float(S.csc.data.min()), float(S.csc.data.max())] if S.nnz else [],
        })
    elif magic == EMBEDDING_MAGIC:
        E = read_embeddings(path)
        info.update({
            "type": "embeddings",
            "n_users": E.n_users,
            "n_items": E.n_items,
            "dim": E.dim,
            "user_norm_mean": float(np.linalg.norm(E.user_matrix, axis=1).mean()) if E.n_users else 0.0,
            "item_norm_mean": float(np.linalg.norm(E.item_matrix, axis=1).mean()) if E.n_items else 0.0,
        })
    elif magic.startswith(b"# "):
        M = read_interactions(path)
        info.update({
            "type": "interactions",
            "n_users": M.n_users,
            "n_items": M.n_items,
            "nnz": M.nnz,
            "provenance": {p.label: M.count(p) for p in Provenance},
            "density": M.nnz / max(M.n_users * M.n_items, 1),
        })
    elif path.suffix in (".yaml", ".yml"):
        info.update({"type": "yaml", "keys": list(read_yaml(path))})
    else:
        raise ParseError(f"Unrecognized artifact type: {path}")
    return info
