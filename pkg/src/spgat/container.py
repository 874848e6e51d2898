"""Binary CSR container used for the wavelet cache and model checkpoints.

A file is a sequence of records. Each record is::

    header   16 bytes  <4sIII  magic b"SPGW", version, n_rows, nnz
    n_cols   int64
    indptr   int64[n_rows + 1]
    indices  int64[nnz]
    data     float32[nnz]

All fields little-endian. Values are stored in single precision.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MAGIC = b"SPGW"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class ContainerError(ValueError):
    pass


def _as_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m) if not sp.issparse(m) else m.tocsr()
    m = m.copy()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def write_records(path, matrices) -> Path:
    path = Path(path)
    with path.open("wb") as fh:
        for m in matrices:
            m = _as_csr(np.atleast_2d(m) if not sp.issparse(m) else m)
            rows, cols = m.shape
            fh.write(_HEADER.pack(MAGIC, VERSION, rows, m.nnz))
            fh.write(np.int64(cols).astype("<i8").tobytes())
            fh.write(m.indptr.astype("<i8").tobytes())
            fh.write(m.indices.astype("<i8").tobytes())
            fh.write(m.data.astype("<f4").tobytes())
    return path


def read_records(path) -> list:
    raw = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(raw):
        if len(raw) - pos < _HEADER.size + 8:
            raise ContainerError(f"{path}: truncated record header at byte {pos}")
        magic, version, rows, nnz = _HEADER.unpack_from(raw, pos)
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic {magic!r} at byte {pos}")
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported container version {version}")
        pos += _HEADER.size
        need = 8 + 8 * (rows + 1) + 8 * nnz + 4 * nnz
        if len(raw) - pos < need:
            raise ContainerError(f"{path}: truncated record payload at byte {pos}")
        cols = int(np.frombuffer(raw, "<i8", 1, pos)[0])
        pos += 8
        indptr = np.frombuffer(raw, "<i8", rows + 1, pos)
        pos += 8 * (rows + 1)
        indices = np.frombuffer(raw, "<i8", nnz, pos)
        pos += 8 * nnz
        data = np.frombuffer(raw, "<f4", nnz, pos).astype(np.float64)
        pos += 4 * nnz
        out.append(sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(rows, cols)))
    return out


def cache_key(graph, s, t, provenance, order=None) -> str:
    h = hashlib.sha256()
    h.update(graph.canonical_bytes())
    h.update(repr((float(s), float(t), str(provenance), order)).encode())
    return h.hexdigest()


class WaveletCache:
    """On-disk cache of ``(psi, psi_inv)`` pairs keyed by graph and wavelet settings."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.spgw"

    def load(self, graph, s, t, provenance, order=None):
        p = self.path(cache_key(graph, s, t, provenance, order))
        if not p.is_file():
            return None
        records = read_records(p)
        if len(records) != 2:
            raise ContainerError(f"{p}: expected 2 records, found {len(records)}")
        return records[0], records[1]

    def store(self, graph, basis) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        key = cache_key(graph, basis.scale, basis.threshold, basis.provenance, basis.order)
        return write_records(self.path(key), [basis.psi, basis.psi_inv])
