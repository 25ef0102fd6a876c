"""Pre-computed document embedding index and token/dimension reduction.

File layout (little-endian)::

    "LITEIDX1"            8 bytes
    version   u32         = 1
    token_dim u32         P'
    tokens    u32         L2'
    doc_count u64
    doc_count records of  [u64 doc_id][f32 x P'*L2', row-major P' x L2']

Records are fixed-size, so a record is found by position. The id lookup is
rebuilt on open from the record ids (sorted, binary search); nothing follows
the records on disk, so ``storage_bytes(header)`` is exactly the file size.
Query and raw document embeddings use the same layout.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from literank.errors import ContractError, IndexFormatError, NotFoundError, ShapeError
from literank.tensor import as_matrix

MAGIC = b"LITEIDX1"
VERSION = 1
HEADER = struct.Struct("<8sIIIQ")
HEADER_BYTES = HEADER.size  # 28
FLOAT_BYTES = 4
ID_BYTES = 8


@dataclass(frozen=True)
class IndexHeader:
    token_dim: int
    tokens_per_doc: int
    doc_count: int
    version: int = VERSION
    float_width: int = 32

    @property
    def record_bytes(self) -> int:
        return ID_BYTES + FLOAT_BYTES * self.token_dim * self.tokens_per_doc

    @property
    def payload_bytes(self) -> int:
        """Embedding bytes only (no ids, no header)."""
        return self.doc_count * FLOAT_BYTES * self.token_dim * self.tokens_per_doc

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.token_dim, self.tokens_per_doc, self.doc_count)


def storage_bytes(header: IndexHeader) -> int:
    return HEADER_BYTES + header.doc_count * header.record_bytes


# -- reductions ------------------------------------------------------------------


def avg_pool_tokens(d, factor: int) -> np.ndarray:
    """Average each run of ``factor`` adjacent token columns."""
    d = as_matrix(d, "document tokens")
    p, l2 = d.shape
    if factor < 1 or l2 % factor:
        raise ContractError(f"pooling factor {factor} does not divide {l2} tokens")
    return d.reshape(p, l2 // factor, factor).mean(axis=2)


def project_tokens(d, proj) -> np.ndarray:
    """Mix token columns: ``D @ proj`` with ``proj`` of shape (L2, L2')."""
    d = as_matrix(d, "document tokens")
    proj = as_matrix(proj, "token projection")
    if d.shape[1] != proj.shape[0]:
        raise ShapeError(f"token projection {proj.shape} does not fit document {d.shape}")
    return d @ proj


def project_dims(d, proj) -> np.ndarray:
    """Reduce token dimension: ``proj @ D`` with ``proj`` of shape (P', P)."""
    d = as_matrix(d, "tokens")
    proj = as_matrix(proj, "dimension projection")
    if proj.shape[1] != d.shape[0]:
        raise ShapeError(f"dimension projection {proj.shape} does not fit tokens {d.shape}")
    return proj @ d


@dataclass
class ReductionSpec:
    """Token reduction (pooling or projection) optionally followed by a dimension projection."""

    avg_pool: int | None = None
    token_proj: np.ndarray | None = None
    dim_proj: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.avg_pool is not None and self.token_proj is not None:
            raise ContractError("choose average pooling or a token projection, not both")

    def apply(self, d) -> np.ndarray:
        d = as_matrix(d, "document tokens")
        if self.avg_pool is not None:
            d = avg_pool_tokens(d, self.avg_pool)
        elif self.token_proj is not None:
            d = project_tokens(d, self.token_proj)
        if self.dim_proj is not None:
            d = project_dims(d, self.dim_proj)
        return d

    def apply_query(self, q) -> np.ndarray:
        """Queries keep their tokens but must share the reduced dimension."""
        q = as_matrix(q, "query tokens")
        return q if self.dim_proj is None else project_dims(q, self.dim_proj)

    def save_sidecars(self, index_path) -> None:
        from literank.nn import save_checkpoint

        base = str(index_path)
        for suffix, proj in ((".tokproj", self.token_proj), (".dimproj", self.dim_proj)):
            if proj is not None:
                save_checkpoint(base + suffix, proj)
            else:
                Path(base + suffix).unlink(missing_ok=True)  # stale from an earlier build

    @classmethod
    def from_sidecars(cls, index_path) -> "ReductionSpec":
        from literank.nn import load_checkpoint

        base = str(index_path)
        tok = load_checkpoint(base + ".tokproj", "projection") if os.path.exists(base + ".tokproj") else None
        dim = load_checkpoint(base + ".dimproj", "projection") if os.path.exists(base + ".dimproj") else None
        return cls(token_proj=tok, dim_proj=dim)


# -- writing ---------------------------------------------------------------------


def write_index(path, docs: Iterable[tuple[int, np.ndarray]], shape: tuple[int, int] | None = None) -> IndexHeader:
    """Write ``(doc_id, P' x L2' matrix)`` pairs in input order.

    ``shape`` fixes (P', L2') up front; it is required when ``docs`` is empty.
    The file is written to a temporary name and renamed, so a failed build
    never leaves a partial index behind.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    seen: set[int] = set()
    count = 0
    try:
        with open(tmp, "wb") as fh:
            fh.write(b"\0" * HEADER_BYTES)
            for doc_id, mat in docs:
                m = as_matrix(mat, f"document {doc_id}")
                if shape is None:
                    shape = m.shape
                elif m.shape != tuple(shape):
                    raise ShapeError(f"document {doc_id} has shape {m.shape}, index holds {tuple(shape)}")
                doc_id = int(doc_id)
                if not 0 <= doc_id < 2**64:
                    raise ContractError(f"doc id {doc_id} does not fit in u64")
                if doc_id in seen:
                    raise ContractError(f"duplicate doc id {doc_id}")
                seen.add(doc_id)
                fh.write(struct.pack("<Q", doc_id))
                fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
                count += 1
            if shape is None:
                raise ContractError("empty index needs an explicit (token_dim, tokens) shape")
            header = IndexHeader(int(shape[0]), int(shape[1]), count)
            fh.seek(0)
            fh.write(header.pack())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return header


def build_index(
    docs: Iterable[tuple[int, np.ndarray]],
    path,
    reduction: ReductionSpec | None = None,
    shape: tuple[int, int] | None = None,
) -> IndexHeader:
    """Reduce each document and write the index; projection matrices go to sidecar files."""
    reduction = reduction or ReductionSpec()
    header = write_index(path, ((i, reduction.apply(d)) for i, d in docs), shape)
    reduction.save_sidecars(path)
    return header


# -- reading ---------------------------------------------------------------------


def read_header(path) -> IndexHeader:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_BYTES)
    if len(raw) < HEADER_BYTES:
        raise IndexFormatError(f"{path}: file shorter than the {HEADER_BYTES}-byte header")
    magic, version, p, l, n = HEADER.unpack(raw)
    if magic != MAGIC:
        raise IndexFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise IndexFormatError(f"{path}: unsupported version {version}")
    if p < 1 or l < 1:
        raise IndexFormatError(f"{path}: invalid shape {p} x {l}")
    return IndexHeader(p, l, n, version)


class DocumentIndex:
    """Read-only view of an index file; safe to share between threads."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self.header = read_header(self.path)
        size = self.path.stat().st_size
        expected = storage_bytes(self.header)
        if size != expected:
            raise IndexFormatError(
                f"{self.path}: size {size} bytes, header implies {expected} "
                f"({self.header.doc_count} records of {self.header.record_bytes} bytes)"
            )
        h = self.header
        self._dtype = np.dtype([("id", "<u8"), ("emb", "<f4", (h.token_dim, h.tokens_per_doc))])
        if h.doc_count:
            self._records = np.memmap(self.path, dtype=self._dtype, mode="r", offset=HEADER_BYTES, shape=(h.doc_count,))
            ids = np.asarray(self._records["id"])
        else:
            self._records = np.zeros(0, dtype=self._dtype)
            ids = np.zeros(0, dtype="<u8")
        self._order = np.argsort(ids, kind="stable")
        self._sorted_ids = ids[self._order]
        self.reduction = ReductionSpec.from_sidecars(self.path)

    @property
    def shape(self) -> tuple[int, int]:
        return self.header.token_dim, self.header.tokens_per_doc

    def __len__(self) -> int:
        return self.header.doc_count

    def __contains__(self, doc_id) -> bool:
        return self._position(int(doc_id)) is not None

    def ids(self) -> list[int]:
        """Doc ids in record order."""
        return [int(i) for i in self._records["id"]]

    def _position(self, doc_id: int) -> int | None:
        if doc_id < 0 or doc_id >= 2**64:
            return None
        j = int(np.searchsorted(self._sorted_ids, np.uint64(doc_id)))
        if j < self._sorted_ids.size and int(self._sorted_ids[j]) == doc_id:
            return int(self._order[j])
        return None

    def load_doc(self, doc_id) -> np.ndarray:
        pos = self._position(int(doc_id))
        if pos is None:
            raise NotFoundError(f"doc id {doc_id} not in index {self.path}")
        return np.array(self._records[pos]["emb"], dtype=np.float64)

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        for rec in self._records:
            yield int(rec["id"]), np.array(rec["emb"], dtype=np.float64)


def open_index(path) -> DocumentIndex:
    return DocumentIndex(path)


def load_doc(index: DocumentIndex, doc_id) -> np.ndarray:
    return index.load_doc(doc_id)
