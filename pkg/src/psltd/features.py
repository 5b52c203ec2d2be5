"""Descriptor pooling, training-driven dimension pruning and feature files.

Feature file layout (little-endian)::

    b"PSLT" | version u32 | dim u32 | count u64 | count * dim float32

A sidecar CSV (``<stem>.csv``) maps each row to ``page_id, ordinal, label,
font_tag`` and a JSON sidecar (``<stem>.json``) carries run metadata.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"PSLT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")

NONZERO_FRACTION = 0.01
VARIANCE_FLOOR = 1e-9


@dataclass
class FeatureMatrix:
    vectors: np.ndarray
    labels: list[str]
    page_ids: list[str]
    ordinals: list[int]
    font_tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        n = self.vectors.shape[0] if self.vectors.size else len(self.labels)
        if not self.font_tags:
            self.font_tags = [""] * n
        if not len(self.labels) == len(self.page_ids) == len(self.ordinals) == len(self.font_tags) == n:
            raise ValueError("row metadata lengths do not match the vector count")
        last = {}
        for pid, o in zip(self.page_ids, self.ordinals):
            if pid in last and o <= last[pid]:
                raise ValueError(f"ordinals not strictly increasing within page {pid!r}")
            last[pid] = o

    @classmethod
    def empty(cls, dim: int) -> "FeatureMatrix":
        return cls(np.zeros((0, dim)), [], [], [], [])

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def select(self, rows) -> "FeatureMatrix":
        rows = list(rows)
        return FeatureMatrix(
            self.vectors[rows].reshape(len(rows), self.dim),
            [self.labels[i] for i in rows],
            [self.page_ids[i] for i in rows],
            [self.ordinals[i] for i in rows],
            [self.font_tags[i] for i in rows],
        )

    def pages(self) -> list[str]:
        return list(dict.fromkeys(self.page_ids))

    def rows_of_page(self, page_id: str) -> list[int]:
        return [i for i, p in enumerate(self.page_ids) if p == page_id]

    @classmethod
    def concat(cls, parts: list["FeatureMatrix"], dim: int | None = None) -> "FeatureMatrix":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(dim or 0)
        return cls(
            np.vstack([p.vectors for p in parts]),
            sum((p.labels for p in parts), []),
            sum((p.page_ids for p in parts), []),
            sum((p.ordinals for p in parts), []),
            sum((p.font_tags for p in parts), []),
        )


def poep_pool(rows: np.ndarray, np_group: int) -> np.ndarray:
    """Average consecutive groups of ``np_group`` rows of one page.

    ``np_group == 0`` pools the whole page into a single row; a trailing
    short group is averaged on its own.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if np_group < 0:
        raise ValueError(f"Np must be >= 0, got {np_group}")
    n = rows.shape[0]
    if n == 0:
        return rows.reshape(0, rows.shape[-1] if rows.ndim == 2 else 0)
    size = n if np_group == 0 else np_group
    return np.stack([rows[i:i + size].mean(axis=0) for i in range(0, n, size)])


def group_count(n_rows: int, np_group: int) -> int:
    if n_rows == 0:
        return 0
    return 1 if np_group == 0 else -(-n_rows // np_group)


def pool_matrix(matrix: FeatureMatrix, np_group: int) -> FeatureMatrix:
    """Pool every page of ``matrix`` independently; output ordinals are group
    indices."""
    parts = []
    for pid in matrix.pages():
        rows = matrix.rows_of_page(pid)
        pooled = poep_pool(matrix.vectors[rows], np_group)
        k = pooled.shape[0]
        i0 = rows[0]
        parts.append(FeatureMatrix(
            pooled, [matrix.labels[i0]] * k, [pid] * k, list(range(k)), [matrix.font_tags[i0]] * k,
        ))
    return FeatureMatrix.concat(parts, matrix.dim)


@dataclass
class PruneMask:
    kept: np.ndarray
    source_dim: int
    nonzero_fraction: np.ndarray | None = None
    variance: np.ndarray | None = None

    def to_json(self) -> dict:
        return {"source_dim": int(self.source_dim), "kept": [int(i) for i in self.kept]}

    @classmethod
    def from_json(cls, obj: dict) -> "PruneMask":
        kept = np.asarray(obj["kept"], dtype=np.int64)
        source_dim = int(obj["source_dim"])
        if kept.size and (kept.min() < 0 or kept.max() >= source_dim or np.any(np.diff(kept) <= 0)):
            raise DataError("corrupt prune mask")
        return cls(kept, source_dim)

    @classmethod
    def identity(cls, dim: int) -> "PruneMask":
        return cls(np.arange(dim), dim)


def fit_prune_mask(train: FeatureMatrix | np.ndarray) -> PruneMask:
    """Drop dimensions that are nonzero in under 1% of training rows *and*
    have population variance below 1e-9."""
    x = train.vectors if isinstance(train, FeatureMatrix) else np.asarray(train, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least two training rows to fit a prune mask")
    nz = np.count_nonzero(x, axis=0) / x.shape[0]
    var = x.var(axis=0)
    removed = (nz < NONZERO_FRACTION) & (var < VARIANCE_FLOOR)
    kept = np.flatnonzero(~removed)
    if kept.size == 0:
        raise DataError("every feature dimension was pruned; descriptors look corrupt")
    return PruneMask(kept, x.shape[1], nz, var)


def apply_prune(matrix, mask: PruneMask):
    x = matrix.vectors if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    if x.shape[-1] != mask.source_dim:
        raise ValueError(f"feature dim {x.shape[-1]} does not match mask source dim {mask.source_dim}")
    projected = x[..., mask.kept]
    if isinstance(matrix, FeatureMatrix):
        return FeatureMatrix(projected, list(matrix.labels), list(matrix.page_ids),
                             list(matrix.ordinals), list(matrix.font_tags))
    return projected


# -- persistence -----------------------------------------------------------------

def _sidecars(path: Path) -> tuple[Path, Path]:
    return path.with_suffix(".csv"), path.with_suffix(".json")


def write_rows(path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    count, dim = vectors.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dim, count))
        fh.write(np.ascontiguousarray(vectors).tobytes())


def read_rows(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * dim * count
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size, count=dim * count)
    return arr.reshape(count, dim).astype(np.float64)


def write_features(path, matrix: FeatureMatrix, meta: dict | None = None) -> None:
    path = Path(path)
    csv_path, json_path = _sidecars(path)
    write_rows(path, matrix.vectors)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "page_id", "ordinal", "label", "font_tag"])
        for i in range(len(matrix)):
            w.writerow([i, matrix.page_ids[i], matrix.ordinals[i], matrix.labels[i], matrix.font_tags[i]])
    meta = dict(meta or {})
    meta.update(dim=matrix.dim, count=len(matrix))
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_features(path) -> tuple[FeatureMatrix, dict]:
    path = Path(path)
    csv_path, json_path = _sidecars(path)
    vectors = read_rows(path)
    try:
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        meta = json.loads(json_path.read_text()) if json_path.exists() else {}
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read sidecars of {path}: {exc}") from exc
    if len(rows) != vectors.shape[0]:
        raise DataError(f"{csv_path}: {len(rows)} rows but {vectors.shape[0]} vectors")
    matrix = FeatureMatrix(
        vectors,
        [r["label"] for r in rows],
        [r["page_id"] for r in rows],
        [int(r["ordinal"]) for r in rows],
        [r.get("font_tag", "") for r in rows],
    )
    return matrix, meta
