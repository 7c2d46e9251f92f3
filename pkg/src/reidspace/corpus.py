"""Embedding corpus data model and on-disk formats.

A corpus is an ordered list of embedding records. Row order is preserved by
every loader and is the canonical iteration order downstream (template
construction, identity splits, score matrices).

Two interchangeable formats:

* ``csv``  -- header ``image_id,identity_id,role,dataset,attr:<name>...,e0,...,e{d-1}``,
  UTF-8, floats written in shortest round-trip decimal form.
* ``bin``  -- magic ``EMB1``, little-endian uint32 count and dimension, then
  ``count * dim`` float32 values row-major, plus a ``<path>.meta.jsonl``
  sidecar holding one JSON object per row (image_id, identity_id, role,
  dataset, attributes).

Vectors are stored as float32 (the binary format's precision); statistics
that need better precision (template means, PCA) are computed in float64.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROLES = ("gallery", "probe")
FORMATS = ("csv", "bin")
_MAGIC = b"EMB1"
_FIXED_COLUMNS = ("image_id", "identity_id", "role", "dataset")


class CorpusError(ValueError):
    """Malformed corpus file or invalid corpus contents."""


@dataclass(eq=False)
class EmbeddingRecord:
    """One image embedding plus its metadata."""

    image_id: str
    identity_id: str
    role: str
    dataset: str
    attributes: dict[str, str] = field(default_factory=dict)
    vector: np.ndarray = None

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.vector.ndim != 1:
            raise CorpusError(f"record {self.image_id!r}: vector must be 1-D")


class EmbeddingCorpus:
    """Immutable ordered collection of records with uniform dimension."""

    def __init__(self, dimension: int, records: list[EmbeddingRecord]):
        if dimension <= 0:
            raise CorpusError("dimension must be positive")
        if not records:
            raise CorpusError("empty corpus")
        seen = set()
        for i, rec in enumerate(records):
            if rec.role not in ROLES:
                raise CorpusError(f"record {i}: unknown role {rec.role!r}")
            if rec.vector.shape != (dimension,):
                raise CorpusError(
                    f"record {i}: expected {dimension} values, got {rec.vector.shape[0]}"
                )
            if not np.all(np.isfinite(rec.vector)):
                raise CorpusError(f"record {i}: non-finite embedding value")
            if rec.image_id in seen:
                raise CorpusError(f"record {i}: duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)
        self.dimension = int(dimension)
        self.records = list(records)
        self.vectors = np.stack([r.vector for r in self.records]).astype(np.float32)

    def __len__(self) -> int:
        return len(self.records)

    def _view(self, role: str) -> "CorpusView":
        idx = [i for i, r in enumerate(self.records) if r.role == role]
        if not idx:
            raise CorpusError(f"no {role} records")
        recs = [self.records[i] for i in idx]
        return CorpusView(
            role=role,
            image_ids=[r.image_id for r in recs],
            identity_ids=[r.identity_id for r in recs],
            datasets=[r.dataset for r in recs],
            vectors=self.vectors[idx],
        )

    def gallery_view(self) -> "CorpusView":
        return self._view("gallery")

    def probe_view(self) -> "CorpusView":
        return self._view("probe")


@dataclass(eq=False)
class CorpusView:
    """Read-only slice of one role's rows, in corpus order."""

    role: str
    image_ids: list[str]
    identity_ids: list[str]
    datasets: list[str]
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass(eq=False)
class TemplateGallery:
    """Per-identity mean of gallery embeddings, one entry per identity.

    Entries follow first appearance of each identity in the corpus. Means
    are computed in float64 regardless of storage precision.
    """

    dimension: int
    identity_ids: list[str]
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.identity_ids)

    @property
    def entries(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.identity_ids, self.vectors))


def build_templates(source) -> TemplateGallery:
    """Average each identity's gallery embeddings into a single template."""
    if isinstance(source, EmbeddingCorpus):
        view = source.gallery_view()
    else:
        view = source
    if view.role != "gallery":
        raise CorpusError("templates are built from gallery records")
    order: list[str] = []
    groups: dict[str, list[int]] = {}
    for i, identity in enumerate(view.identity_ids):
        if identity not in groups:
            groups[identity] = []
            order.append(identity)
        groups[identity].append(i)
    vecs = view.vectors.astype(np.float64)
    means = np.stack([vecs[groups[identity]].mean(axis=0) for identity in order])
    return TemplateGallery(dimension=vecs.shape[1], identity_ids=order, vectors=means)


def concat_corpora(corpora: list[EmbeddingCorpus]) -> EmbeddingCorpus:
    """Merge corpora row-wise; dimensions must agree, image ids must not collide."""
    if not corpora:
        raise CorpusError("nothing to merge")
    dim = corpora[0].dimension
    for c in corpora[1:]:
        if c.dimension != dim:
            raise CorpusError(f"dimension mismatch in merge: {c.dimension} != {dim}")
    records = [rec for c in corpora for rec in c.records]
    return EmbeddingCorpus(dim, records)


# ---------------------------------------------------------------------------
# CSV format

def _format_value(x: np.float32) -> str:
    # shortest decimal string that round-trips the float32 value exactly
    return str(np.float32(x))


def _write_csv(corpus: EmbeddingCorpus, path: Path) -> None:
    attr_names = sorted({name for r in corpus.records for name in r.attributes})
    header = list(_FIXED_COLUMNS)
    header += [f"attr:{name}" for name in attr_names]
    header += [f"e{i}" for i in range(corpus.dimension)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in corpus.records:
            row = [rec.image_id, rec.identity_id, rec.role, rec.dataset]
            row += [rec.attributes.get(name, "") for name in attr_names]
            row += [_format_value(v) for v in rec.vector]
            writer.writerow(row)


def _read_csv(path: Path) -> EmbeddingCorpus:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except (StopIteration, UnicodeDecodeError) as exc:
            raise CorpusError(f"{path}: not a corpus csv ({exc})") from exc
        if tuple(header[:4]) != _FIXED_COLUMNS:
            raise CorpusError(
                f"{path}: expected header to start with {','.join(_FIXED_COLUMNS)}"
            )
        attr_names = []
        pos = 4
        while pos < len(header) and header[pos].startswith("attr:"):
            attr_names.append(header[pos][len("attr:"):])
            pos += 1
        dim_cols = header[pos:]
        expected = [f"e{i}" for i in range(len(dim_cols))]
        if not dim_cols or dim_cols != expected:
            raise CorpusError(f"{path}: embedding columns must be e0..e{{d-1}}")
        dim = len(dim_cols)
        n_fields = len(header)
        records = []
        seen = set()
        for row_num, row in enumerate(reader, start=1):
            if len(row) != n_fields:
                raise CorpusError(
                    f"row {row_num}: expected {n_fields} fields, got {len(row)}"
                )
            image_id, identity_id, role, dataset = row[:4]
            if role not in ROLES:
                raise CorpusError(f"row {row_num}: unknown role {role!r}")
            if image_id in seen:
                raise CorpusError(f"row {row_num}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            attributes = {
                name: val for name, val in zip(attr_names, row[4:4 + len(attr_names)]) if val != ""
            }
            values = np.empty(dim, dtype=np.float32)
            for j, text in enumerate(row[4 + len(attr_names):]):
                try:
                    values[j] = np.float32(text)
                except ValueError as exc:
                    raise CorpusError(f"row {row_num}: malformed float {text!r}") from exc
            if not np.all(np.isfinite(values)):
                raise CorpusError(f"row {row_num}: non-finite embedding value")
            records.append(
                EmbeddingRecord(image_id, identity_id, role, dataset, attributes, values)
            )
    if not records:
        raise CorpusError(f"{path}: empty corpus")
    return EmbeddingCorpus(dim, records)


# ---------------------------------------------------------------------------
# EMB1 binary format

def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.jsonl")


def _write_bin(corpus: EmbeddingCorpus, path: Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", len(corpus), corpus.dimension))
        fh.write(np.ascontiguousarray(corpus.vectors, dtype="<f4").tobytes())
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            obj = {
                "image_id": rec.image_id,
                "identity_id": rec.identity_id,
                "role": rec.role,
                "dataset": rec.dataset,
                "attributes": {k: rec.attributes[k] for k in sorted(rec.attributes)},
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _read_bin(path: Path) -> EmbeddingCorpus:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise CorpusError(f"{path}: not an EMB1 file (bad magic)")
        head = fh.read(8)
        if len(head) != 8:
            raise CorpusError(f"{path}: truncated header")
        count, dim = struct.unpack("<II", head)
        if count == 0:
            raise CorpusError(f"{path}: empty corpus")
        if dim == 0:
            raise CorpusError(f"{path}: zero dimension")
        payload = fh.read(count * dim * 4)
        if len(payload) != count * dim * 4:
            raise CorpusError(f"{path}: truncated payload")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise CorpusError(f"{path}: missing sidecar {sidecar.name}")
    records = []
    with open(sidecar, "r", encoding="utf-8") as fh:
        for row_num, line in enumerate(fh, start=1):
            if row_num > count:
                raise CorpusError(f"{sidecar}: more metadata rows than vectors")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{sidecar} row {row_num}: invalid JSON") from exc
            for key in ("image_id", "identity_id", "role", "dataset"):
                if key not in obj:
                    raise CorpusError(f"{sidecar} row {row_num}: missing {key}")
            if obj["role"] not in ROLES:
                raise CorpusError(f"{sidecar} row {row_num}: unknown role {obj['role']!r}")
            records.append(
                EmbeddingRecord(
                    obj["image_id"],
                    obj["identity_id"],
                    obj["role"],
                    obj["dataset"],
                    dict(obj.get("attributes", {})),
                    vectors[row_num - 1],
                )
            )
    if len(records) != count:
        raise CorpusError(f"{sidecar}: expected {count} metadata rows, got {len(records)}")
    return EmbeddingCorpus(dim, records)


def load_corpus(path, format: str = None) -> EmbeddingCorpus:
    """Load a corpus; format defaults from the file suffix (.csv else bin)."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"{path}: no such file")
    if format is None:
        format = "csv" if path.suffix == ".csv" else "bin"
    if format not in FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}")
    return _read_csv(path) if format == "csv" else _read_bin(path)


def write_corpus(corpus: EmbeddingCorpus, path, format: str = None) -> None:
    """Write a corpus; format defaults from the file suffix (.csv else bin)."""
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix == ".csv" else "bin"
    if format not in FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}")
    if format == "csv":
        _write_csv(corpus, path)
    else:
        _write_bin(corpus, path)
