"""
Readers and writers for every file the command line touches.

CSV and JSON-lines go through pandas; the binary vector and index files are
laid out with explicit little-endian numpy dtypes so they are byte-for-byte
reproducible.
"""

import csv
import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from classifier import LabeledFeature, LinearModel
from concept_space import Lexicon, Taxonomy
from errors import InputFormatError, ValidationError
from geo_core import GeoPoint
from geo_localizer import DEFAULT_CITIES, CitySpec, GeoIndex, GeoRecord
from osm_ingest import Polygon
from vector_index import ExactIndex, PQCodebook, PQIndex, decode

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6g"
VEC1_MAGIC = b"VEC1"
VEC1_HEADER = np.dtype([("magic", "S4"), ("dim", "<u4"), ("count", "<u8")])
INDEX_MAGIC = b"GIX1"
INDEX_ARRAY_DTYPES = {"vectors": "<f4", "tables": "<f8", "codes": "u1"}
INDEX_ARRAY_NDIM = {"vectors": 2, "tables": 3, "codes": 2}
INDEX_KIND_ARRAYS = {ExactIndex.kind: ("vectors",), PQIndex.kind: ("tables", "codes")}


def require_file(path) -> str:
    if path is None or not os.path.isfile(path):
        raise ValidationError(f"file not found: {path}")
    return str(path)


def write_frame(frame: pd.DataFrame, path, index: bool = False, index_label: Optional[str] = None):
    """CSV with a header row and decimals at 6 significant digits."""
    frame.to_csv(path, index=index, index_label=index_label, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_frames(outputs: Sequence[Tuple[pd.DataFrame, str, dict]]):
    """Write several frames so that either all of them land or none do.

    Each output is staged next to its target as ``<path>.partial`` and only
    renamed into place once every write succeeded.
    """
    staged: List[Tuple[str, str]] = []
    try:
        for frame, path, options in outputs:
            partial = f"{path}.partial"
            staged.append((partial, path))
            write_frame(frame, partial, **options)
    except OSError:
        for partial, _ in staged:
            if os.path.exists(partial):
                os.remove(partial)
        raise
    for partial, path in staged:
        os.replace(partial, path)


def _read_csv(path, columns: Sequence[str], **kwargs) -> pd.DataFrame:
    path = require_file(path)
    try:
        frame = pd.read_csv(path, **kwargs)
    except pd.errors.EmptyDataError:
        raise InputFormatError(f"{path} is empty; expected a header {','.join(columns)}")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot parse {path}: {e}")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InputFormatError(f"{path} lacks column(s) {', '.join(missing)}")
    return frame


def _numeric(frame: pd.DataFrame, columns: Sequence[str], path) -> pd.DataFrame:
    for column in columns:
        values = pd.to_numeric(frame[column], errors="coerce")
        if values.isna().any():
            row = int(values.isna().to_numpy().argmax())
            raise InputFormatError(f"{path}: non-numeric {column} on data row {row + 1}")
        frame[column] = values.astype(np.float64)
    return frame


# ---------------------------------------------------------------------------
# Points and polygons
# ---------------------------------------------------------------------------


def read_points(path) -> List[Tuple[str, GeoPoint]]:
    """`id,lat,lon` CSV rows in file order."""
    frame = _numeric(_read_csv(path, ["id", "lat", "lon"], dtype={"id": str}), ["lat", "lon"], path)
    if frame["id"].duplicated().any():
        raise ValidationError(f"{path}: duplicate point id {frame['id'][frame['id'].duplicated()].iloc[0]}")
    return [(row.id, GeoPoint(row.lat, row.lon)) for row in frame.itertuples(index=False)]


def points_frame(points: Sequence[Tuple[object, GeoPoint]]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "id": [str(i) for i, _ in points],
            "lat": [p.lat for _, p in points],
            "lon": [p.lon for _, p in points],
        },
        columns=["id", "lat", "lon"],
    )


def read_polygon(path) -> Polygon:
    """`lat,lon` CSV of ring vertices; the closing vertex is optional."""
    frame = _numeric(_read_csv(path, ["lat", "lon"]), ["lat", "lon"], path)
    return Polygon(tuple(zip(frame["lat"], frame["lon"])))


# ---------------------------------------------------------------------------
# VEC1 vector files
# ---------------------------------------------------------------------------


def write_vec1(path, vectors) -> None:
    X = np.ascontiguousarray(vectors, dtype="<f4")
    if X.ndim != 2:
        raise ValidationError("VEC1 holds a 2D array of vectors")
    header = np.zeros(1, dtype=VEC1_HEADER)
    header["magic"], header["dim"], header["count"] = VEC1_MAGIC, X.shape[1], X.shape[0]
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(X.tobytes())


def read_vec1(path) -> np.ndarray:
    """(count, dim) float32 array; ids are the 0-based row positions."""
    with open(require_file(path), "rb") as fh:
        raw = fh.read()
    if len(raw) < VEC1_HEADER.itemsize:
        raise InputFormatError(f"{path} is too short for a VEC1 header")
    header = np.frombuffer(raw, dtype=VEC1_HEADER, count=1)[0]
    if header["magic"] != VEC1_MAGIC:
        raise InputFormatError(f"{path} is not a VEC1 file (magic {bytes(header['magic'])!r})")
    dim, count = int(header["dim"]), int(header["count"])
    expected = VEC1_HEADER.itemsize + 4 * dim * count
    if len(raw) != expected:
        raise InputFormatError(f"{path} holds {len(raw)} bytes, header promises {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=VEC1_HEADER.itemsize, count=dim * count)
    return data.reshape(count, dim).astype(np.float32)


def read_id_sidecar(path, count: int) -> List[str]:
    """One `id` column naming the rows of a VEC1 file."""
    frame = _read_csv(path, ["id"], dtype={"id": str})
    if len(frame) != count:
        raise ValidationError(f"{path} names {len(frame)} ids for {count} vectors")
    return list(frame["id"])


# ---------------------------------------------------------------------------
# JSON-lines datasets
# ---------------------------------------------------------------------------


def _read_jsonl(path) -> pd.DataFrame:
    path = require_file(path)
    with open(path, "rb") as fh:
        if not fh.read().strip():
            return pd.DataFrame()
    try:
        return pd.read_json(path, lines=True, dtype={"id": str}, convert_dates=False)
    except ValueError as e:
        raise InputFormatError(f"cannot parse JSON lines in {path}: {e}")


def _embeddings(frame: pd.DataFrame, path, vectors_path) -> List[np.ndarray]:
    """Inline `embedding` arrays, or `offset` rows of the VEC1 file at vectors_path."""
    table = read_vec1(vectors_path) if vectors_path is not None else None
    out = []
    for i, row in enumerate(frame.to_dict("records")):
        inline = row.get("embedding")
        if isinstance(inline, list):
            out.append(np.asarray(inline, dtype=np.float32))
            continue
        offset = row.get("offset")
        if offset is None or pd.isna(offset):
            raise InputFormatError(f"{path}: record on line {i + 1} has neither embedding nor offset")
        if table is None:
            raise ValidationError(f"{path} refers to vector offsets; pass the VEC1 file as well")
        if not 0 <= int(offset) < len(table):
            raise ValidationError(f"{path}: offset {int(offset)} outside the {len(table)} vectors")
        out.append(table[int(offset)])
    return out


def read_geo_records(path, vectors_path=None, with_embeddings: bool = True) -> List[GeoRecord]:
    """Records in file order; with_embeddings=False reads locations only."""
    frame = _read_jsonl(path)
    if frame.empty:
        return []
    missing = [c for c in ("id", "lat", "lon") if c not in frame.columns]
    if missing:
        raise InputFormatError(f"{path}: records lack field(s) {', '.join(missing)}")
    frame = _numeric(frame, ["lat", "lon"], path)
    if frame["id"].duplicated().any():
        raise ValidationError(f"{path}: duplicate record id {frame['id'][frame['id'].duplicated()].iloc[0]}")
    labels = frame["label"] if "label" in frame.columns else pd.Series([None] * len(frame))
    if with_embeddings:
        embeddings = _embeddings(frame, path, vectors_path)
    else:
        embeddings = [np.empty(0, dtype=np.float32)] * len(frame)
    return [
        GeoRecord(str(rid), GeoPoint(lat, lon), emb, None if pd.isna(label) else str(label))
        for rid, lat, lon, label, emb in zip(frame["id"], frame["lat"], frame["lon"], labels, embeddings)
    ]


def write_geo_records(path, records: Sequence[GeoRecord], vectors_path=None) -> None:
    """Inline embeddings, or offsets into a VEC1 file written next to it."""
    rows = []
    for i, r in enumerate(records):
        row = {"id": r.id, "lat": r.location.lat, "lon": r.location.lon, "label": r.label}
        if vectors_path is None:
            row["embedding"] = [float(x) for x in r.embedding]
        else:
            row["offset"] = i
        rows.append(row)
    if vectors_path is not None and records:
        write_vec1(vectors_path, np.vstack([r.embedding for r in records]))
    pd.DataFrame(rows).to_json(path, orient="records", lines=True, double_precision=15)


def read_labeled_features(path, vectors_path=None) -> List[LabeledFeature]:
    frame = _read_jsonl(path)
    if frame.empty:
        return []
    for column in ("id", "labels"):
        if column not in frame.columns:
            raise InputFormatError(f"{path}: items lack field {column!r}")
    if frame["id"].duplicated().any():
        raise ValidationError(f"{path}: duplicate item id {frame['id'][frame['id'].duplicated()].iloc[0]}")
    embeddings = _embeddings(frame, path, vectors_path)
    items = []
    for rid, labels, emb in zip(frame["id"], frame["labels"], embeddings):
        if not isinstance(labels, list):
            raise InputFormatError(f"{path}: labels of {rid} must be an array")
        items.append(LabeledFeature(str(rid), emb, frozenset(str(label) for label in labels)))
    dims = {len(item.features) for item in items}
    if len(dims) > 1:
        raise ValidationError(f"{path}: embeddings have mixed dimensions {sorted(dims)}")
    return items


def write_labeled_features(path, items: Sequence[LabeledFeature]) -> None:
    rows = [
        {"id": item.id, "labels": sorted(item.labels), "embedding": [float(x) for x in item.features]}
        for item in items
    ]
    pd.DataFrame(rows, columns=["id", "labels", "embedding"]).to_json(
        path, orient="records", lines=True, double_precision=15
    )


# ---------------------------------------------------------------------------
# Models, predictions, splits
# ---------------------------------------------------------------------------


def write_models(path, models: Sequence[LinearModel]) -> None:
    with open(path, "w") as fh:
        json.dump([m.to_dict() for m in models], fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_models(path) -> List[LinearModel]:
    with open(require_file(path)) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise InputFormatError(f"cannot parse model file {path}: {e}")
    if isinstance(data, dict):
        data = [data]
    try:
        models = [LinearModel.from_dict(entry) for entry in data]
    except (KeyError, TypeError) as e:
        raise InputFormatError(f"{path}: model entry lacks {e}")
    dims = {len(m.weights) for m in models}
    if len(dims) > 1:
        raise ValidationError(f"{path}: models have mixed dimensions {sorted(dims)}")
    return models


def read_predictions(path) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """`concept,truth,predicted` CSV (0/1 flags) grouped by concept, in first-seen order."""
    frame = _numeric(_read_csv(path, ["concept", "truth", "predicted"], dtype={"concept": str}), ["truth", "predicted"], path)
    bad = ~frame["truth"].isin([0, 1]) | ~frame["predicted"].isin([0, 1])
    if bad.any():
        raise InputFormatError(f"{path}: truth and predicted must be 0 or 1")
    return {
        concept: (group["truth"].to_numpy(dtype=bool), group["predicted"].to_numpy(dtype=bool))
        for concept, group in frame.groupby("concept", sort=False)
    }


def read_split(path) -> Dict[str, str]:
    frame = _read_csv(path, ["id", "partition"], dtype={"id": str, "partition": str})
    return dict(zip(frame["id"], frame["partition"]))


# ---------------------------------------------------------------------------
# Taxonomy, lexicon, concept bank
# ---------------------------------------------------------------------------


def read_taxonomy(path) -> Taxonomy:
    """`child,parent` edges; the root row has an empty parent."""
    frame = _read_csv(path, ["child", "parent"], dtype=str, keep_default_na=False)
    return Taxonomy.from_edges(zip(frame["child"], frame["parent"]))


def read_lexicon(path, compose_phrases: bool = False) -> Lexicon:
    """One `word v1 v2 ... vd` line per word, space separated."""
    path = require_file(path)
    try:
        frame = pd.read_csv(path, sep=" ", header=None, quoting=csv.QUOTE_NONE, dtype={0: str}, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return Lexicon({}, compose_phrases)
    except pd.errors.ParserError as e:
        raise InputFormatError(f"cannot parse lexicon {path}: {e}")
    # trailing spaces leave an empty last column
    frame = frame.loc[:, ~(frame.astype(str) == "").all()]
    if frame.shape[1] < 2:
        raise InputFormatError(f"{path}: lexicon lines need a word and at least one value")
    values = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    if values.isna().any().any():
        row = int(values.isna().any(axis=1).to_numpy().argmax())
        raise InputFormatError(f"{path}: line {row + 1} has a missing or non-numeric value")
    return Lexicon(dict(zip(frame[0], values.to_numpy(dtype=np.float64))), compose_phrases)


def read_bank(path) -> List[str]:
    """One concept label per line; blank lines are ignored."""
    with open(require_file(path)) as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Index container
# ---------------------------------------------------------------------------


def write_index(path, index: GeoIndex, normalized: bool = False) -> None:
    """
    Magic "GIX1", little-endian u64 header length, a sorted-key JSON header
    (records, backend kind, array shapes), then the raw backend arrays.
    """
    backend = index.backend
    if isinstance(backend, PQIndex):
        arrays = {"tables": backend.codebook.tables, "codes": backend.codes}
    else:
        arrays = {"vectors": backend.vectors}
    header = {
        "kind": backend.kind,
        "dim": backend.dim,
        "normalized": bool(normalized),
        "records": [[r.id, r.location.lat, r.location.lon, r.label] for r in index.records],
        "arrays": [[name, list(arr.shape)] for name, arr in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(np.array([len(blob)], dtype="<u8").tobytes())
        fh.write(blob)
        for name, arr in arrays.items():
            fh.write(np.ascontiguousarray(arr, dtype=INDEX_ARRAY_DTYPES[name]).tobytes())


def _index_header(raw: bytes, path) -> dict:
    length = int(np.frombuffer(raw, dtype="<u8", count=1, offset=4)[0])
    try:
        header = json.loads(raw[12:12 + length])
    except ValueError as e:
        raise InputFormatError(f"{path}: corrupt index header: {e}")
    if not isinstance(header, dict):
        raise InputFormatError(f"{path}: index header is not an object")
    missing = sorted({"kind", "dim", "normalized", "records", "arrays"} - set(header))
    if missing:
        raise InputFormatError(f"{path}: index header lacks {', '.join(missing)}")
    if header["kind"] not in INDEX_KIND_ARRAYS:
        raise InputFormatError(f"{path}: unknown index kind {header['kind']!r}")
    entries = header["arrays"]
    if not isinstance(entries, list) or not all(isinstance(e, list) and len(e) == 2 for e in entries):
        raise InputFormatError(f"{path}: index arrays must be [name, shape] pairs")
    names = tuple(name for name, _ in entries)
    if names != INDEX_KIND_ARRAYS[header["kind"]]:
        raise InputFormatError(f"{path}: a {header['kind']} index stores {INDEX_KIND_ARRAYS[header['kind']]}, found {names}")
    for name, shape in entries:
        if (
            not isinstance(shape, list)
            or len(shape) != INDEX_ARRAY_NDIM[name]
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape)
        ):
            raise InputFormatError(f"{path}: bad shape {shape!r} for index array {name!r}")
    records = header["records"]
    if not isinstance(records, list) or not all(isinstance(r, list) and len(r) == 4 for r in records):
        raise InputFormatError(f"{path}: index records must be [id, lat, lon, label] rows")
    return header


def read_index(path) -> Tuple[GeoIndex, bool]:
    """The index and whether its embeddings were L2-normalized at ingest."""
    with open(require_file(path), "rb") as fh:
        raw = fh.read()
    if raw[:4] != INDEX_MAGIC or len(raw) < 12:
        raise InputFormatError(f"{path} is not an index file")
    header = _index_header(raw, path)
    offset = 12 + int(np.frombuffer(raw, dtype="<u8", count=1, offset=4)[0])
    arrays = {}
    for name, shape in header["arrays"]:
        dtype = np.dtype(INDEX_ARRAY_DTYPES[name])
        count = int(np.prod(shape))
        if offset + count * dtype.itemsize > len(raw):
            raise InputFormatError(f"{path} is truncated")
        arrays[name] = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
        offset += count * dtype.itemsize
    if offset != len(raw):
        raise InputFormatError(f"{path} has {len(raw) - offset} trailing bytes")

    rows = len(arrays["codes"] if header["kind"] == PQIndex.kind else arrays["vectors"])
    if rows != len(header["records"]):
        raise InputFormatError(f"{path}: {len(header['records'])} records but {rows} stored vectors")
    try:
        if header["kind"] == PQIndex.kind:
            tables, codes = arrays["tables"], arrays["codes"]
            if codes.shape[1] != tables.shape[0] or (codes.size and int(codes.max()) >= tables.shape[1]):
                raise InputFormatError(f"{path}: PQ codes do not match the codebook")
            codebook = PQCodebook(tables.astype(np.float64))
            backend = PQIndex(codebook, codes)
            embeddings = decode(backend.codes, codebook).astype(np.float32)
        else:
            backend = ExactIndex(arrays["vectors"])
            embeddings = backend.vectors
        if backend.dim != header["dim"]:
            raise InputFormatError(f"{path}: header says dim {header['dim']}, arrays hold {backend.dim}")
        records = [
            GeoRecord(str(rid), GeoPoint(lat, lon), emb, label)
            for (rid, lat, lon, label), emb in zip(header["records"], embeddings)
        ]
        index = GeoIndex(records, backend)
    except (ValueError, TypeError) as e:
        raise InputFormatError(f"{path}: invalid index contents: {e}")
    return index, bool(header["normalized"])


def read_cities(path, per_city: int) -> List[CitySpec]:
    """`name,lat,lon[,count]` CSV; without a path, the default four cities."""
    if path is None:
        return [CitySpec(c.name, c.center, per_city) for c in DEFAULT_CITIES]
    frame = _numeric(_read_csv(path, ["name", "lat", "lon"], dtype={"name": str}), ["lat", "lon"], path)
    counts = frame["count"] if "count" in frame.columns else [per_city] * len(frame)
    return [
        CitySpec(name, GeoPoint(lat, lon), int(count))
        for name, lat, lon, count in zip(frame["name"], frame["lat"], frame["lon"], counts)
    ]
