"""Versioned binary snapshot of a catalog store.

Layout: magic ``DDUP``, format version (u16), section count (u16), then
sections back to back. Each section is ``u8 name-length | name | u64
payload-length | u32 CRC32 | payload``, little-endian throughout.
Vectors serialize as raw float32, PCA and decider parameters as float64
so a round trip reproduces search results and decider outputs bit for
bit. Any checksum or structural failure raises SnapshotError before a
store is constructed - there are no partial loads.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from .decider import DeciderConfig, DeciderModel
from .ivf import IvfIndex
from .pca import PcaModel
from .vectors import VECTOR_DTYPE, Metric, ProductRecord

MAGIC = b"DDUP"
FORMAT_VERSION = 1


class SnapshotError(ValueError):
    pass


# -- section container --------------------------------------------------------


def _write_sections(path, sections: list[tuple[str, bytes]]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", FORMAT_VERSION, len(sections)))
        for name, payload in sections:
            encoded = name.encode("ascii")
            fh.write(struct.pack("<B", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<QI", len(payload), zlib.crc32(payload)))
            fh.write(payload)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise SnapshotError(f"truncated snapshot: wanted {n} bytes, got {len(data)}")
    return data


def _read_sections(path) -> dict[str, bytes]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise SnapshotError("not a DDUP snapshot (bad magic)")
        version, count = struct.unpack("<HH", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version} (expected {FORMAT_VERSION})")
        sections: dict[str, bytes] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<B", _read_exact(fh, 1))
            name = _read_exact(fh, name_len).decode("ascii")
            length, crc = struct.unpack("<QI", _read_exact(fh, 12))
            payload = _read_exact(fh, length)
            if zlib.crc32(payload) != crc:
                raise SnapshotError(f"checksum failure in section {name!r}")
            sections[name] = payload
        return sections


# -- codecs -------------------------------------------------------------------


def _pack_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _unpack_str(buf: io.BytesIO) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def _pack_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr)
    buf.write(struct.pack("<B", len(a.shape)))
    for s in a.shape:
        buf.write(struct.pack("<I", s))
    buf.write(a.tobytes())


def _unpack_array(buf: io.BytesIO, dtype) -> np.ndarray:
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
    n = int(np.prod(shape)) if shape else 1
    itemsize = np.dtype(dtype).itemsize
    return np.frombuffer(buf.read(n * itemsize), dtype=dtype).reshape(shape).copy()


def _encode_records(records: dict[str, ProductRecord]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(records)))
    for rec in records.values():
        _pack_str(buf, rec.id)
        flags = (1 if rec.image_vec is not None else 0) | (2 if rec.category is not None else 0)
        buf.write(struct.pack("<B", flags))
        if rec.category is not None:
            _pack_str(buf, rec.category)
        _pack_array(buf, rec.text_vec.astype(VECTOR_DTYPE))
        if rec.image_vec is not None:
            _pack_array(buf, rec.image_vec.astype(VECTOR_DTYPE))
    return buf.getvalue()


def _decode_records(payload: bytes) -> dict[str, ProductRecord]:
    buf = io.BytesIO(payload)
    (n,) = struct.unpack("<I", buf.read(4))
    records: dict[str, ProductRecord] = {}
    for _ in range(n):
        rid = _unpack_str(buf)
        (flags,) = struct.unpack("<B", buf.read(1))
        category = _unpack_str(buf) if flags & 2 else None
        text = _unpack_array(buf, VECTOR_DTYPE)
        image = _unpack_array(buf, VECTOR_DTYPE) if flags & 1 else None
        records[rid] = ProductRecord(id=rid, text_vec=text, image_vec=image, category=category)
    return records


def _encode_pca(model: PcaModel) -> bytes:
    buf = io.BytesIO()
    _pack_array(buf, model.mean.astype(np.float64))
    _pack_array(buf, model.components.astype(np.float64))
    _pack_array(buf, model.explained_variance.astype(np.float64))
    return buf.getvalue()


def _decode_pca(payload: bytes) -> PcaModel:
    buf = io.BytesIO(payload)
    return PcaModel(
        mean=_unpack_array(buf, np.float64),
        components=_unpack_array(buf, np.float64),
        explained_variance=_unpack_array(buf, np.float64),
    )


def _encode_index(index: IvfIndex, record_order: dict[str, int]) -> bytes:
    buf = io.BytesIO()
    _pack_str(buf, index.metric.value)
    _pack_array(buf, index.centroids.astype(VECTOR_DTYPE))
    buf.write(struct.pack("<I", index.nlist))
    for ids in index._list_ids:
        buf.write(struct.pack("<I", len(ids)))
        for rid in ids:
            buf.write(struct.pack("<I", record_order[rid]))
    return buf.getvalue()


def _decode_index(payload: bytes, records: dict[str, ProductRecord]) -> IvfIndex:
    from .ivf import _prepare  # storage transform must match build/insert

    buf = io.BytesIO(payload)
    metric = Metric(_unpack_str(buf))
    centroids = _unpack_array(buf, VECTOR_DTYPE)
    (nlist,) = struct.unpack("<I", buf.read(4))
    ordered = list(records.values())
    index = IvfIndex(centroids, metric)
    for c in range(nlist):
        (m,) = struct.unpack("<I", buf.read(4))
        members = [ordered[struct.unpack("<I", buf.read(4))[0]] for _ in range(m)]
        index._list_ids[c] = [rec.id for rec in members]
        if members:
            stacked = np.stack([rec.text_vec for rec in members]).astype(VECTOR_DTYPE)
            index._list_vecs[c] = _prepare(stacked, metric)
        for rec in members:
            index._id_to_list[rec.id] = c
    return index


def _encode_decider(model: DeciderModel) -> bytes:
    header = {
        "config": {
            "conv_filters": model.config.conv_filters,
            "kernel_size": model.config.kernel_size,
            "hidden_dims": list(model.config.hidden_dims),
            "dropout_rate": model.config.dropout_rate,
            "seed": model.config.seed,
        },
        "input_len": model.input_len,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    raw = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    for v in model.params.values():
        buf.write(np.ascontiguousarray(v, dtype=np.float64).tobytes())
    return buf.getvalue()


def _decode_decider(payload: bytes) -> DeciderModel:
    buf = io.BytesIO(payload)
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode("utf-8"))
    cfg = header["config"]
    config = DeciderConfig(
        conv_filters=cfg["conv_filters"],
        kernel_size=cfg["kernel_size"],
        hidden_dims=tuple(cfg["hidden_dims"]),
        dropout_rate=cfg["dropout_rate"],
        seed=cfg["seed"],
    )
    params = {}
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        params[spec["name"]] = np.frombuffer(buf.read(n * 8), dtype=np.float64).reshape(shape).copy()
    return DeciderModel(config, header["input_len"], params)


# -- store-level API ----------------------------------------------------------


def save_store(store, path) -> None:
    """Serialize a CatalogStore; see module docstring for the format."""
    record_order = {rid: i for i, rid in enumerate(store.records)}
    meta = {
        "record_count": len(store.records),
        "metric": store.metric.value,
        "has_index": store.text_index is not None,
    }
    sections = [
        ("meta", json.dumps(meta).encode("utf-8")),
        ("records", _encode_records(store.records)),
    ]
    if store.text_index is not None:
        sections.append(("index", _encode_index(store.text_index, record_order)))
    if store.pca_text is not None:
        sections.append(("pca_text", _encode_pca(store.pca_text)))
    if store.pca_image is not None:
        sections.append(("pca_image", _encode_pca(store.pca_image)))
    if store.decider is not None:
        sections.append(("decider", _encode_decider(store.decider)))
    _write_sections(path, sections)


def load_store(path):
    """Deserialize a CatalogStore; raises SnapshotError on any corruption."""
    from .pipeline import CatalogStore

    sections = _read_sections(path)
    if "meta" not in sections or "records" not in sections:
        raise SnapshotError("snapshot is missing mandatory sections")
    meta = json.loads(sections["meta"].decode("utf-8"))
    records = _decode_records(sections["records"])
    if len(records) != meta.get("record_count"):
        raise SnapshotError("record count disagrees with metadata")

    store = CatalogStore(metric=Metric(meta["metric"]))
    store.records = records
    if meta.get("has_index"):
        if "index" not in sections:
            raise SnapshotError("metadata promises an index section but none exists")
        store.text_index = _decode_index(sections["index"], records)
    if "pca_text" in sections:
        store.pca_text = _decode_pca(sections["pca_text"])
    if "pca_image" in sections:
        store.pca_image = _decode_pca(sections["pca_image"])
    if "decider" in sections:
        store.decider = _decode_decider(sections["decider"])
    return store
