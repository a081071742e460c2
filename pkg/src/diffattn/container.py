"""DFA1 binary container.

Layout (all little-endian)::

    b"DFA1" | u32 version | u32 record type | u64 payload length | payload

The payload is ``u32 n_arrays`` followed by, per array, ``u32 ndim``,
``ndim`` x ``u32`` dimensions and ``prod(dims)`` float64 values.  Integer
data (ids, labels, tree links) is stored as float64, exact below 2**53.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .attention import ModelParams
from .data import Dataset
from .exemplars import ClusterOrdering, ExemplarIndex, KdIndex

__all__ = [
    "MAGIC",
    "VERSION",
    "RecordType",
    "ContainerError",
    "MagicError",
    "VersionError",
    "TruncationError",
    "RecordTypeError",
    "ShapeMismatchError",
    "encode",
    "decode",
    "save",
    "load",
    "read_arrays",
]

MAGIC = b"DFA1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class RecordType:
    DATASET = 1
    INDEX = 2
    PARAMS = 3
    MAPS = 4

    names = {1: "dataset", 2: "index", 3: "params", 4: "maps"}


class ContainerError(ValueError):
    """Base class for malformed DFA1 files."""


class MagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncationError(ContainerError):
    pass


class RecordTypeError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass


def encode_arrays(arrays) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(np.ascontiguousarray(a).tobytes())
    return b"".join(out)


def encode(record_type: int, arrays) -> bytes:
    payload = encode_arrays(arrays)
    return _HEADER.pack(MAGIC, VERSION, record_type, len(payload)) + payload


def _take(buf: memoryview, pos: int, n: int, what: str) -> memoryview:
    if pos + n > len(buf):
        raise TruncationError(f"truncated {what}: expected {n} bytes at offset {pos}, only {len(buf) - pos} available")
    return buf[pos : pos + n]


def read_arrays(data: bytes) -> tuple[int, list[np.ndarray]]:
    """Parse a container; returns ``(record_type, arrays)``."""
    buf = memoryview(data)
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise MagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncationError(f"truncated header: expected {_HEADER.size} bytes, got {len(buf)}")
    _, version, rtype, length = _HEADER.unpack(bytes(buf[: _HEADER.size]))
    if version != VERSION:
        raise VersionError(f"unsupported version {version}, expected {VERSION}")
    actual = len(buf) - _HEADER.size
    if actual < length:
        raise TruncationError(f"truncated payload: expected {length} bytes, got {actual}")
    if actual > length:
        raise ShapeMismatchError(f"{actual - length} trailing bytes after a {length}-byte payload")
    payload = buf[_HEADER.size :]
    pos = 0
    (n_arrays,) = struct.unpack("<I", _take(payload, pos, 4, "array count"))
    pos += 4
    arrays = []
    for i in range(n_arrays):
        (ndim,) = struct.unpack("<I", _take(payload, pos, 4, f"array {i} rank"))
        pos += 4
        dims = struct.unpack(f"<{ndim}I", _take(payload, pos, 4 * ndim, f"array {i} shape"))
        pos += 4 * ndim
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = _take(payload, pos, 8 * count, f"array {i} data")
        pos += 8 * count
        arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims))
    if pos != len(payload):
        raise ShapeMismatchError(f"payload declares {length} bytes but arrays use {pos}")
    return rtype, arrays


# -- per-record schemas --------------------------------------------------------

_PARAM_ORDER = ("W_I", "W_Q", "b_q", "W_P", "b_P", "W_A", "b_A", "W_1", "W_2")


def _dataset_arrays(ds: Dataset):
    header = np.array([ds.n_classes, ds.R, ds.D, ds.joint.shape[1], len(ds)], dtype=np.float64)
    locations = np.asarray(ds.meta.get("locations", []), dtype=np.float64)
    return [header, ds.features, ds.questions, ds.answers, ds.joint, ds.reference, ds.annotations, ds.concepts, ds.ids, locations]


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatchError(msg)


def _dataset_from(arrays) -> Dataset:
    _expect(len(arrays) == 10, f"dataset record needs 10 arrays, got {len(arrays)}")
    header, feats, q, ans, joint, ref, ann, conc, ids, loc = arrays
    _expect(header.shape == (5,), f"dataset header has shape {header.shape}")
    C, R, D, E, N = (int(v) for v in header)
    _expect(feats.shape == (N, R, D), f"features {feats.shape} != {(N, R, D)}")
    _expect(q.shape == (N, D), f"questions {q.shape} != {(N, D)}")
    _expect(joint.shape == (N, E), f"joint embeddings {joint.shape} != {(N, E)}")
    _expect(ref.shape == (N, R), f"reference maps {ref.shape} != {(N, R)}")
    for name, a in (("answers", ans), ("concepts", conc), ("ids", ids)):
        _expect(a.shape == (N,), f"{name} {a.shape} != {(N,)}")
    _expect(ann.ndim == 2 and ann.shape[0] == N, f"annotations {ann.shape}")
    meta = {"locations": loc.astype(np.int64).tolist()} if loc.size else {}
    return Dataset(
        features=feats,
        questions=q,
        answers=ans.astype(np.int64),
        joint=joint,
        reference=ref,
        annotations=ann.astype(np.int64),
        concepts=conc.astype(np.int64),
        ids=ids.astype(np.int64),
        n_classes=C,
        meta=meta,
    )


def _index_arrays(ix: ExemplarIndex):
    kd, cl = ix.kd, ix.clusters
    return [
        np.array([cl.seed], dtype=np.float64),
        kd.points,
        kd.row_ids,
        kd.lo,
        kd.hi,
        kd.left,
        kd.right,
        kd.start,
        kd.end,
        cl.centroids,
        cl.assignment,
        cl.ids,
    ]


def _index_from(arrays) -> ExemplarIndex:
    _expect(len(arrays) == 12, f"index record needs 12 arrays, got {len(arrays)}")
    seed, pts, row_ids, lo, hi, left, right, start, end, cent, assign, cids = arrays
    n, dim = pts.shape
    m = left.shape[0]
    _expect(row_ids.shape == (n,), "row ids do not match points")
    _expect(lo.shape == (m, dim) and hi.shape == (m, dim), "node boxes do not match node count")
    _expect(right.shape == start.shape == end.shape == (m,), "node arrays differ in length")
    _expect(assign.shape == cids.shape == (n,), "cluster assignment does not match points")
    _expect(cent.ndim == 2 and cent.shape[1] == dim, "centroid dimension mismatch")
    i64 = lambda a: np.ascontiguousarray(a.astype(np.int64))  # noqa: E731
    kd = KdIndex(
        points=np.ascontiguousarray(pts),
        row_ids=i64(row_ids),
        lo=np.ascontiguousarray(lo),
        hi=np.ascontiguousarray(hi),
        left=i64(left),
        right=i64(right),
        start=i64(start),
        end=i64(end),
    )
    cl = ClusterOrdering(centroids=np.ascontiguousarray(cent), assignment=i64(assign), ids=i64(cids), seed=int(seed[0]))
    return ExemplarIndex(kd, cl)


def _params_arrays(p: ModelParams, model_code: int = -1):
    present = [getattr(p, n) is not None for n in _PARAM_ORDER]
    header = np.array([model_code, float("W_1" in p.frozen)] + [float(x) for x in present])
    return [header] + [getattr(p, n) for n in _PARAM_ORDER if getattr(p, n) is not None]


def _params_from(arrays) -> tuple[ModelParams, int]:
    _expect(len(arrays) >= 1 and arrays[0].shape == (2 + len(_PARAM_ORDER),), "bad params header")
    header = arrays[0]
    present = [bool(v) for v in header[2:]]
    _expect(len(arrays) == 1 + sum(present), f"params header lists {sum(present)} blocks, found {len(arrays) - 1}")
    it = iter(arrays[1:])
    kw = {n: (next(it).copy() if has else None) for n, has in zip(_PARAM_ORDER, present)}
    p = ModelParams(**kw, frozen=frozenset({"W_1", "W_2"}) if header[1] else frozenset())
    D, A = p.W_I.shape
    C = p.W_A.shape[1]
    _expect(p.W_Q.shape == (D, A) and p.b_q.shape == (A,) and p.W_P.shape == (A, 1), "attention block shapes disagree")
    _expect(p.W_A.shape == (D, C) and p.b_A.shape == (C,) and p.b_P.shape == (1,), "answer block shapes disagree")
    return p, int(header[0])


def save(obj, path, *, model_code: int = -1) -> None:
    """Write a Dataset, ExemplarIndex, ModelParams or (M, R) map array."""
    Path(path).write_bytes(to_bytes(obj, model_code=model_code))


def to_bytes(obj, *, model_code: int = -1) -> bytes:
    if isinstance(obj, Dataset):
        return encode(RecordType.DATASET, _dataset_arrays(obj))
    if isinstance(obj, ExemplarIndex):
        return encode(RecordType.INDEX, _index_arrays(obj))
    if isinstance(obj, ModelParams):
        return encode(RecordType.PARAMS, _params_arrays(obj, model_code))
    if isinstance(obj, np.ndarray):
        return encode(RecordType.MAPS, [np.atleast_2d(obj)])
    raise TypeError(f"cannot persist {type(obj).__name__}")


def decode(data: bytes, expect: int | None = None):
    rtype, arrays = read_arrays(data)
    if expect is not None and rtype != expect:
        raise RecordTypeError(
            f"expected a {RecordType.names.get(expect, expect)} record, found {RecordType.names.get(rtype, rtype)}"
        )
    if rtype == RecordType.DATASET:
        return _dataset_from(arrays)
    if rtype == RecordType.INDEX:
        return _index_from(arrays)
    if rtype == RecordType.PARAMS:
        return _params_from(arrays)
    if rtype == RecordType.MAPS:
        _expect(len(arrays) == 1 and arrays[0].ndim == 2, "maps record holds one 2-D array")
        return arrays[0]
    raise RecordTypeError(f"unknown record type {rtype}")


def load(path, expect: int | None = None):
    """Read a container.  Params records return ``(ModelParams, model_code)``."""
    return decode(Path(path).read_bytes(), expect)
