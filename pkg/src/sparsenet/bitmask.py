"""Bitmask storage for sparse weight tensors (``.sdnn`` files).

Stream layout, all integers little-endian::

    "SDNN"  u16 version=1  u16 layer_count
    per weighted layer:
        u8 kind  u8 rank  u32 dims[rank]  u64 P
        ceil(P/8) mask bytes      bit i (LSB-first) set <=> weight i stored
        u64 nnz   f32 values[nnz]
        u64 nbias f32 bias[nbias]

Weights are flattened row-major. Sparse files set a bit iff the weight is
nonzero; dense checkpoints use the same layout with every bit set. A
negative zero counts as zero, so it decodes as +0.0.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List

import numpy as np

MAGIC = b"SDNN"
VERSION = 1
KIND_TAGS = {"fully_connected": 1, "conv2d": 2}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}
FILE_HEADER = 8


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class LayerRecord:
    kind: str
    weight: np.ndarray
    bias: np.ndarray


def records_from_model(model) -> List[LayerRecord]:
    return [LayerRecord(model.layers[i].kind, model.layers[i].weight, model.layers[i].bias) for i in model.weighted]


def _as_records(obj):
    return records_from_model(obj) if hasattr(obj, "weighted") else list(obj)


def encode(obj, dense=False) -> bytes:
    """Serialize a Network (or list of LayerRecord). ``dense=True`` stores every weight."""
    recs = _as_records(obj)
    out = [MAGIC, struct.pack("<HH", VERSION, len(recs))]
    for rec in recs:
        w = np.asarray(rec.weight, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise ValueError("cannot encode non-finite weights")
        flat = w.ravel()
        mask = np.ones(flat.size, dtype=bool) if dense else flat != 0.0
        out.append(struct.pack("<BB", KIND_TAGS[rec.kind], w.ndim))
        out.append(struct.pack(f"<{w.ndim}I", *w.shape))
        out.append(struct.pack("<Q", flat.size))
        out.append(np.packbits(mask, bitorder="little").tobytes())
        values = flat[mask].astype("<f4")
        out.append(struct.pack("<Q", values.size))
        out.append(values.tobytes())
        bias = np.asarray(rec.bias, dtype="<f4").ravel()
        out.append(struct.pack("<Q", bias.size))
        out.append(bias.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated stream: need {n} bytes for {what}, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data) -> List[LayerRecord]:
    """Inverse of ``encode``; unstored weights come back as exact 0.0 (float64)."""
    r = _Reader(data)
    magic = bytes(r.take(4, "magic"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    version, count = r.unpack("<HH", "header")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    recs = []
    for li in range(count):
        start = r.pos
        tag, rank = r.unpack("<BB", f"layer {li} tag")
        if tag not in TAG_KINDS:
            raise FormatError(f"layer {li}: unknown kind tag {tag}", start)
        dims = r.unpack(f"<{rank}I", f"layer {li} dims")
        (P,) = r.unpack("<Q", f"layer {li} size")
        if P != int(np.prod(dims, dtype=np.int64)):
            raise FormatError(f"layer {li}: size {P} does not match dims {dims}", start)
        mask_off = r.pos
        mask_bytes = np.frombuffer(r.take((P + 7) // 8, f"layer {li} mask"), dtype=np.uint8)
        mask = np.unpackbits(mask_bytes, count=P, bitorder="little").astype(bool)
        if P % 8 and mask_bytes[-1] >> (P % 8):
            raise FormatError(f"layer {li}: padding bits set in mask", mask_off)
        nnz_off = r.pos
        (nnz,) = r.unpack("<Q", f"layer {li} value count")
        pop = int(mask.sum())
        if nnz != pop:
            raise FormatError(f"layer {li}: mask popcount {pop} but {nnz} values", nnz_off)
        values = np.frombuffer(r.take(4 * nnz, f"layer {li} values"), dtype="<f4")
        (nb,) = r.unpack("<Q", f"layer {li} bias count")
        bias = np.frombuffer(r.take(4 * nb, f"layer {li} bias"), dtype="<f4").astype(np.float64)
        flat = np.zeros(P)
        flat[mask] = values
        recs.append(LayerRecord(TAG_KINDS[tag], flat.reshape(dims), bias))
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes", r.pos)
    return recs


def load_into(model, recs):
    """Copy decoded records into a Network with the matching architecture."""
    if len(recs) != len(model.weighted):
        raise ValueError(f"{len(recs)} records for {len(model.weighted)} weighted layers")
    for i, rec in zip(model.weighted, recs):
        layer = model.layers[i]
        if rec.kind != layer.kind or rec.weight.shape != layer.weight.shape or rec.bias.shape != layer.bias.shape:
            raise ValueError(
                f"layer {i}: record {rec.kind} {rec.weight.shape}/{rec.bias.shape} "
                f"does not fit {layer.kind} {layer.weight.shape}/{layer.bias.shape}"
            )
        layer.weight = rec.weight.astype(np.float64)
        layer.bias = rec.bias.astype(np.float64)
    return model


def save(path, obj, dense=False):
    data = encode(obj, dense=dense)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())


@dataclass
class SizeReport:
    parameters: int        # sum of P_l over weighted layers
    nonzeros: int
    dense_bytes: int       # 4 bytes per weight
    mask_bytes: int
    value_bytes: int
    bias_bytes: int
    header_bytes: int      # magic, version, counts, per-layer metadata
    bitmask_bytes: int     # exact length of the encoded stream

    @property
    def ratio(self):
        """Dense weight bytes over the whole encoded file."""
        return self.dense_bytes / self.bitmask_bytes

    @property
    def payload_ratio(self):
        """Dense weight bytes over mask plus packed values only."""
        return self.dense_bytes / (self.mask_bytes + self.value_bytes)

    @property
    def parameter_ratio(self):
        return self.parameters / self.nonzeros if self.nonzeros else float("inf")


def size_report(obj) -> SizeReport:
    recs = _as_records(obj)
    P = nnz = mask = bias = header = 0
    header = FILE_HEADER
    for rec in recs:
        w = np.asarray(rec.weight)
        P += w.size
        n = int(np.count_nonzero(w))
        nnz += n
        mask += (w.size + 7) // 8
        bias += 4 * np.asarray(rec.bias).size
        header += 2 + 4 * w.ndim + 8 + 8 + 8
    return SizeReport(
        parameters=P,
        nonzeros=nnz,
        dense_bytes=4 * P,
        mask_bytes=mask,
        value_bytes=4 * nnz,
        bias_bytes=bias,
        header_bytes=header,
        bitmask_bytes=header + mask + 4 * nnz + bias,
    )
