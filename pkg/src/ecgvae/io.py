"""On-disk formats: EBD beat/record containers and model checkpoints.

EBD file layout::

    b"EBD1" | uint32 LE header length | header JSON (utf-8) | float32 LE payload

The header carries version, kind, n_records, leads, samples_per_record,
fs_hz, has_labels, byte_order and a 64-bit blake2b checksum of the payload.
Per-record metadata lives next to the container in ``<path>.meta.jsonl``.

Checkpoints use the same idea with the magic ``b"ECGVAE01"`` and a layer
manifest (name, offset, shape) in place of the record fields.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArchitectureMismatch, FormatError
from .prep import MeanBeat
from .synth import EcgRecord
from .vae.model import VaeArchitecture, VaeParams, param_shapes

EBD_MAGIC = b"EBD1"
EBD_VERSION = 1
EBD_KINDS = ("raw", "meanbeat", "features")
CKPT_MAGIC = b"ECGVAE01"
CKPT_VERSION = 1


def checksum(payload: bytes) -> str:
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def _dump_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode()


def _read_framed(path, magic: bytes):
    """Split a file into (header dict, payload bytes, payload offset)."""
    raw = Path(path).read_bytes()
    if raw[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic {raw[:len(magic)]!r}, expected {magic!r}", 0)
    pos = len(magic)
    if len(raw) < pos + 4:
        raise FormatError(f"{path}: truncated before header length", pos)
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + hlen:
        raise FormatError(f"{path}: header runs past end of file", pos)
    try:
        header = json.loads(raw[pos:pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})", pos) from None
    pos += hlen
    return header, raw[pos:], pos


def _check_payload(path, payload: bytes, expected_len: int, digest: str, offset: int):
    if len(payload) != expected_len:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header promises {expected_len}",
                          offset + min(len(payload), expected_len))
    if checksum(payload) != digest:
        raise FormatError(f"{path}: payload checksum mismatch", offset)


# ----------------------------------------------------------------------------
# EBD


@dataclass
class EbdData:
    kind: str
    samples: np.ndarray  # (n_records, leads, samples_per_record)
    fs_hz: float = 500.0
    meta: list[dict] = field(default_factory=list)

    @property
    def has_labels(self) -> bool:
        return any(m.get("label") is not None for m in self.meta)


def meta_path(path) -> Path:
    return Path(str(path) + ".meta.jsonl")


def write_ebd(path, data: EbdData):
    if data.kind not in EBD_KINDS:
        raise FormatError(f"unknown EBD kind {data.kind!r}")
    arr = np.ascontiguousarray(np.asarray(data.samples, dtype="<f4"))
    if arr.ndim != 3:
        raise FormatError(f"EBD samples must be 3-D, got shape {arr.shape}")
    if data.meta and len(data.meta) != arr.shape[0]:
        raise FormatError(f"{len(data.meta)} metadata rows for {arr.shape[0]} records")
    payload = arr.tobytes()
    header = {
        "version": EBD_VERSION, "kind": data.kind, "n_records": int(arr.shape[0]),
        "leads": int(arr.shape[1]), "samples_per_record": int(arr.shape[2]), "fs_hz": float(data.fs_hz),
        "has_labels": bool(data.has_labels), "byte_order": "little", "checksum": checksum(payload),
    }
    hb = _dump_header(header)
    with open(path, "wb") as fh:
        fh.write(EBD_MAGIC + struct.pack("<I", len(hb)) + hb + payload)
    with open(meta_path(path), "w") as fh:
        for m in data.meta:
            fh.write(json.dumps(m, sort_keys=True) + "\n")


def read_ebd(path, expect_kind: str | None = None) -> EbdData:
    header, payload, offset = _read_framed(path, EBD_MAGIC)
    for key in ("version", "kind", "n_records", "leads", "samples_per_record", "fs_hz", "byte_order", "checksum"):
        if key not in header:
            raise FormatError(f"{path}: header lacks {key!r}", len(EBD_MAGIC) + 4)
    if header["version"] != EBD_VERSION:
        raise FormatError(f"{path}: unsupported EBD version {header['version']}", len(EBD_MAGIC) + 4)
    if header["byte_order"] != "little":
        raise FormatError(f"{path}: unsupported byte order {header['byte_order']!r}", len(EBD_MAGIC) + 4)
    if expect_kind is not None and header["kind"] != expect_kind:
        raise FormatError(f"{path}: holds {header['kind']!r} data, expected {expect_kind!r}")
    shape = (header["n_records"], header["leads"], header["samples_per_record"])
    _check_payload(path, payload, int(np.prod(shape)) * 4, header["checksum"], offset)
    samples = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    meta = []
    mp = meta_path(path)
    if mp.exists():
        meta = [json.loads(line) for line in mp.read_text().splitlines() if line.strip()]
        if len(meta) != shape[0]:
            raise FormatError(f"{mp}: {len(meta)} metadata rows for {shape[0]} records")
    return EbdData(header["kind"], samples, header["fs_hz"], meta)


def records_to_ebd(records: list[EcgRecord]) -> EbdData:
    meta = [{"patient_id": r.patient_id, "label": r.label, "sex": r.sex, "age": r.age,
             "true_peak_indices": r.true_peak_indices} for r in records]
    return EbdData("raw", np.stack([r.samples for r in records]), records[0].fs_hz if records else 500, meta)


def ebd_to_records(data: EbdData) -> list[EcgRecord]:
    out = []
    for s, m in zip(data.samples, data.meta):
        out.append(EcgRecord(s.astype(float), m["patient_id"], m.get("label"), m.get("sex", 0),
                             m.get("age", 60), int(data.fs_hz), m.get("true_peak_indices")))
    return out


def meanbeats_to_ebd(beats: list[MeanBeat], fs_hz: float = 500.0) -> EbdData:
    meta = [{"patient_id": b.patient_id, "label": b.label, "sex": b.sex, "age": b.age,
             "rr_mean_ms": b.rr_mean_ms, "rr_std_ms": b.rr_std_ms, "n_beats_used": b.n_beats_used}
            for b in beats]
    return EbdData("meanbeat", np.stack([b.samples for b in beats]), fs_hz, meta)


def ebd_to_meanbeats(data: EbdData) -> list[MeanBeat]:
    return [MeanBeat(s.astype(float), m["rr_mean_ms"], m["rr_std_ms"], m["n_beats_used"], m["patient_id"],
                     m.get("label"), m.get("sex", 0), m.get("age", 60))
            for s, m in zip(data.samples, data.meta)]


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: VaeParams, phase: str = "pretrain", extra: dict | None = None):
    """Write parameters as float32 in ``param_shapes`` order."""
    shapes = param_shapes(params.arch)
    manifest, chunks, offset = [], [], 0
    for name, shape in shapes.items():
        arr = np.ascontiguousarray(np.asarray(params[name], dtype="<f4"))
        if arr.shape != tuple(shape):
            raise FormatError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        manifest.append({"name": name, "offset": offset, "shape": list(shape)})
        chunks.append(arr.tobytes())
        offset += arr.size
    payload = b"".join(chunks)
    header = {
        "version": CKPT_VERSION, "architecture": params.arch.to_dict(),
        "rr_stats": np.asarray(params.rr_stats, dtype=float).tolist(), "phase": phase,
        "manifest": manifest, "n_floats": offset, "checksum": checksum(payload), "extra": extra or {},
    }
    hb = _dump_header(header)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<I", len(hb)) + hb + payload)


def _arch_from_header(arch_dict) -> VaeArchitecture:
    d = dict(arch_dict)
    for k in ("channels", "residual_layer_indices", "input_shape"):
        d[k] = tuple(d[k])
    return VaeArchitecture.from_dict(d)


def architecture_diff(a: VaeArchitecture, b: VaeArchitecture) -> list[str]:
    da, db = a.to_dict(), b.to_dict()
    return sorted(k for k in da if da[k] != db.get(k))


def load_checkpoint(path, expect_arch: VaeArchitecture | None = None) -> tuple[VaeParams, dict]:
    """Returns ``(params, header)``; params are float32."""
    header, payload, offset = _read_framed(path, CKPT_MAGIC)
    if header.get("version") != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}", len(CKPT_MAGIC) + 4)
    arch = _arch_from_header(header["architecture"])
    if expect_arch is not None:
        diff = architecture_diff(expect_arch, arch)
        if diff:
            raise ArchitectureMismatch(diff)
    n = int(header["n_floats"])
    total = sum(int(np.prod(m["shape"])) for m in header["manifest"])
    if total != n:
        raise FormatError(f"{path}: manifest covers {total} floats, header says {n}", len(CKPT_MAGIC) + 4)
    _check_payload(path, payload, 4 * n, header["checksum"], offset)
    flat = np.frombuffer(payload, dtype="<f4")
    expected = param_shapes(arch)
    tensors = {}
    for m in header["manifest"]:
        size = int(np.prod(m["shape"]))
        tensors[m["name"]] = flat[m["offset"]:m["offset"] + size].reshape(m["shape"]).astype(np.float32)
    if set(tensors) != set(expected) or any(tensors[k].shape != tuple(v) for k, v in expected.items()):
        raise FormatError(f"{path}: manifest does not match the architecture's parameter layout")
    tensors = {k: tensors[k] for k in expected}
    return VaeParams(arch, tensors, np.asarray(header["rr_stats"], dtype=float)), header
