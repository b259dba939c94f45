"""Binary containers for datasets ("MA3S") and checkpoints ("MA3C").

Layout shared by both::

    magic (4 bytes) | version u32 | config_len u32 | config JSON | body | crc32 u32

All integers little-endian. The CRC covers everything between the version
field and the CRC itself. Dataset body: sample count u32, then fixed-size
records of little-endian float32 values (see ``_record_layout``).
Checkpoint body: header_len u32, header JSON, then raw little-endian arrays
in header order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..config import STREAMS, ExperimentConfig
from ..encoders import QueryFeatures, StreamObjectFeatures
from .synthetic import Distractor, SyntheticSample

DATASET_MAGIC = b"MA3S"
CHECKPOINT_MAGIC = b"MA3C"
FORMAT_VERSION = 1
MAX_DISTRACTORS = 4
_KIND_CODE = {"appearance": 0.0, "motion": 1.0}
_CODE_KIND = {0: "appearance", 1: "motion"}


class FormatError(ValueError):
    """Base class for container read failures."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def _header(magic: bytes, config: ExperimentConfig) -> bytes:
    cfg = config.to_json().encode()
    return magic + struct.pack("<I", FORMAT_VERSION) + struct.pack("<I", len(cfg)) + cfg


def _open_container(data: bytes, magic: bytes):
    """Validate magic/version and return (config, body offset)."""
    if len(data) < 4 or data[:4] != magic:
        raise MagicError(f"bad magic {data[:4]!r}, expected {magic!r}")
    if len(data) < 12:
        raise TruncatedError("file ends inside the header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version}, expected {FORMAT_VERSION}")
    (clen,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + clen + 4:
        raise TruncatedError("file ends inside the config echo")
    try:
        config = ExperimentConfig.from_json(data[12:12 + clen].decode())
    except (UnicodeDecodeError, ValueError) as exc:
        # the CRC decides whether this is corruption or a genuinely bad config
        _check_crc(data)
        raise FormatError(f"unreadable config echo: {exc}") from None
    return config, 12 + clen


def _check_crc(data: bytes) -> None:
    (stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[8:-4]) != stored:
        raise ChecksumError("CRC-32 mismatch")


def _with_crc(blob: bytes) -> bytes:
    return blob + struct.pack("<I", zlib.crc32(blob[8:]))


# -- datasets -------------------------------------------------------------------

def _record_layout(c: ExperimentConfig):
    """Field name and length of every float32 run in one sample record."""
    T, K, Din = c.T, c.K, c.D_in
    fields = [("meta", 7), ("distractors", 1 + 5 * MAX_DISTRACTORS)]
    for s in STREAMS:
        fields += [(f"{s}.local", T * K * Din), (f"{s}.global", T * Din)]
    fields += [("boxes", T * K * 4), ("words", c.max_words * c.D_w)]
    return fields


def _record_size(c: ExperimentConfig) -> int:
    return 4 * sum(n for _, n in _record_layout(c))


def _encode_sample(s: SyntheticSample, c: ExperimentConfig) -> bytes:
    n = len(s.query.mask)
    if n > c.max_words or len(s.distractors) > MAX_DISTRACTORS:
        raise ValueError(f"sample {s.id} does not fit the record layout")
    parts = [np.asarray([s.id, s.gt[0], s.gt[1], s.object_id, s.pattern_id, s.target_slot, n])]
    d = np.zeros(1 + 5 * MAX_DISTRACTORS)
    d[0] = len(s.distractors)
    for i, x in enumerate(s.distractors):
        d[1 + 5 * i:6 + 5 * i] = [_KIND_CODE[x.kind], x.slot, x.start, x.end, x.other_id]
    parts.append(d)
    for st in STREAMS:
        parts += [s.streams[st].local.ravel(), s.streams[st].global_.ravel()]
    parts.append(s.streams["appearance"].boxes.ravel())
    words = np.zeros((c.max_words, c.D_w), dtype=np.float32)
    words[:n] = s.query.embeddings
    parts.append(words.ravel())
    return np.concatenate([np.asarray(p, dtype="<f4").ravel() for p in parts]).tobytes()


def _decode_sample(buf: bytes, c: ExperimentConfig) -> SyntheticSample:
    flat = np.frombuffer(buf, dtype="<f4")
    out, pos = {}, 0
    for name, n in _record_layout(c):
        out[name] = flat[pos:pos + n]
        pos += n
    meta = out["meta"].astype(np.float64)
    sid, gs, ge, obj, pat, slot, n_words = meta
    d = out["distractors"]
    distractors = []
    for i in range(int(d[0])):
        kind, dslot, a, b, other = d[1 + 5 * i:6 + 5 * i].astype(int)
        distractors.append(Distractor(_CODE_KIND[int(kind)], int(dslot), int(a), int(b), int(other)))
    T, K, Din = c.T, c.K, c.D_in
    boxes = out["boxes"].reshape(T, K, 4).astype(np.float32)
    streams = {s: StreamObjectFeatures(s, out[f"{s}.local"].reshape(T, K, Din).astype(np.float32),
                                       boxes, out[f"{s}.global"].reshape(T, Din).astype(np.float32))
               for s in STREAMS}
    n = int(n_words)
    words = out["words"].reshape(c.max_words, c.D_w)[:n].astype(np.float32)
    return SyntheticSample(int(sid), streams, QueryFeatures(words, np.ones(n, dtype=bool)),
                           (float(gs), float(ge)), int(obj), int(pat), int(slot), distractors)


def dataset_bytes(samples, config: ExperimentConfig) -> bytes:
    blob = bytearray(_header(DATASET_MAGIC, config))
    blob += struct.pack("<I", len(samples))
    for s in samples:
        blob += _encode_sample(s, config)
    return _with_crc(bytes(blob))


def write_dataset(samples, path, config: ExperimentConfig) -> None:
    data = dataset_bytes(samples, config)
    with open(path, "wb") as fh:
        fh.write(data)


def parse_dataset(data: bytes):
    """Return (samples, config) from container bytes; nothing partial on failure."""
    config, pos = _open_container(data, DATASET_MAGIC)
    if len(data) < pos + 4 + 4:
        raise TruncatedError("file ends before the sample count")
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    rec = _record_size(config)
    expected = pos + count * rec + 4
    if len(data) < expected:
        raise TruncatedError(f"expected {expected} bytes for {count} samples, found {len(data)}")
    if len(data) > expected:
        _check_crc(data)
        raise FormatError(f"{len(data) - expected} unexpected trailing bytes")
    _check_crc(data)
    samples = [_decode_sample(data[pos + i * rec:pos + (i + 1) * rec], config)
               for i in range(count)]
    return samples, config


def read_dataset(path, with_config: bool = False):
    with open(path, "rb") as fh:
        samples, config = parse_dataset(fh.read())
    return (samples, config) if with_config else samples


# -- checkpoints -------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Training state: weights, optimizer moments, RNG and early-stopping bookkeeping.

    ``params`` holds the best-eval weights; ``current`` the latest weights,
    from which training resumes.
    """

    config: ExperimentConfig
    params: dict
    current: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    best_score: float = -1.0
    best_epoch: int = 0
    bad_epochs: int = 0
    log: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return checkpoint_bytes(self) == checkpoint_bytes(other)


_GROUPS = ("params", "current", "adam_m", "adam_v")


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    index, arrays = [], []
    for group in _GROUPS:
        for name in sorted(getattr(ck, group)):
            arr = np.ascontiguousarray(getattr(ck, group)[name])
            dt = arr.dtype.newbyteorder("<")
            index.append([group, name, dt.str, list(arr.shape)])
            arrays.append(arr.astype(dt, copy=False).tobytes())
    header = {
        "epoch": ck.epoch, "step": ck.step, "rng_state": ck.rng_state,
        "best_score": ck.best_score, "best_epoch": ck.best_epoch, "bad_epochs": ck.bad_epochs,
        "log": ck.log, "arrays": index,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = _header(CHECKPOINT_MAGIC, ck.config) + struct.pack("<I", len(hb)) + hb + b"".join(arrays)
    return _with_crc(blob)


def parse_checkpoint(data: bytes) -> Checkpoint:
    config, pos = _open_container(data, CHECKPOINT_MAGIC)
    if len(data) < pos + 4 + 4:
        raise TruncatedError("file ends before the checkpoint header")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + hlen + 4:
        raise TruncatedError("file ends inside the checkpoint header")
    try:
        header = json.loads(data[pos:pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        _check_crc(data)
        raise FormatError("unreadable checkpoint header") from None
    pos += hlen
    sizes = [int(np.dtype(dt).itemsize * np.prod(shape, dtype=np.int64))
             for _, _, dt, shape in header["arrays"]]
    expected = pos + sum(sizes) + 4
    if len(data) < expected:
        raise TruncatedError(f"expected {expected} bytes, found {len(data)}")
    _check_crc(data)
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} unexpected trailing bytes")
    groups = {g: {} for g in _GROUPS}
    for (group, name, dt, shape), n in zip(header["arrays"], sizes):
        groups[group][name] = np.frombuffer(data, dtype=np.dtype(dt), count=int(np.prod(shape)),
                                            offset=pos).reshape(shape).copy()
        pos += n
    return Checkpoint(config, groups["params"], groups["current"], groups["adam_m"],
                      groups["adam_v"], header["epoch"], header["step"], header["rng_state"],
                      header["best_score"], header["best_epoch"], header["bad_epochs"],
                      header["log"])


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
