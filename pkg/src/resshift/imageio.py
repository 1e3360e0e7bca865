"""Binary PGM/PPM image codecs and the RSKT checkpoint format.

Images: P5 (grayscale) and P6 (RGB) with maxval 255 only.  Writing
quantizes with round-half-up (floor(v*255 + 0.5)) and emits the exact
header ``P5\\n{W} {H}\\n255\\n`` followed by raw samples, so output bytes
are a pure function of the tensor.  Reading accepts standard netpbm
whitespace and '#' comments and reports parse failures with the byte
offset where they occurred.

Checkpoints: little-endian binary, layout

    magic 'RSKT' | version u32
    denoiser config: in_channels, base_width, depth, time_embed_dim, T (u32 each)
    schedule params: T u32, p f64, kappa f64
    train_step u64 | has_adam u8
    [adam scalars: step_count u64, lr f64, beta1 f64, beta2 f64, eps f64]
    record_count u32
    records: name_len u32, name bytes, rank u32, dims u32*rank, f64 payload

Adam moment tensors ride in the record list under ``adam.m.`` /
``adam.v.`` name prefixes.  Only schedule *parameters* are stored; the
eta table is rebuilt (and its endpoints re-validated) on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptCheckpointError, ParseError, RangeError, ShapeError
from .nn.adam import AdamState
from .nn.denoiser import DenoiserConfig
from .schedule import ScheduleParams

CHECKPOINT_MAGIC = b"RSKT"
CHECKPOINT_VERSION = 1

_MAX_NAME = 4096
_MAX_RANK = 8


def read_image(path) -> np.ndarray:
    """Load a binary PGM (P5) or PPM (P6) file as (C, H, W) in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def fail(msg):
        raise ParseError(msg, offset=pos)

    def token():
        nonlocal pos
        while True:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if pos < len(data) and data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
                continue
            break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            fail("unexpected end of header")
        return data[start:pos]

    magic = token()
    if magic not in (b"P5", b"P6"):
        fail(f"unsupported magic {magic!r}; expected P5 or P6")
    channels = 1 if magic == b"P5" else 3
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError:
        fail("non-numeric header field")
    if width < 1 or height < 1:
        fail(f"bad dimensions {width}x{height}")
    if maxval != 255:
        fail(f"unsupported maxval {maxval}; only 255 is handled")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        pos = len(data)
        fail(f"truncated payload: expected {expected} bytes, found {len(payload)}")
    raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return raw.reshape(height, width, channels).transpose(2, 0, 1)


def write_image(img: np.ndarray, path) -> None:
    """Write (C, H, W) values in [0, 1] as P5 (C=1) or P6 (C=3)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f"expected (1|3, H, W), got {img.shape}")
    if np.any(img < 0.0) or np.any(img > 1.0) or not np.all(np.isfinite(img)):
        raise RangeError("pixel values must lie in [0, 1]; clamp before writing")
    channels, height, width = img.shape
    magic = b"P5" if channels == 1 else b"P6"
    quant = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    body = quant.transpose(1, 2, 0).tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{width} {height}\n255\n".encode())
        fh.write(body)


@dataclass
class Checkpoint:
    format_version: int
    denoiser_config: DenoiserConfig
    schedule_params: ScheduleParams
    tensors: dict[str, np.ndarray]
    adam_state: AdamState | None
    train_step: int


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    cfg = ckpt.denoiser_config
    sp = ckpt.schedule_params
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", ckpt.format_version)
    out += struct.pack("<5I", cfg.in_channels, cfg.base_width, cfg.depth, cfg.time_embed_dim, cfg.T)
    out += struct.pack("<Idd", sp.T, sp.p, sp.kappa)
    out += struct.pack("<Q", ckpt.train_step)
    adam = ckpt.adam_state
    out += struct.pack("<B", 1 if adam is not None else 0)
    records = dict(ckpt.tensors)
    if adam is not None:
        out += struct.pack("<Qdddd", adam.step_count, adam.lr, adam.beta1, adam.beta2, adam.eps)
        for name, arr in adam.first_moment.items():
            records[f"adam.m.{name}"] = arr
        for name, arr in adam.second_moment.items():
            records[f"adam.v.{name}"] = arr
    out += struct.pack("<I", len(records))
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded)) + encoded
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError(
                f"truncated checkpoint while reading {what} at offset {self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError("bad magic; not an RSKT checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    in_ch, base_w, depth, temb, dt = r.unpack("<5I", "denoiser config")
    st, p, kappa = r.unpack("<Idd", "schedule params")
    (train_step,) = r.unpack("<Q", "train step")
    (has_adam,) = r.unpack("<B", "adam flag")
    adam_scalars = r.unpack("<Qdddd", "adam scalars") if has_adam else None
    (count,) = r.unpack("<I", "record count")
    records: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<I", f"record {i} name length")
        if name_len == 0 or name_len > _MAX_NAME:
            raise CorruptCheckpointError(f"record {i}: implausible name length {name_len}")
        try:
            name = r.take(name_len, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpointError(f"record {i}: undecodable name") from exc
        (rank,) = r.unpack("<I", f"record {name!r} rank")
        if rank > _MAX_RANK:
            raise CorruptCheckpointError(f"record {name!r}: implausible rank {rank}")
        dims = r.unpack(f"<{rank}I", f"record {name!r} dims") if rank else ()
        n_elems = 1
        for d in dims:
            n_elems *= int(d)
        if 8 * n_elems > len(r.data) - r.pos:
            raise CorruptCheckpointError(
                f"record {name!r}: payload of {n_elems} floats exceeds remaining bytes"
            )
        payload = r.take(8 * n_elems, f"record {name!r} payload")
        records[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if r.pos != len(r.data):
        raise CorruptCheckpointError(f"{len(r.data) - r.pos} trailing bytes after last record")

    tensors = {k: v for k, v in records.items() if not k.startswith(("adam.m.", "adam.v."))}
    adam = None
    if has_adam:
        step_count, lr, b1, b2, eps = adam_scalars
        m = {k[len("adam.m."):]: v for k, v in records.items() if k.startswith("adam.m.")}
        v = {k[len("adam.v."):]: v for k, v in records.items() if k.startswith("adam.v.")}
        if set(m) != set(tensors) or set(v) != set(tensors):
            raise CorruptCheckpointError("adam moment records do not match parameter records")
        adam = AdamState(
            lr=lr, beta1=b1, beta2=b2, eps=eps, step_count=step_count,
            first_moment=m, second_moment=v,
        )
    cfg = DenoiserConfig(in_channels=in_ch, base_width=base_w, depth=depth,
                         time_embed_dim=temb, T=dt)
    try:
        cfg.validate()
    except Exception as exc:
        raise CorruptCheckpointError(f"invalid denoiser config in checkpoint: {exc}") from exc
    return Checkpoint(
        format_version=version,
        denoiser_config=cfg,
        schedule_params=ScheduleParams(T=st, p=p, kappa=kappa),
        tensors=tensors,
        adam_state=adam,
        train_step=train_step,
    )
