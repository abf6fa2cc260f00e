"""Rasterization, normalization, and the packed dataset format.

Images are single-channel uint8, 0 = ink on 255 = background. The packed
format is little-endian: magic ``SVRT1``, u8 version, u16 task id, u32 sample
count, u16 height, u16 width, then per sample one label byte followed by
height*width pixel bytes.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAGIC = b"SVRT1"
VERSION = 1
_HEADER = struct.Struct("<5sBHIHH")

GENERATOR_VERSION = 1


def rasterize(scene, size: int = 128) -> np.ndarray:
    """Draw each contour as a 1-px stroke; deterministic, closed 8-connected loops."""
    canvas = np.full((size, size), 255, dtype=np.uint8)
    factor = size / float(scene.frame)
    for shape in scene.shapes:
        pts = shape.points * factor
        a = pts
        b = np.roll(pts, -1, axis=0)
        d = b - a
        steps = np.maximum(np.ceil(np.abs(d).max(axis=1)).astype(np.int64), 1) + 1
        idx = np.repeat(np.arange(len(a)), steps)
        starts = np.cumsum(steps) - steps
        within = np.arange(int(steps.sum())) - np.repeat(starts, steps)
        denom = np.maximum(np.repeat(steps, steps) - 1, 1)
        t = within / denom
        xy = a[idx] + t[:, None] * d[idx]
        cols = np.clip(np.round(xy[:, 0]).astype(np.int64), 0, size - 1)
        rows = np.clip(np.round(xy[:, 1]).astype(np.int64), 0, size - 1)
        canvas[rows, cols] = 0
    return canvas


def prepare(images: np.ndarray, target: int | None = None) -> np.ndarray:
    """Nearest-neighbor resize to ``target`` and normalize to x/255 - 0.5.

    Accepts one image (H, W) or a batch (N, H, W); the resize factor must be
    an integer in either direction.
    """
    arr = np.asarray(images)
    size = arr.shape[-1]
    if arr.shape[-2] != size:
        raise ValueError(f"images must be square, got {arr.shape}")
    if target is None:
        target = size
    if target >= size:
        if target % size:
            raise ValueError(f"cannot resize {size} -> {target} by an integer factor")
        k = target // size
        if k > 1:
            arr = np.repeat(np.repeat(arr, k, axis=-2), k, axis=-1)
    else:
        if size % target:
            raise ValueError(f"cannot resize {size} -> {target} by an integer factor")
        k = size // target
        arr = arr[..., ::k, ::k]
    return arr.astype(np.float32) / np.float32(255.0) - np.float32(0.5)


def pack(task_id: int, labels, images, version: int = VERSION) -> bytes:
    """Serialize a class-balanced labelled image set."""
    labels = np.asarray(labels, dtype=np.uint8)
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3 or len(labels) != len(images):
        raise ValueError("need labels (N,) and images (N, H, W)")
    if int(labels.sum()) * 2 != len(labels):
        raise ValueError("dataset must be class-balanced")
    n, h, w = images.shape
    out = [_HEADER.pack(MAGIC, version, task_id, n, h, w)]
    body = np.empty((n, 1 + h * w), dtype=np.uint8)
    body[:, 0] = labels
    body[:, 1:] = images.reshape(n, h * w)
    out.append(body.tobytes())
    return b"".join(out)


def unpack(data: bytes):
    """Inverse of :func:`pack`; returns (task_id, labels, images)."""
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    magic, version, task_id, n, h, w = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=5)
    expected = _HEADER.size + n * (1 + h * w)
    if len(data) < expected:
        raise FormatError("truncated payload", offset=len(data))
    if len(data) > expected:
        raise FormatError("trailing data", offset=expected)
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(n, 1 + h * w)
    labels = body[:, 0].copy()
    bad = np.nonzero(labels > 1)[0]
    if bad.size:
        raise FormatError(
            f"label byte {int(labels[bad[0]])} not in {{0,1}}",
            offset=_HEADER.size + int(bad[0]) * (1 + h * w),
        )
    images = body[:, 1:].reshape(n, h, w).copy()
    return task_id, labels, images


def payload_checksum(data: bytes) -> str:
    """64-bit content checksum of a packed payload, hex-encoded."""
    return hashlib.blake2b(data, digest_size=8).hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    task_id: int
    split: str
    count: int
    seed: int
    generator_version: int
    checksum: str

    def __post_init__(self):
        if self.count % 2:
            raise ValueError("count must be even for class balance")

    def to_text(self) -> str:
        lines = [
            f"task_id={self.task_id}",
            f"split={self.split}",
            f"count={self.count}",
            f"seed={self.seed}",
            f"generator_version={self.generator_version}",
            f"checksum={self.checksum}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"manifest line without '=': {line!r}")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
        try:
            return cls(
                task_id=int(fields["task_id"]),
                split=fields["split"],
                count=int(fields["count"]),
                seed=int(fields["seed"]),
                generator_version=int(fields["generator_version"]),
                checksum=fields["checksum"],
            )
        except KeyError as exc:
            raise FormatError(f"manifest missing field {exc.args[0]}") from None


def write_png(path, image: np.ndarray) -> None:
    """Minimal 8-bit grayscale PNG writer for inspection exports."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("expected a single (H, W) image")
    h, w = img.shape

    def chunk(tag, payload):
        out = struct.pack(">I", len(payload)) + tag + payload
        return out + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + img[i].tobytes() for i in range(h))
    parts = [
        b"\x89PNG\r\n\x1a\n",
        chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)),
        chunk(b"IDAT", zlib.compress(raw, 9)),
        chunk(b"IEND", b""),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
