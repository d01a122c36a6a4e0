"""Frame feature sequences and the CFTF v1 binary file format.

A CFTF file is a 20-byte little-endian header followed by the raw payload::

    offset  size  field
    0       4     magic  b"CFTF"
    4       4     version (u32, = 1)
    8       4     T, number of frames (u32)
    12      4     N, number of patches (u32)
    16      4     C, number of channels (u32)
    20      4*TNC float32 values, frame-major, then patch, then channel

No padding and no trailing bytes are allowed.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAGIC = b"CFTF"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
HEADER_SIZE = HEADER.size


class FeatureFormatError(ValueError):
    """Malformed CFTF content. ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(FeatureFormatError):
    pass


class VersionUnsupported(FeatureFormatError):
    pass


class DimensionMismatch(FeatureFormatError):
    pass


class NonFiniteValue(FeatureFormatError):
    pass


class IoFailure(OSError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class FeatureSequence:
    """Immutable ``T x N x C`` block of frame features.

    ``data`` is stored as a read-only float64 array of shape ``(T, N, C)``.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise DimensionMismatch(f"feature data must be 3-D (T, N, C), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionMismatch(f"all dimensions must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, T: int, N: int, C: int, values: Sequence[float]) -> "FeatureSequence":
        flat = np.asarray(values, dtype=np.float64).ravel()
        if T < 1 or N < 1 or C < 1:
            raise DimensionMismatch(f"dimensions must be >= 1, got T={T} N={N} C={C}")
        if flat.size != T * N * C:
            raise DimensionMismatch(f"expected {T * N * C} values for T={T} N={N} C={C}, got {flat.size}")
        return cls(flat.reshape(T, N, C))

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_patches(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


def check_indices(idx: Sequence[int], T: int) -> np.ndarray:
    """Validate a frame index set against a sequence of length ``T``."""
    arr = np.asarray(idx, dtype=np.int64).ravel()
    if arr.size and (arr.min() < 0 or arr.max() >= T):
        bad = int(arr[(arr < 0) | (arr >= T)][0])
        raise IndexOutOfRange(f"frame index {bad} outside [0, {T})")
    if np.unique(arr).size != arr.size:
        raise IndexOutOfRange("frame index set contains duplicates")
    return arr


def gather_frames(seq: FeatureSequence, idx: Sequence[int]) -> FeatureSequence:
    """Return the frames of ``seq`` at ``idx``, in the order given."""
    arr = check_indices(idx, seq.num_frames)
    if arr.size == 0:
        raise IndexOutOfRange("cannot gather an empty frame set")
    return FeatureSequence(seq.data[arr])


def encode_feature_bytes(seq: FeatureSequence) -> bytes:
    if not seq.is_finite():
        bad = int(np.flatnonzero(~np.isfinite(seq.data.ravel()))[0])
        raise NonFiniteValue(f"non-finite value at element {bad}", HEADER_SIZE + 4 * bad)
    with np.errstate(over="ignore"):
        payload = seq.data.astype("<f4")
    if not np.isfinite(payload).all():
        bad = int(np.flatnonzero(~np.isfinite(payload.ravel()))[0])
        raise NonFiniteValue(f"element {bad} overflows float32", HEADER_SIZE + 4 * bad)
    T, N, C = seq.shape
    return HEADER.pack(MAGIC, VERSION, T, N, C) + payload.tobytes()


def decode_feature_bytes(buf: bytes) -> FeatureSequence:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}", 0)
    if len(buf) < HEADER_SIZE:
        raise DimensionMismatch(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes", len(buf))
    _, version, T, N, C = HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise VersionUnsupported(f"unsupported CFTF version {version}", 4)
    for off, name, val in ((8, "T", T), (12, "N", N), (16, "C", C)):
        if val == 0:
            raise DimensionMismatch(f"{name} must be >= 1", off)
    expected = 4 * T * N * C
    actual = len(buf) - HEADER_SIZE
    if actual != expected:
        raise DimensionMismatch(
            f"header declares T={T} N={N} C={C} ({expected} payload bytes), found {actual}",
            HEADER_SIZE + min(actual, expected),
        )
    values = np.frombuffer(buf, dtype="<f4", offset=HEADER_SIZE)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteValue(f"non-finite value at element {bad}", HEADER_SIZE + 4 * bad)
    return FeatureSequence(values.astype(np.float64).reshape(T, N, C))


def load_feature_file(path: str | os.PathLike) -> FeatureSequence:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_feature_bytes(buf)


def save_feature_file(seq: FeatureSequence, path: str | os.PathLike) -> None:
    buf = encode_feature_bytes(seq)
    try:
        with open(path, "wb") as fh:
            fh.write(buf)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
