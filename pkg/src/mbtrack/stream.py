"""MBFS container: macroblock features for P-frames, coded pixels for I-frames.

Byte layout (all integers little-endian):

    header   [magic "MBFS"][version u16][width u16][height u16]
             [fps u8][gop_len u8][frame_count u32][flags u16]
    flags bit 0 set -> a background chunk follows the header:
             [tag 'B'][raw RGB24, width*height*3 bytes]
    frames, in display order, each starting with
             [tag 'P' or 'I'][frame_index u32]

    P-frame  one record per macroblock in raster order:
             [flags u8]                      bit 0 = skip
             if not skip: [coeff_mask u16][mv_x i16][mv_y i16]
    I-frame  an intra payload (see intra.py): planes R, G, B, each
             (W/4)*(H/4) blocks of [mode u8][16 x residual i16]

Structural rules: width and height are positive multiples of 16, gop_len
is 2..10, frame i is an I-frame exactly when i % gop_len == 0, and
frame_index values are contiguous from 0. A skip macroblock carries no
coefficients and no motion, which the wire format makes unrepresentable;
the API-level record type enforces it for in-memory construction.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .intra import IntraPayload

MAGIC = b"MBFS"
FORMAT_VERSION = 1
FLAG_HAS_BACKGROUND = 0x0001
MB = 16  # macroblock edge in pixels

_HEADER = struct.Struct("<4sHHHBBIH")
_FRAME_PREFIX = struct.Struct("<cI")
_MB_PAYLOAD = struct.Struct("<Hhh")

_MB_SKIP_BYTE = b"\x01"
_MB_CODED_BYTE = b"\x00"


class StreamError(Exception):
    """Base class for MBFS container errors."""


class StreamFormatError(StreamError):
    """Bad magic, bad version, or a header field outside its legal range."""


class StreamTruncatedError(StreamError):
    """The byte source ended mid-structure."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class StreamInvariantError(StreamError):
    """Structurally well-formed bytes that violate a stream rule."""


@dataclass(frozen=True)
class StreamHeader:
    width_px: int
    height_px: int
    fps: int
    gop_len: int
    frame_count: int
    flags: int = 0
    version: int = FORMAT_VERSION

    @property
    def mb_cols(self) -> int:
        return self.width_px // MB

    @property
    def mb_rows(self) -> int:
        return self.height_px // MB

    @property
    def has_background(self) -> bool:
        return bool(self.flags & FLAG_HAS_BACKGROUND)

    def frame_kind(self, index: int) -> str:
        return "I" if index % self.gop_len == 0 else "P"

    def validate(self) -> None:
        if self.version != FORMAT_VERSION:
            raise StreamFormatError(f"unsupported version {self.version}")
        for name, v in (("width", self.width_px), ("height", self.height_px)):
            if v <= 0 or v % MB:
                raise StreamFormatError(f"{name} {v} is not a positive multiple of {MB}")
        if not (0 < self.fps <= 255):
            raise StreamFormatError(f"fps {self.fps} out of range")
        if not (2 <= self.gop_len <= 10):
            raise StreamFormatError(f"gop_len {self.gop_len} must be in 2..10")
        if self.frame_count < 1:
            raise StreamFormatError("frame_count must be at least 1")


@dataclass(frozen=True)
class BackgroundChunk:
    """Reference background image shipped ahead of the frames."""

    rgb: np.ndarray  # (H, W, 3) uint8

    def __eq__(self, other):
        if not isinstance(other, BackgroundChunk):
            return NotImplemented
        return np.array_equal(self.rgb, other.rgb)


@dataclass(frozen=True)
class MacroblockRecord:
    """One macroblock's P-frame features.

    A skip block changed nothing: it may not claim coefficients or motion.
    """

    skip: bool
    coeff_mask: int = 0
    mv_qpel: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.skip and (self.coeff_mask != 0 or self.mv_qpel != (0, 0)):
            raise StreamInvariantError("skip macroblock with coefficients or motion")
        if not (0 <= self.coeff_mask <= 0xFFFF):
            raise StreamInvariantError(f"coeff_mask {self.coeff_mask:#x} out of range")
        for c in self.mv_qpel:
            if not (-32768 <= c <= 32767):
                raise StreamInvariantError(f"motion vector {self.mv_qpel} out of range")


class MacroblockGrid:
    """Dense (rows, cols) macroblock feature arrays for one P-frame.

    skip:       bool
    coeff_mask: uint16
    mv_qpel:    int16, shape (rows, cols, 2), quarter-pel units
    """

    def __init__(self, skip, coeff_mask, mv_qpel):
        self.skip = np.asarray(skip, dtype=bool)
        self.coeff_mask = np.asarray(coeff_mask, dtype=np.uint16)
        self.mv_qpel = np.asarray(mv_qpel, dtype=np.int16)
        rows, cols = self.skip.shape
        if self.coeff_mask.shape != (rows, cols) or self.mv_qpel.shape != (rows, cols, 2):
            raise ValueError("macroblock feature arrays disagree on grid shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.skip.shape

    @classmethod
    def all_skip(cls, rows: int, cols: int) -> "MacroblockGrid":
        return cls(
            np.ones((rows, cols), dtype=bool),
            np.zeros((rows, cols), dtype=np.uint16),
            np.zeros((rows, cols, 2), dtype=np.int16),
        )

    def record_at(self, my: int, mx: int) -> MacroblockRecord:
        return MacroblockRecord(
            skip=bool(self.skip[my, mx]),
            coeff_mask=int(self.coeff_mask[my, mx]),
            mv_qpel=(int(self.mv_qpel[my, mx, 0]), int(self.mv_qpel[my, mx, 1])),
        )

    def validate(self) -> None:
        bad = self.skip & ((self.coeff_mask != 0) | np.any(self.mv_qpel != 0, axis=2))
        if np.any(bad):
            my, mx = np.argwhere(bad)[0]
            raise StreamInvariantError(
                f"skip macroblock ({int(mx)}, {int(my)}) with coefficients or motion"
            )

    def __eq__(self, other):
        if not isinstance(other, MacroblockGrid):
            return NotImplemented
        return (
            np.array_equal(self.skip, other.skip)
            and np.array_equal(self.coeff_mask, other.coeff_mask)
            and np.array_equal(self.mv_qpel, other.mv_qpel)
        )


@dataclass
class FrameFeatures:
    """One frame of the stream: features for P, coded pixels for I."""

    frame_index: int
    kind: str  # "I" or "P"
    mb_grid: MacroblockGrid | None = None
    intra_payload: IntraPayload | None = None

    def validate(self) -> None:
        if self.kind == "P":
            if self.mb_grid is None or self.intra_payload is not None:
                raise StreamInvariantError(f"frame {self.frame_index}: P-frame payload mismatch")
        elif self.kind == "I":
            if self.intra_payload is None or self.mb_grid is not None:
                raise StreamInvariantError(f"frame {self.frame_index}: I-frame payload mismatch")
        else:
            raise StreamInvariantError(f"frame {self.frame_index}: unknown kind {self.kind!r}")

    def __eq__(self, other):
        if not isinstance(other, FrameFeatures):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.kind == other.kind
            and self.mb_grid == other.mb_grid
            and self.intra_payload == other.intra_payload
        )


def _serialize_pframe(grid: MacroblockGrid) -> bytes:
    rows, cols = grid.shape
    out = bytearray()
    skip = grid.skip
    mask = grid.coeff_mask
    mv = grid.mv_qpel
    pack = _MB_PAYLOAD.pack
    for my in range(rows):
        for mx in range(cols):
            if skip[my, mx]:
                out += _MB_SKIP_BYTE
            else:
                out += _MB_CODED_BYTE
                out += pack(int(mask[my, mx]), int(mv[my, mx, 0]), int(mv[my, mx, 1]))
    return bytes(out)


def write_stream(header: StreamHeader, background: BackgroundChunk | None,
                 frames: Iterable[FrameFeatures], sink: BinaryIO) -> int:
    """Serialize a stream. Returns the number of bytes written.

    Frames are validated against the header as they are consumed: indices
    must run 0..frame_count-1 and each frame's kind must agree with the
    GOP structure.
    """
    header.validate()
    if header.has_background != (background is not None):
        raise StreamInvariantError("background flag does not match background presence")

    written = 0

    def put(b: bytes):
        nonlocal written
        sink.write(b)
        written += len(b)

    put(_HEADER.pack(MAGIC, header.version, header.width_px, header.height_px,
                     header.fps, header.gop_len, header.frame_count, header.flags))

    if background is not None:
        bg = np.asarray(background.rgb)
        if bg.shape != (header.height_px, header.width_px, 3) or bg.dtype != np.uint8:
            raise StreamInvariantError("background chunk does not match frame dimensions")
        put(b"B")
        put(bg.tobytes())

    expected = 0
    for frame in frames:
        if frame.frame_index != expected:
            raise StreamInvariantError(
                f"frame index {frame.frame_index} out of order (expected {expected})"
            )
        want_kind = header.frame_kind(frame.frame_index)
        if frame.kind != want_kind:
            raise StreamInvariantError(
                f"frame {frame.frame_index} declared {frame.kind!r} but GOP structure"
                f" requires {want_kind!r}"
            )
        frame.validate()
        put(_FRAME_PREFIX.pack(frame.kind.encode(), frame.frame_index))
        if frame.kind == "P":
            if frame.mb_grid.shape != (header.mb_rows, header.mb_cols):
                raise StreamInvariantError(
                    f"frame {frame.frame_index}: grid shape {frame.mb_grid.shape}"
                    f" does not match header"
                )
            frame.mb_grid.validate()
            put(_serialize_pframe(frame.mb_grid))
        else:
            pl = frame.intra_payload
            if (pl.width_px, pl.height_px) != (header.width_px, header.height_px):
                raise StreamInvariantError(
                    f"frame {frame.frame_index}: intra payload size mismatch"
                )
            put(pl.to_bytes())
        expected += 1

    if expected != header.frame_count:
        raise StreamInvariantError(
            f"header promises {header.frame_count} frames, got {expected}"
        )
    return written


def stream_to_bytes(header: StreamHeader, background: BackgroundChunk | None,
                    frames: Iterable[FrameFeatures]) -> bytes:
    buf = io.BytesIO()
    write_stream(header, background, frames, buf)
    return buf.getvalue()


def _read_exact(src: BinaryIO, n: int, what: str, frame_index: int | None) -> bytes:
    data = src.read(n)
    if len(data) != n:
        raise StreamTruncatedError(
            f"stream ended inside {what}"
            + (f" of frame {frame_index}" if frame_index is not None else ""),
            frame_index=frame_index,
        )
    return data


def _parse_pframe(src: BinaryIO, rows: int, cols: int, frame_index: int) -> MacroblockGrid:
    skip = np.empty((rows, cols), dtype=bool)
    mask = np.zeros((rows, cols), dtype=np.uint16)
    mv = np.zeros((rows, cols, 2), dtype=np.int16)
    unpack = _MB_PAYLOAD.unpack
    for my in range(rows):
        for mx in range(cols):
            flags = _read_exact(src, 1, "macroblock record", frame_index)[0]
            if flags & ~0x01:
                raise StreamInvariantError(
                    f"frame {frame_index}: macroblock ({mx}, {my}) has reserved"
                    f" flag bits {flags:#04x}"
                )
            if flags & 0x01:
                skip[my, mx] = True
            else:
                skip[my, mx] = False
                m, vx, vy = unpack(_read_exact(src, 6, "macroblock record", frame_index))
                mask[my, mx] = m
                mv[my, mx, 0] = vx
                mv[my, mx, 1] = vy
    return MacroblockGrid(skip, mask, mv)


def read_stream(source) -> tuple[StreamHeader, BackgroundChunk | None, Iterator[FrameFeatures]]:
    """Parse an MBFS byte source (bytes or a binary file object).

    Returns (header, background or None, frame iterator). Frames are
    parsed and validated lazily as the iterator is consumed; errors are
    raised from the iterator at the offending frame. A parse failure
    never yields a partial frame.
    """
    src = io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else source

    raw = src.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise StreamTruncatedError("stream ended inside header")
    magic, version, width, height, fps, gop_len, frame_count, flags = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}")
    header = StreamHeader(width_px=width, height_px=height, fps=fps, gop_len=gop_len,
                          frame_count=frame_count, flags=flags, version=version)
    header.validate()

    background = None
    if header.has_background:
        tag = _read_exact(src, 1, "background chunk tag", None)
        if tag != b"B":
            raise StreamFormatError(f"expected background chunk, found tag {tag!r}")
        raw = _read_exact(src, width * height * 3, "background chunk", None)
        background = BackgroundChunk(
            rgb=np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()
        )

    def frames() -> Iterator[FrameFeatures]:
        intra_size = IntraPayload.byte_size(width, height)
        for expected in range(frame_count):
            prefix = _read_exact(src, _FRAME_PREFIX.size, "frame prefix", expected)
            tag, frame_index = _FRAME_PREFIX.unpack(prefix)
            kind = tag.decode("ascii", errors="replace")
            if kind not in ("I", "P"):
                raise StreamFormatError(f"frame {expected}: unknown frame tag {tag!r}")
            if frame_index != expected:
                raise StreamInvariantError(
                    f"frame index {frame_index} out of order (expected {expected})"
                )
            want = header.frame_kind(frame_index)
            if kind != want:
                raise StreamInvariantError(
                    f"frame {frame_index} is tagged {kind!r} but GOP structure"
                    f" requires {want!r}"
                )
            if kind == "P":
                grid = _parse_pframe(src, header.mb_rows, header.mb_cols, frame_index)
                yield FrameFeatures(frame_index, "P", mb_grid=grid)
            else:
                raw = _read_exact(src, intra_size, "intra payload", frame_index)
                yield FrameFeatures(
                    frame_index, "I",
                    intra_payload=IntraPayload.from_bytes(raw, width, height),
                )

    return header, background, frames()
