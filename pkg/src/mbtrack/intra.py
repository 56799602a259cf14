"""Lossless DC-predicted intra codec for 4x4 blocks.

Each plane (R, G, B) is split into 4x4 blocks coded in raster order:

    mode 0: predictor is the constant 128 (only legal choice for the
            top-left block, which has no causal neighbors)
    mode 1: predictor is the rounded mean of up to 8 causal neighbor
            pixels: the 4 pixels directly above the block's top row and
            the 4 pixels directly left of its left column, whichever exist

Residuals are stored as int16, so reconstruction is exact. Serialized
block layout is [mode u8][16 x residual i16 LE] and planes follow each
other in R, G, B order.

The point of the scheme is partial decoding: any rectangular region can
be reconstructed without touching the rest of the frame by substituting
a background image for neighbor pixels that fall outside the region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCK = 4
MODE_CONST = 0  # flat 128 predictor
MODE_NEIGHBOR_DC = 1  # mean of available causal neighbors

# Packed wire layout for one coded block: mode byte + 16 residuals.
_BLOCK_DTYPE = np.dtype([("mode", "u1"), ("residuals", "<i2", (16,))])
assert _BLOCK_DTYPE.itemsize == 33


class IntraFormatError(ValueError):
    """Malformed intra payload (bad mode, impossible predictor, bad size)."""


@dataclass(frozen=True)
class DecodeStats:
    """Work counter for one partial decode: block positions touched vs total."""

    blocks_decoded: int
    blocks_total: int

    @property
    def ratio(self) -> float:
        return self.blocks_decoded / self.blocks_total


@dataclass(frozen=True)
class PixelTile:
    """Decoded pixels for one rect. rect is (x, y, w, h) in frame pixels."""

    rect: tuple[int, int, int, int]
    pixels: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self):
        x, y, w, h = self.rect
        if self.pixels.shape != (h, w, 3):
            raise ValueError(
                f"tile pixels shape {self.pixels.shape} does not match rect {self.rect}"
            )

    def __eq__(self, other):
        if not isinstance(other, PixelTile):
            return NotImplemented
        return self.rect == other.rect and np.array_equal(self.pixels, other.pixels)


class IntraPayload:
    """Coded representation of one full RGB frame.

    modes:     (3, H/4, W/4) uint8, plane order R, G, B
    residuals: (3, H/4, W/4, 4, 4) int16
    """

    def __init__(self, modes, residuals, width_px: int, height_px: int):
        if width_px % BLOCK or height_px % BLOCK or width_px <= 0 or height_px <= 0:
            raise IntraFormatError(f"bad frame size {width_px}x{height_px}")
        nbx = width_px // BLOCK
        nby = height_px // BLOCK
        modes = np.asarray(modes, dtype=np.uint8)
        residuals = np.asarray(residuals, dtype=np.int16)
        if modes.shape != (3, nby, nbx):
            raise IntraFormatError(f"modes shape {modes.shape} != {(3, nby, nbx)}")
        if residuals.shape != (3, nby, nbx, BLOCK, BLOCK):
            raise IntraFormatError(f"residuals shape {residuals.shape} is wrong")
        if modes.max(initial=0) > MODE_NEIGHBOR_DC:
            raise IntraFormatError("unknown prediction mode in payload")
        if np.any(modes[:, 0, 0] == MODE_NEIGHBOR_DC):
            raise IntraFormatError("mode 1 requires at least one causal neighbor")
        self.modes = modes
        self.residuals = residuals
        self.width_px = width_px
        self.height_px = height_px

    @property
    def blocks_per_plane(self) -> int:
        return (self.width_px // BLOCK) * (self.height_px // BLOCK)

    def __eq__(self, other):
        if not isinstance(other, IntraPayload):
            return NotImplemented
        return (
            self.width_px == other.width_px
            and self.height_px == other.height_px
            and np.array_equal(self.modes, other.modes)
            and np.array_equal(self.residuals, other.residuals)
        )

    @staticmethod
    def byte_size(width_px: int, height_px: int) -> int:
        return 3 * (width_px // BLOCK) * (height_px // BLOCK) * _BLOCK_DTYPE.itemsize

    def to_bytes(self) -> bytes:
        n = self.blocks_per_plane
        out = np.empty(3 * n, dtype=_BLOCK_DTYPE)
        out["mode"] = self.modes.reshape(3 * n)
        out["residuals"] = self.residuals.reshape(3 * n, 16)
        return out.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, width_px: int, height_px: int) -> "IntraPayload":
        nbx = width_px // BLOCK
        nby = height_px // BLOCK
        n = nbx * nby
        expected = 3 * n * _BLOCK_DTYPE.itemsize
        if len(data) != expected:
            raise IntraFormatError(
                f"intra payload is {len(data)} bytes, expected {expected}"
            )
        arr = np.frombuffer(data, dtype=_BLOCK_DTYPE, count=3 * n)
        modes = arr["mode"].reshape(3, nby, nbx).copy()
        residuals = arr["residuals"].reshape(3, nby, nbx, BLOCK, BLOCK).copy()
        return cls(modes, residuals, width_px, height_px)


def _check_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8 image")
    h, w = image.shape[:2]
    if h % BLOCK or w % BLOCK or h == 0 or w == 0:
        raise ValueError(f"image size {w}x{h} is not a positive multiple of {BLOCK}")
    return image


def encode_iframe(image) -> IntraPayload:
    """Encode an RGB frame losslessly.

    Because coding is lossless, reconstructed neighbor pixels equal source
    pixels, so the predictors for every block can be computed from the
    source image directly and the whole plane encodes vectorized.
    """
    image = _check_image(image)
    h, w = image.shape[:2]
    nby, nbx = h // BLOCK, w // BLOCK

    modes = np.empty((3, nby, nbx), dtype=np.uint8)
    residuals = np.empty((3, nby, nbx, BLOCK, BLOCK), dtype=np.int16)

    for p in range(3):
        src = image[:, :, p].astype(np.int32)

        # Sum of the 4 pixels above each block (row 4*by - 1), zero for by == 0.
        top_sum = np.zeros((nby, nbx), dtype=np.int64)
        top_sum[1:] = src[BLOCK - 1 :: BLOCK][: nby - 1].reshape(nby - 1, nbx, BLOCK).sum(axis=2)
        # Sum of the 4 pixels left of each block (col 4*bx - 1), zero for bx == 0.
        left_sum = np.zeros((nby, nbx), dtype=np.int64)
        left_sum[:, 1:] = (
            src[:, BLOCK - 1 :: BLOCK][:, : nbx - 1].reshape(nby, BLOCK, nbx - 1).sum(axis=1)
        )

        counts = np.zeros((nby, nbx), dtype=np.int64)
        counts[1:] += BLOCK
        counts[:, 1:] += BLOCK

        pred = np.full((nby, nbx), 128, dtype=np.int64)
        has_nb = counts > 0
        pred[has_nb] = (top_sum[has_nb] + left_sum[has_nb] + counts[has_nb] // 2) // counts[has_nb]

        modes[p] = np.where(has_nb, MODE_NEIGHBOR_DC, MODE_CONST)
        blocks = src.reshape(nby, BLOCK, nbx, BLOCK).transpose(0, 2, 1, 3)
        residuals[p] = (blocks - pred[:, :, None, None]).astype(np.int16)

    return IntraPayload(modes, residuals, w, h)


def _predict(rec: np.ndarray, by: int, bx: int, have_top: bool, have_left: bool,
             top_row: np.ndarray | None, left_col: np.ndarray | None) -> int:
    s = 0
    n = 0
    if have_top:
        s += int(top_row.sum())
        n += BLOCK
    if have_left:
        s += int(left_col.sum())
        n += BLOCK
    if n == 0:
        raise IntraFormatError(f"block ({by}, {bx}): mode 1 with no causal neighbors")
    return (s + n // 2) // n


def decode_full(payload: IntraPayload) -> np.ndarray:
    """Reconstruct the whole frame. Returns (H, W, 3) uint8."""
    w, h = payload.width_px, payload.height_px
    nby, nbx = h // BLOCK, w // BLOCK
    out = np.empty((h, w, 3), dtype=np.uint8)

    for p in range(3):
        plane = np.empty((h, w), dtype=np.int32)
        modes = payload.modes[p]
        residuals = payload.residuals[p].astype(np.int32)
        for by in range(nby):
            y0 = by * BLOCK
            for bx in range(nbx):
                x0 = bx * BLOCK
                if modes[by, bx] == MODE_CONST:
                    pred = 128
                else:
                    pred = _predict(
                        plane, by, bx, by > 0, bx > 0,
                        plane[y0 - 1, x0 : x0 + BLOCK] if by > 0 else None,
                        plane[y0 : y0 + BLOCK, x0 - 1] if bx > 0 else None,
                    )
                blk = residuals[by, bx] + pred
                np.clip(blk, 0, 255, out=blk)
                plane[y0 : y0 + BLOCK, x0 : x0 + BLOCK] = blk
        out[:, :, p] = plane

    return out


def blocks_for_rect(rect: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
    """Inclusive block index range (bx0, bx1, by0, by1) covering a pixel rect."""
    x, y, w, h = rect
    return (x // BLOCK, (x + w - 1) // BLOCK, y // BLOCK, (y + h - 1) // BLOCK)


def decode_region_partial(payload: IntraPayload, rect: tuple[int, int, int, int],
                          background: np.ndarray) -> tuple[PixelTile, DecodeStats]:
    """Reconstruct only the blocks intersecting ``rect``.

    Blocks are decoded in raster order. A block's causal neighbors come from
    blocks decoded in this same call when those blocks also intersect the
    rect, and from ``background`` (a full-frame (H, W, 3) uint8 image)
    otherwise. The returned tile is cropped to exactly ``rect``.

    The decode cost is a pure function of the rect geometry:
    blocks_decoded counts the block positions the rect touches, regardless
    of payload content or how many neighbors were substituted.
    """
    x, y, w, h = rect
    if w <= 0 or h <= 0:
        raise ValueError(f"rect {rect} has non-positive size")
    if x < 0 or y < 0 or x + w > payload.width_px or y + h > payload.height_px:
        raise ValueError(f"rect {rect} is outside the {payload.width_px}x{payload.height_px} frame")
    background = np.asarray(background)
    if background.shape != (payload.height_px, payload.width_px, 3):
        raise ValueError("background must be a full-frame (H, W, 3) image")

    bx0, bx1, by0, by1 = blocks_for_rect(rect)
    rx0, ry0 = bx0 * BLOCK, by0 * BLOCK
    rw = (bx1 - bx0 + 1) * BLOCK
    rh = (by1 - by0 + 1) * BLOCK

    tile = np.empty((h, w, 3), dtype=np.uint8)
    for p in range(3):
        modes = payload.modes[p]
        residuals = payload.residuals[p].astype(np.int32)
        bg = background[:, :, p].astype(np.int32)
        region = np.empty((rh, rw), dtype=np.int32)
        for by in range(by0, by1 + 1):
            ly0 = (by - by0) * BLOCK
            gy0 = by * BLOCK
            for bx in range(bx0, bx1 + 1):
                lx0 = (bx - bx0) * BLOCK
                gx0 = bx * BLOCK
                if modes[by, bx] == MODE_CONST:
                    pred = 128
                else:
                    top_row = left_col = None
                    if by > 0:
                        # neighbor block (by-1, bx) is in-region iff by-1 >= by0
                        if by - 1 >= by0:
                            top_row = region[ly0 - 1, lx0 : lx0 + BLOCK]
                        else:
                            top_row = bg[gy0 - 1, gx0 : gx0 + BLOCK]
                    if bx > 0:
                        if bx - 1 >= bx0:
                            left_col = region[ly0 : ly0 + BLOCK, lx0 - 1]
                        else:
                            left_col = bg[gy0 : gy0 + BLOCK, gx0 - 1]
                    pred = _predict(region, by, bx, by > 0, bx > 0, top_row, left_col)
                blk = residuals[by, bx] + pred
                np.clip(blk, 0, 255, out=blk)
                region[ly0 : ly0 + BLOCK, lx0 : lx0 + BLOCK] = blk
        tile[:, :, p] = region[y - ry0 : y - ry0 + h, x - rx0 : x - rx0 + w]

    stats = DecodeStats(
        blocks_decoded=(bx1 - bx0 + 1) * (by1 - by0 + 1),
        blocks_total=payload.blocks_per_plane,
    )
    return PixelTile((x, y, w, h), tile), stats
