"""Pixel-domain blob refinement at I-frames.

Macroblock-level tracking gives coarse 16px-aligned blobs. Once per GOP,
at the I-frame, each object's blob is re-measured from partially decoded
pixels: predict where the object is from its recent motion, decode that
region plus a one-block border, subtract the reference background, clean
the difference mask morphologically, and fit the tightest rectangle.
The refined I-frame blob then rewrites the preceding P-frame blobs by
linear interpolation against the previous anchor.

Blobs are (cx, cy, h, w) with float centers and sizes in pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .intra import BLOCK, PixelTile

MB = 16


@dataclass(frozen=True)
class BlobFeature:
    """Axis-aligned blob: center (cx, cy), height h, width w, all in pixels."""

    cx: float
    cy: float
    h: float
    w: float

    def corner_rect(self) -> tuple[float, float, float, float]:
        """(x0, y0, w, h) with x0, y0 the top-left corner."""
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    def int_rect(self, frame_w: int, frame_h: int,
                 border: int = 0) -> tuple[int, int, int, int]:
        """Integer pixel rect grown by ``border`` on each side, clipped."""
        x0 = int(np.floor(self.cx - self.w / 2.0)) - border
        y0 = int(np.floor(self.cy - self.h / 2.0)) - border
        x1 = int(np.ceil(self.cx + self.w / 2.0)) + border
        y1 = int(np.ceil(self.cy + self.h / 2.0)) + border
        x0 = max(0, x0)
        y0 = max(0, y0)
        x1 = min(frame_w, max(x1, x0 + 1))
        y1 = min(frame_h, max(y1, y0 + 1))
        return (x0, y0, x1 - x0, y1 - y0)

    @classmethod
    def from_grid_region(cls, members: frozenset) -> "BlobFeature":
        """Bounding blob of a set of (mx, my) macroblock cells, in pixels."""
        if not members:
            raise ValueError("cannot take the blob of an empty region")
        xs = [mx for mx, _ in members]
        ys = [my for _, my in members]
        x0, x1 = min(xs) * MB, (max(xs) + 1) * MB
        y0, y1 = min(ys) * MB, (max(ys) + 1) * MB
        return cls(cx=(x0 + x1) / 2.0, cy=(y0 + y1) / 2.0,
                   h=float(y1 - y0), w=float(x1 - x0))

    def iou(self, other: "BlobFeature") -> float:
        ax0, ay0, aw, ah = self.corner_rect()
        bx0, by0, bw, bh = other.corner_rect()
        ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
        iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
        inter = ix * iy
        union = aw * ah + bw * bh - inter
        return inter / union if union > 0 else 0.0


@dataclass
class RefineConfig:
    epsilon: int = 25  # per-pixel max-channel difference threshold
    min_component_area: int = 16  # drop smaller 8-connected mask components
    morph_radius: int = 1  # square structuring element half-width; 0 disables

    def __post_init__(self):
        if self.epsilon < 0 or self.min_component_area < 0 or self.morph_radius < 0:
            raise ValueError("refinement parameters must be non-negative")


def predict_blob(track: list[BlobFeature]) -> BlobFeature:
    """Where to look for the object at the next I-frame.

    Center of the most recent blob; height and width are the maxima over
    the whole window, so growth during the GOP stays covered.
    """
    if not track:
        raise ValueError("prediction needs at least one blob")
    last = track[-1]
    return BlobFeature(
        cx=last.cx,
        cy=last.cy,
        h=max(b.h for b in track),
        w=max(b.w for b in track),
    )


def decode_rect_for(pred: BlobFeature, frame_w: int, frame_h: int) -> tuple[int, int, int, int]:
    """Predicted blob grown by one 4x4 block on each side, clipped to the frame."""
    return pred.int_rect(frame_w, frame_h, border=BLOCK)


def background_subtract(tile: PixelTile, background: np.ndarray,
                        config: RefineConfig) -> tuple[np.ndarray, BlobFeature | None]:
    """Foreground mask and tight blob for one decoded tile.

    A pixel is foreground when some channel differs from the reference
    background by more than epsilon. The mask is cleaned by a binary
    opening then closing with a (2r+1) square element, small 8-connected
    components are discarded, and the tightest rectangle around what
    survives becomes the blob. Returns (mask in tile coordinates, blob in
    frame coordinates or None when nothing survives).
    """
    x, y, w, h = tile.rect
    bg = np.asarray(background)
    crop = bg[y : y + h, x : x + w].astype(np.int16)
    diff = np.abs(tile.pixels.astype(np.int16) - crop).max(axis=2)
    mask = diff > config.epsilon

    if config.morph_radius > 0 and mask.any():
        r = config.morph_radius
        se = np.ones((2 * r + 1,) * 2, dtype=bool)
        # Pad so closing's erosion sees the dilated ring instead of the
        # array border; otherwise blobs touching the tile edge lose a row.
        padded = np.pad(mask, r, mode="constant")
        padded = ndimage.binary_opening(padded, structure=se)
        padded = ndimage.binary_closing(padded, structure=se)
        mask = padded[r:-r, r:-r]

    if config.min_component_area > 0 and mask.any():
        labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
        if count:
            areas = np.bincount(labels.ravel())
            small = areas < config.min_component_area
            small[0] = False
            mask[small[labels]] = False

    if not mask.any():
        return mask, None

    rows = np.any(mask, axis=1)
    cols = np.any(mask, axis=0)
    r0, r1 = np.argmax(rows), len(rows) - 1 - np.argmax(rows[::-1])
    c0, c1 = np.argmax(cols), len(cols) - 1 - np.argmax(cols[::-1])
    bh = float(r1 - r0 + 1)
    bw = float(c1 - c0 + 1)
    blob = BlobFeature(cx=x + c0 + bw / 2.0, cy=y + r0 + bh / 2.0, h=bh, w=bw)
    return mask, blob


def interpolate_blobs(blob_now: BlobFeature, blob_anchor: BlobFeature,
                      span: int, k: int) -> BlobFeature:
    """Blob k frames before ``blob_now``, linearly blended toward the anchor
    ``span`` frames back. k=0 returns blob_now, k=span returns the anchor."""
    if span <= 0 or not (0 <= k <= span):
        raise ValueError(f"k={k} outside interpolation span {span}")
    t = k / span
    return BlobFeature(
        cx=blob_now.cx + t * (blob_anchor.cx - blob_now.cx),
        cy=blob_now.cy + t * (blob_anchor.cy - blob_now.cy),
        h=blob_now.h + t * (blob_anchor.h - blob_now.h),
        w=blob_now.w + t * (blob_anchor.w - blob_now.w),
    )


@dataclass
class RefineResult:
    """Outcome of refining one object at one I-frame."""

    object_id: int
    blob: BlobFeature  # refined, or carried forward when subtraction found nothing
    refined: bool
    tile: PixelTile | None
    mask: np.ndarray | None
    rewrites: dict[int, BlobFeature]  # frame index -> interpolated blob
    unanchored: bool  # left anchor was not a refined I-frame blob


def refine_object(object_id: int, decode, background: np.ndarray,
                  config: RefineConfig,
                  gop_blobs: list[tuple[int, BlobFeature]],
                  anchor: tuple[int, BlobFeature, bool],
                  iframe_index: int, frame_w: int, frame_h: int) -> RefineResult:
    """Refine one object at one I-frame.

    decode: callable(rect) -> PixelTile for this I-frame's payload.
    gop_blobs: (frame, blob) pairs for the P-frames since the last anchor.
    anchor: (frame, blob, was_refined) to interpolate against.
    """
    pred = predict_blob([b for _, b in gop_blobs]) if gop_blobs else anchor[1]
    rect = decode_rect_for(pred, frame_w, frame_h)
    tile = decode(rect)
    mask, blob = background_subtract(tile, background, config)

    refined = blob is not None
    if not refined:
        blob = pred

    anchor_frame, anchor_blob, anchor_refined = anchor
    rewrites = {}
    span = iframe_index - anchor_frame
    if span > 1:
        for f, _ in gop_blobs:
            if anchor_frame < f < iframe_index:
                rewrites[f] = interpolate_blobs(blob, anchor_blob, span, iframe_index - f)

    return RefineResult(
        object_id=object_id,
        blob=blob,
        refined=refined,
        tile=tile,
        mask=mask if refined else None,
        rewrites=rewrites,
        unanchored=not anchor_refined,
    )


def refine_gop(tracks: dict[int, list[tuple[int, BlobFeature]]],
               payload, background: np.ndarray, config: RefineConfig,
               iframe_index: int,
               anchors: dict[int, tuple[int, BlobFeature, bool]]
               ) -> dict[int, RefineResult]:
    """Refine every tracked object against one I-frame payload.

    tracks maps object id to its (frame, blob) pairs for the closing GOP;
    anchors maps object id to its interpolation anchor. Convenience
    driver over ``refine_object`` with a shared partial decoder.
    """
    from .intra import decode_region_partial

    results = {}
    for oid in sorted(tracks):
        def decode(rect):
            tile, _ = decode_region_partial(payload, rect, background)
            return tile

        results[oid] = refine_object(
            oid, decode, background, config, tracks[oid], anchors[oid],
            iframe_index, payload.width_px, payload.height_px,
        )
    return results
