"""Occlusion bookkeeping and hue-based identity recovery.

When the regions of two or more confirmed objects collide they are
tracked as a single occlusion group. Each member's appearance is
snapshotted just before contact as a 64-bin hue histogram. When the
group later splits into fragments that independently re-confirm as
objects, posterior histograms of the fragments are matched to the
priors by smallest Euclidean distance and the original ids resume.

Hue is the standard hexagonal-projection angle in [0, 360): gray pixels
(max channel == min channel) carry no hue and are excluded. Histograms
are normalized to sum to 1 over the counted pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .filtering import BlockGroup, Entity, TrackEvent
    from .intra import PixelTile

HUE_BINS = 64


@dataclass(frozen=True)
class HueHistogram:
    bins: np.ndarray  # (64,) float64, sums to 1 unless no pixel had hue
    valid_pixel_count: int

    def __post_init__(self):
        if self.bins.shape != (HUE_BINS,):
            raise ValueError(f"expected {HUE_BINS} bins, got {self.bins.shape}")

    def distance(self, other: "HueHistogram") -> float:
        return float(np.linalg.norm(self.bins - other.bins))

    def __eq__(self, other):
        if not isinstance(other, HueHistogram):
            return NotImplemented
        return (
            self.valid_pixel_count == other.valid_pixel_count
            and np.array_equal(self.bins, other.bins)
        )


def hue_histogram(tile: "PixelTile", mask: np.ndarray) -> HueHistogram:
    """Histogram the hue of the tile pixels selected by ``mask``.

    mask is a (h, w) boolean array in tile coordinates. Gray pixels are
    skipped; if nothing remains the histogram is all zeros.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tile.pixels.shape[:2]:
        raise ValueError("mask shape does not match tile")
    pix = tile.pixels[mask].astype(np.float64)
    if pix.size == 0:
        return HueHistogram(np.zeros(HUE_BINS), 0)

    mx = pix.max(axis=1)
    mn = pix.min(axis=1)
    chroma = mx - mn
    colored = chroma > 0
    pix = pix[colored]
    if pix.size == 0:
        return HueHistogram(np.zeros(HUE_BINS), 0)
    mx = mx[colored]
    chroma = chroma[colored]

    r, g, b = pix[:, 0], pix[:, 1], pix[:, 2]
    # First channel attaining the max decides the sector.
    sector = np.argmax(pix == mx[:, None], axis=1)
    hue6 = np.empty(len(pix))
    is_r = sector == 0
    is_g = sector == 1
    is_b = sector == 2
    hue6[is_r] = ((g[is_r] - b[is_r]) / chroma[is_r]) % 6.0
    hue6[is_g] = (b[is_g] - r[is_g]) / chroma[is_g] + 2.0
    hue6[is_b] = (r[is_b] - g[is_b]) / chroma[is_b] + 4.0
    hue_deg = hue6 * 60.0

    idx = np.floor(hue_deg / 360.0 * HUE_BINS).astype(int)
    np.clip(idx, 0, HUE_BINS - 1, out=idx)
    bins = np.bincount(idx, minlength=HUE_BINS).astype(np.float64)
    n = int(bins.sum())
    return HueHistogram(bins / n, n)


def match_identities(priors: dict[int, HueHistogram],
                     posteriors: dict[int, HueHistogram]
                     ) -> tuple[dict[int, int], list[tuple[float, int, int]]]:
    """Greedy one-to-one matching of fragments to remembered members.

    priors:     member object id -> pre-occlusion histogram
    posteriors: fragment id      -> post-split histogram

    Pairs are taken in ascending Euclidean distance; ties break on lower
    fragment id, then lower member id. Returns (fragment_id -> member_id,
    chosen (distance, fragment_id, member_id) triples). Fragments or
    members left over simply stay unmatched; the caller decides what
    those mean.
    """
    pairs = sorted(
        (post.distance(prior), frag_id, member_id)
        for frag_id, post in posteriors.items()
        for member_id, prior in priors.items()
    )
    assignment: dict[int, int] = {}
    used_members: set[int] = set()
    chosen = []
    for dist, frag_id, member_id in pairs:
        if frag_id in assignment or member_id in used_members:
            continue
        assignment[frag_id] = member_id
        used_members.add(member_id)
        chosen.append((dist, frag_id, member_id))
    return assignment, chosen


@dataclass
class OcclusionGroup:
    """Two or more objects tracked as one region while their blobs overlap."""

    id: int
    member_object_ids: list[int]
    prior_hues: dict[int, HueHistogram | None]
    region: frozenset = frozenset()
    start_frame: int = 0
    fragment_ids: list[int] = field(default_factory=list)
    confirmed_split: bool = False


def snapshot_prior(o: OcclusionGroup, entity: "Entity", frame_index: int,
                   events: list) -> None:
    """Record a member's last refined appearance as its identity prior."""
    from .filtering import TrackEvent

    o.prior_hues[entity.id] = entity.prior_hue
    if entity.prior_hue is None:
        events.append(TrackEvent(frame_index, "prior_capture_failed",
                                 {"occlusion_id": o.id, "object_id": entity.id}))


@dataclass(frozen=True)
class CollisionDecision:
    """What to do with one group that overlaps several tracked units.

    kind is one of:
      "occlusion"  -- two or more real objects collided; members lists them
      "absorb"     -- exactly one real object; candidates merge into it
      "merge"      -- only candidates; they merge into the oldest
    """

    kind: str
    target_id: int | None
    member_ids: tuple[int, ...] = ()


def detect_collision(group: "BlockGroup", overlapped: list["Entity"]) -> CollisionDecision:
    """Classify a multi-unit overlap. Pure decision; no state is touched."""
    from .filtering import Label

    if len(overlapped) < 2:
        raise ValueError("a collision needs at least two overlapped entities")
    reals = [e for e in overlapped if e.label is Label.REAL]
    cands = [e for e in overlapped if e.label is Label.CANDIDATE]
    if len(reals) >= 2:
        return CollisionDecision("occlusion", None, tuple(sorted(r.id for r in reals)))
    if len(reals) == 1:
        return CollisionDecision("absorb", reals[0].id,
                                 tuple(sorted(c.id for c in cands)))
    winner = min(cands, key=lambda e: (e.seed_frame, e.id))
    losers = tuple(sorted(c.id for c in cands if c is not winner))
    return CollisionDecision("merge", winner.id, losers)


@dataclass(frozen=True)
class SplitDecision:
    """Outcome of checking an occlusion region against this frame's groups."""

    split: bool
    fragment_seeds: tuple[frozenset, ...] = ()


def detect_split(occlusion: OcclusionGroup, overlapping_groups: list["BlockGroup"]
                 ) -> SplitDecision:
    """A split begins when >= 2 groups overlap the occlusion's region."""
    hits = [g for g in overlapping_groups if g.members & occlusion.region]
    if len(hits) >= 2:
        return SplitDecision(True, tuple(g.members for g in hits))
    return SplitDecision(False)
