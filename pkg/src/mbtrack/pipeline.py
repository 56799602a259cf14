"""End-to-end tracking over an MBFS stream.

Per P-frame: cluster non-skip macroblocks, filter implausible groups,
and advance the entity state machine. Per I-frame: partially decode a
predicted region per tracked object, re-measure its blob against the
reference background, rewrite the GOP's P-frame blobs by interpolation,
refresh appearance priors, and resolve any pending post-occlusion
identities. Output is GOP-delayed: records for a frame are released
only once its GOP's terminating I-frame has been processed (everything
left flushes at end of stream). ``live=True`` trades the rewrites for
immediate per-frame emission.
"""

from __future__ import annotations

import json
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .filtering import (
    EntityTracker,
    Label,
    PsmfConfig,
    TrackEvent,
    cluster_blocks,
    spatial_filter,
)
from .intra import PixelTile, decode_full, decode_region_partial
from .occlusion import hue_histogram, match_identities
from .refinement import BlobFeature, RefineConfig, refine_object
from .scene import GroundTruthRecord
from .stream import read_stream


@dataclass
class TrackerConfig:
    psmf: PsmfConfig = field(default_factory=PsmfConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    full_decode: bool = False  # decode whole I-frames instead of regions
    live: bool = False  # emit per frame instead of per GOP


@dataclass
class TrackRecord:
    """One tracked blob at one frame."""

    frame_index: int
    object_id: int
    cx: float
    cy: float
    h: float
    w: float
    state: str  # "Candidate", "Real", "Occluded"
    refined: bool

    @classmethod
    def from_blob(cls, frame_index: int, object_id: int, blob: BlobFeature,
                  state: str, refined: bool = False) -> "TrackRecord":
        return cls(frame_index, object_id, float(blob.cx), float(blob.cy),
                   float(blob.h), float(blob.w), state, refined)

    @property
    def blob(self) -> BlobFeature:
        return BlobFeature(self.cx, self.cy, self.h, self.w)

    def set_blob(self, blob: BlobFeature) -> None:
        self.cx = float(blob.cx)
        self.cy = float(blob.cy)
        self.h = float(blob.h)
        self.w = float(blob.w)

    def to_json_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "object_id": self.object_id,
            "cx": self.cx, "cy": self.cy, "h": self.h, "w": self.w,
            "state": self.state,
            "refined": self.refined,
        }


@dataclass
class TrackResult:
    records: list[TrackRecord]
    events: list[TrackEvent]
    metrics: dict
    header: object


STAGES = ("parse", "psmf", "partial_decode", "subtract", "interpolate", "occlusion")


class _Run:
    """State for one tracking pass."""

    def __init__(self, config: TrackerConfig, on_emit=None):
        self.cfg = config
        self.tracker = EntityTracker(config.psmf)
        self.events: list[TrackEvent] = []
        self.records: list[TrackRecord] = []
        self.pending: list[TrackRecord] = []
        self.candidate_buf: dict[int, list[TrackRecord]] = defaultdict(list)
        self.unit_frame_rec: dict[int, dict[int, TrackRecord]] = defaultdict(dict)
        self.gop_blobs: dict[int, list[tuple[int, BlobFeature]]] = defaultdict(list)
        self.anchors: dict[int, tuple[int, BlobFeature, bool]] = {}
        self.timers = {s: 0.0 for s in STAGES}
        self.decoded_blocks = 0
        self.total_blocks = 0
        self.on_emit = on_emit

    # -- record plumbing ---------------------------------------------------

    def _register(self, rec: TrackRecord) -> None:
        self.unit_frame_rec[rec.object_id][rec.frame_index] = rec

    def _drop_unit(self, uid: int) -> None:
        self.candidate_buf.pop(uid, None)
        self.unit_frame_rec.pop(uid, None)
        self.gop_blobs.pop(uid, None)
        self.anchors.pop(uid, None)

    def _flush(self, upto_frame: int | None, emitted_after: int) -> None:
        """Release pending records with frame < upto_frame (None = all)."""
        if upto_frame is None:
            batch = self.pending
            keep = []
        else:
            batch = [r for r in self.pending if r.frame_index < upto_frame]
            keep = [r for r in self.pending if r.frame_index >= upto_frame]
        if not batch:
            self.pending = keep
            return
        batch.sort(key=lambda r: (r.frame_index, r.object_id))
        self.records.extend(batch)
        self.pending = keep
        for r in batch:
            frames = self.unit_frame_rec.get(r.object_id)
            if frames is not None:
                frames.pop(r.frame_index, None)
        if self.on_emit is not None:
            self.on_emit(emitted_after, list(batch))

    # -- P-frame -------------------------------------------------------------

    def process_pframe(self, frame) -> None:
        t0 = time.perf_counter()
        groups = cluster_blocks(frame)
        active = spatial_filter(groups, enabled=self.cfg.psmf.enable_spatial_filter)
        step_events = self.tracker.step(active, frame.frame_index)
        self.events.extend(step_events)
        self._apply_step_events(step_events, frame.frame_index)
        self._emit_frame_records(frame.frame_index)
        self.timers["psmf"] += time.perf_counter() - t0
        if self.cfg.live:
            self._flush(frame.frame_index + 1, frame.frame_index)

    def _apply_step_events(self, step_events: list[TrackEvent], frame_index: int) -> None:
        tr = self.tracker
        for ev in step_events:
            if ev.kind == "seed":
                eid = ev.data["object_id"]
                e = tr.entities[eid]
                self.anchors[eid] = (frame_index, BlobFeature.from_grid_region(e.region), False)
            elif ev.kind == "classified":
                eid = ev.data["object_id"]
                if ev.data["label"] == Label.REAL.value:
                    buffered = self.candidate_buf.pop(eid, [])
                    if ev.data.get("is_fragment"):
                        # The occlusion entity covered these frames already.
                        for r in buffered:
                            self.unit_frame_rec[eid].pop(r.frame_index, None)
                    else:
                        self.pending.extend(buffered)
                else:
                    self._drop_unit(eid)
            elif ev.kind in ("merged", "occluded_single", "stale_retired"):
                uid = ev.data.get("object_id", ev.data.get("fragment_id"))
                self._drop_unit(uid)
            elif ev.kind == "reunion":
                for fid in ev.data["fragment_ids"]:
                    self._drop_unit(fid)
            elif ev.kind == "occlusion_begin":
                oid = ev.data["occlusion_id"]
                o = tr.occlusions[oid]
                self.anchors[oid] = (frame_index, BlobFeature.from_grid_region(o.region), False)
            elif ev.kind == "occlusion_merge":
                self._drop_unit(ev.data["absorbed"])
            elif ev.kind == "disocclusion":
                for fid in ev.data["fragment_ids"]:
                    f = tr.entities[fid]
                    self.candidate_buf.pop(fid, None)  # covered by occlusion records
                    self.unit_frame_rec[fid].clear()
                    self.anchors[fid] = (
                        frame_index, BlobFeature.from_grid_region(f.region), False,
                    )
                    self.gop_blobs[fid] = []

    def _emit_frame_records(self, frame_index: int) -> None:
        tr = self.tracker
        for eid in sorted(tr.entities):
            e = tr.entities[eid]
            blob = BlobFeature.from_grid_region(e.region)
            self.gop_blobs[eid].append((frame_index, blob))
            if e.label is Label.CANDIDATE:
                rec = TrackRecord.from_blob(frame_index, eid, blob, "Candidate")
                self.candidate_buf[eid].append(rec)
                self._register(rec)
            elif e.label is Label.REAL:
                rec = TrackRecord.from_blob(frame_index, eid, blob, "Real")
                self.pending.append(rec)
                self._register(rec)
        for oid in sorted(tr.occlusions):
            o = tr.occlusions[oid]
            if o.confirmed_split:
                continue  # fragments are real objects now; they emit
            blob = BlobFeature.from_grid_region(o.region)
            self.gop_blobs[oid].append((frame_index, blob))
            rec = TrackRecord.from_blob(frame_index, oid, blob, "Occluded")
            self.pending.append(rec)
            self._register(rec)

    # -- I-frame ---------------------------------------------------------------

    def process_iframe(self, frame, background: np.ndarray, frame_w: int,
                       frame_h: int) -> None:
        payload = frame.intra_payload
        i = frame.frame_index
        self.total_blocks += payload.blocks_per_plane

        full_img = None
        if self.cfg.full_decode:
            t0 = time.perf_counter()
            tile, stats = decode_region_partial(
                payload, (0, 0, frame_w, frame_h), background)
            self.timers["partial_decode"] += time.perf_counter() - t0
            full_img = tile.pixels
            self.decoded_blocks += stats.blocks_decoded

        posterior_hues: dict[int, object] = {}
        units = self._refinable_units()
        for uid, state, entity in units:
            self._refine_unit(uid, state, entity, payload, background,
                              full_img, i, frame_w, frame_h, posterior_hues)

        t0 = time.perf_counter()
        self._resolve_pending_identities(posterior_hues, i)
        self.timers["occlusion"] += time.perf_counter() - t0

        if not self.cfg.live:
            self._flush(i, i)

    def _refinable_units(self):
        tr = self.tracker
        units = []
        for eid in sorted(tr.entities):
            e = tr.entities[eid]
            if e.label is Label.REAL:
                units.append((eid, "Real", e))
        for oid in sorted(tr.occlusions):
            o = tr.occlusions[oid]
            if not o.confirmed_split:
                units.append((oid, "Occluded", None))
        return units

    def _refine_unit(self, uid, state, entity, payload, background, full_img,
                     i, frame_w, frame_h, posterior_hues) -> None:
        blobs = self.gop_blobs.get(uid, [])
        anchor = self.anchors.get(uid)
        if anchor is None:
            if not blobs:
                return
            anchor = (blobs[0][0], blobs[0][1], False)
        if not blobs:
            blobs = [(anchor[0], anchor[1])]

        decode_spent = 0.0

        def decode(rect):
            nonlocal decode_spent
            t0 = time.perf_counter()
            if full_img is not None:
                x, y, w, h = rect
                tile = PixelTile(rect, full_img[y : y + h, x : x + w])
            else:
                tile, stats = decode_region_partial(payload, rect, background)
                self.decoded_blocks += stats.blocks_decoded
            decode_spent += time.perf_counter() - t0
            return tile

        t0 = time.perf_counter()
        result = refine_object(uid, decode, background, self.cfg.refine,
                               blobs, anchor, i, frame_w, frame_h)
        refine_spent = time.perf_counter() - t0
        self.timers["partial_decode"] += decode_spent
        self.timers["subtract"] += refine_spent - decode_spent

        if not result.refined:
            # Nothing survived subtraction; this GOP keeps macroblock geometry.
            result.blob = blobs[-1][1]
            self.events.append(TrackEvent(i, "subtraction_empty", {"object_id": uid}))
        else:
            if result.unanchored and result.rewrites:
                self.events.append(TrackEvent(i, "unanchored_interpolation",
                                              {"object_id": uid, "anchor_frame": anchor[0]}))
            t0 = time.perf_counter()
            frames_map = self.unit_frame_rec.get(uid, {})
            for f, blob in result.rewrites.items():
                rec = frames_map.get(f)
                if rec is not None:
                    rec.set_blob(blob)
                    rec.refined = True
            self.timers["interpolate"] += time.perf_counter() - t0

        rec = TrackRecord.from_blob(i, uid, result.blob, state, refined=result.refined)
        self.pending.append(rec)
        self._register(rec)

        t0 = time.perf_counter()
        if entity is not None and result.refined and result.mask is not None \
                and result.mask.any():
            hue = hue_histogram(result.tile, result.mask)
            entity.prior_hue = hue
            if entity.pending_identity:
                posterior_hues[uid] = hue
        self.timers["subtract"] += time.perf_counter() - t0

        self.anchors[uid] = (i, result.blob, result.refined)
        self.gop_blobs[uid] = []

    def _resolve_pending_identities(self, posterior_hues: dict, i: int) -> None:
        tr = self.tracker
        for oid in sorted(tr.occlusions):
            o = tr.occlusions[oid]
            if not o.confirmed_split:
                continue
            live_frags = [fid for fid in o.fragment_ids if fid in tr.entities]
            posteriors = {fid: posterior_hues[fid] for fid in live_frags
                          if fid in posterior_hues}
            priors = {mid: h for mid, h in o.prior_hues.items()
                      if h is not None and mid in tr.frozen}
            assignment, chosen = match_identities(priors, posteriors)

            # Hue capture can fail on either side (prior never taken, or the
            # fragment's mask came up empty). Leftovers pair by id order;
            # that is the only deterministic choice left.
            leftover_frags = sorted(f for f in live_frags if f not in assignment)
            leftover_members = sorted(m for m in o.member_object_ids
                                      if m in tr.frozen
                                      and m not in assignment.values())
            for fid, mid in zip(leftover_frags, leftover_members):
                assignment[fid] = mid
                self.events.append(TrackEvent(i, "identity_by_exclusion",
                                              {"fragment_id": fid, "object_id": mid}))

            for fid, mid in sorted(assignment.items()):
                frames_map = self.unit_frame_rec.pop(fid, {})
                for rec in frames_map.values():
                    rec.object_id = mid
                self.unit_frame_rec[mid].update(frames_map)
                if fid in self.anchors:
                    self.anchors[mid] = self.anchors.pop(fid)
                self.gop_blobs[mid] = self.gop_blobs.pop(fid, [])

            self.events.append(TrackEvent(i, "identity_assigned", {
                "occlusion_id": oid,
                "assignment": {str(f): m for f, m in sorted(assignment.items())},
                "distances": [
                    {"fragment_id": f, "object_id": m, "distance": d}
                    for d, f, m in chosen
                ],
            }))
            tr.resolve_identities(o, assignment, i, self.events)
            for fid, mid in assignment.items():
                member = tr.entities.get(mid)
                if member is not None and fid in posterior_hues:
                    member.prior_hue = posterior_hues[fid]

    # -- end of stream -----------------------------------------------------

    def finish(self, last_frame_index: int) -> None:
        for oid in sorted(self.tracker.occlusions):
            o = self.tracker.occlusions[oid]
            if o.confirmed_split:
                self.events.append(TrackEvent(last_frame_index, "identity_unresolved",
                                              {"occlusion_id": oid}))
        for eid in sorted(self.candidate_buf):
            self.events.append(TrackEvent(last_frame_index, "candidate_dropped_eos",
                                          {"object_id": eid}))
        self.candidate_buf.clear()
        self._flush(None, last_frame_index)


def run_tracker(source, config: TrackerConfig | None = None,
                on_emit=None) -> TrackResult:
    """Track every object in an MBFS stream.

    source: bytes, a path, or a binary file object. Returns records,
    events, and run metrics. ``on_emit(after_frame, batch)`` observes
    each release of buffered records.
    """
    config = config or TrackerConfig()
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            source = f.read()
    elif hasattr(source, "read"):
        source = source.read()

    t_start = time.perf_counter()
    run = _Run(config, on_emit=on_emit)

    t0 = time.perf_counter()
    header, background_chunk, frames = read_stream(source)
    run.timers["parse"] += time.perf_counter() - t0

    background = background_chunk.rgb if background_chunk is not None else None
    last_index = 0

    while True:
        t0 = time.perf_counter()
        try:
            frame = next(frames)
        except StopIteration:
            run.timers["parse"] += time.perf_counter() - t0
            break
        run.timers["parse"] += time.perf_counter() - t0
        last_index = frame.frame_index

        if frame.kind == "I":
            if background is None:
                # No reference shipped: the first I-frame is the reference.
                t0 = time.perf_counter()
                background = decode_full(frame.intra_payload)
                run.timers["partial_decode"] += time.perf_counter() - t0
            run.process_iframe(frame, background, header.width_px, header.height_px)
        else:
            run.process_pframe(frame)

    run.finish(last_index)
    total = time.perf_counter() - t_start

    metrics = {
        "frame_count": header.frame_count,
        "total_seconds": total,
        "frames_per_second": header.frame_count / total if total > 0 else float("inf"),
        "blocks_decoded_ratio": (
            run.decoded_blocks / run.total_blocks if run.total_blocks else 0.0
        ),
        "stage_seconds": dict(run.timers),
        "evaluation": None,
    }
    return TrackResult(records=run.records, events=run.events, metrics=metrics,
                       header=header)


# -- evaluation ---------------------------------------------------------------


def evaluate(records: list[TrackRecord], truth: list[GroundTruthRecord],
             gop_len: int) -> dict:
    """Compare tracker output against ground truth.

    Per frame, tracked records are matched to ground-truth objects
    greedily by ascending center distance, one-to-one (ties: lower truth
    id, then lower track id). Center error and overlap are measured over
    matches; identity switches count id changes over Real-state matches
    per truth object; detection latency counts the P-frames between an
    object's first visible frame and its first Real-state match.
    """
    by_frame_recs: dict[int, list[TrackRecord]] = defaultdict(list)
    for r in records:
        by_frame_recs[r.frame_index].append(r)
    by_frame_truth: dict[int, list[GroundTruthRecord]] = defaultdict(list)
    for g in truth:
        by_frame_truth[g.frame_index].append(g)

    matches: dict[int, list[tuple[int, TrackRecord, float]]] = defaultdict(list)
    for f in sorted(by_frame_truth):
        recs = by_frame_recs.get(f, [])
        gts = by_frame_truth[f]
        pairs = sorted(
            (float(np.hypot(r.cx - g.cx, r.cy - g.cy)), g.object_id, r.object_id, g, r)
            for g in gts
            for r in recs
        )
        used_g: set[int] = set()
        used_r: set[int] = set()
        for dist, gid, rid, g, r in pairs:
            if gid in used_g or rid in used_r:
                continue
            used_g.add(gid)
            used_r.add(rid)
            matches[gid].append((f, r, dist))

    per_object = {}
    all_errors: list[float] = []
    all_ious: list[float] = []
    id_switches = 0
    first_visible = {g: min(r.frame_index for r in truth if r.object_id == g)
                     for g in {r.object_id for r in truth}}

    for gid in sorted(first_visible):
        ms = matches.get(gid, [])
        errors = [d for _, _, d in ms]
        ious = []
        for f, r, _ in ms:
            gt = next(g for g in by_frame_truth[f] if g.object_id == gid)
            ious.append(r.blob.iou(BlobFeature(gt.cx, gt.cy, gt.h, gt.w)))
        real_ms = [(f, r) for f, r, _ in ms if r.state == "Real"]
        switches = sum(
            1 for (_, a), (_, b) in zip(real_ms, real_ms[1:])
            if a.object_id != b.object_id
        )
        id_switches += switches

        latency = None
        if real_ms:
            first_real = min(f for f, _ in real_ms)
            f0 = first_visible[gid]
            latency = sum(1 for f in range(f0 + 1, first_real + 1) if f % gop_len != 0)

        per_object[gid] = {
            "matched_frames": len(ms),
            "mean_center_error": float(np.mean(errors)) if errors else None,
            "max_center_error": float(np.max(errors)) if errors else None,
            "mean_iou": float(np.mean(ious)) if ious else None,
            "id_switches": switches,
            "detection_latency_pframes": latency,
            "matched_track_ids": sorted({r.object_id for _, r, _ in ms}),
        }
        all_errors.extend(errors)
        all_ious.extend(ious)

    return {
        "per_object": per_object,
        "mean_center_error": float(np.mean(all_errors)) if all_errors else None,
        "max_center_error": float(np.max(all_errors)) if all_errors else None,
        "mean_iou": float(np.mean(all_ious)) if all_ious else None,
        "id_switch_count": id_switches,
        "real_track_ids": sorted({r.object_id for r in records if r.state == "Real"}),
    }


# -- serialization helpers ------------------------------------------------------


def write_records_jsonl(records: list[TrackRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_json_dict(), sort_keys=True) + "\n")


def write_events_jsonl(events: list[TrackEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in events:
            f.write(json.dumps(e.to_json_dict(), sort_keys=True) + "\n")


def load_records_jsonl(path) -> list[TrackRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(TrackRecord(
                frame_index=int(d["frame_index"]), object_id=int(d["object_id"]),
                cx=float(d["cx"]), cy=float(d["cy"]), h=float(d["h"]), w=float(d["w"]),
                state=str(d["state"]), refined=bool(d["refined"]),
            ))
    return out
