"""Command line front end: synthesize scenes and track streams.

Thin wrappers over the library; every flag maps onto a config field.

    mbtrack synth --script scene.scn --out scene.mbfs --gt gt.jsonl [--seed N]
    mbtrack track --input scene.mbfs --out traj.jsonl [--events events.jsonl]
                  [--gt gt.jsonl --metrics metrics.json] [--overlay dir/]
                  [--psi N --omega X --epsilon N --min-area N --morph-radius N]
                  [--no-spatial-filter] [--full-decode] [--live]
"""

from __future__ import annotations

import argparse
import json
import sys

from .filtering import PsmfConfig
from .pipeline import (
    TrackerConfig,
    evaluate,
    run_tracker,
    write_events_jsonl,
    write_records_jsonl,
)
from .refinement import RefineConfig
from .scene import load_ground_truth, load_scene_script, synthesize, write_ground_truth


def _cmd_synth(args) -> int:
    script = load_scene_script(args.script)
    if args.seed is not None:
        script.noise.rng_seed = args.seed
    data, truth = synthesize(script)
    with open(args.out, "wb") as f:
        f.write(data)
    if args.gt:
        write_ground_truth(truth, args.gt)
    print(f"wrote {len(data)} bytes to {args.out}"
          + (f", {len(truth)} truth records to {args.gt}" if args.gt else ""))
    return 0


def _cmd_track(args) -> int:
    config = TrackerConfig(
        psmf=PsmfConfig(
            psi=args.psi,
            omega=args.omega,
            enable_spatial_filter=not args.no_spatial_filter,
        ),
        refine=RefineConfig(
            epsilon=args.epsilon,
            min_component_area=args.min_area,
            morph_radius=args.morph_radius,
        ),
        full_decode=args.full_decode,
        live=args.live,
    )
    result = run_tracker(args.input, config)

    write_records_jsonl(result.records, args.out)
    if args.events:
        write_events_jsonl(result.events, args.events)

    if args.gt:
        truth = load_ground_truth(args.gt)
        result.metrics["evaluation"] = evaluate(
            result.records, truth, result.header.gop_len)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as f:
            json.dump(result.metrics, f, indent=2, sort_keys=True)
            f.write("\n")

    if args.overlay:
        from .overlay import render_overlays

        paths = render_overlays(args.input, result.records, args.overlay)
        print(f"wrote {len(paths)} overlay frames to {args.overlay}")

    m = result.metrics
    print(f"{len(result.records)} records, {len(result.events)} events,"
          f" {m['frames_per_second']:.1f} frames/s,"
          f" decoded block ratio {m['blocks_decoded_ratio']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mbtrack",
                                description="compressed-domain object tracking")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="render a scene script into an MBFS stream")
    ps.add_argument("--script", required=True, help="scene script (JSON)")
    ps.add_argument("--out", required=True, help="output stream path")
    ps.add_argument("--gt", help="also write ground-truth JSONL here")
    ps.add_argument("--seed", type=int, help="override the script's noise seed")
    ps.set_defaults(func=_cmd_synth)

    pt = sub.add_parser("track", help="track objects in an MBFS stream")
    pt.add_argument("--input", required=True, help="MBFS stream path")
    pt.add_argument("--out", required=True, help="trajectory JSONL path")
    pt.add_argument("--events", help="event JSONL path")
    pt.add_argument("--gt", help="ground-truth JSONL to evaluate against")
    pt.add_argument("--metrics", help="metrics JSON path")
    pt.add_argument("--overlay", help="directory for annotated PPM frames")
    pt.add_argument("--psi", type=int, default=8,
                    help="observation window in P-frames (default 8)")
    pt.add_argument("--omega", type=float, default=None,
                    help="promotion threshold (default psi*ln 2)")
    pt.add_argument("--epsilon", type=int, default=25,
                    help="background subtraction threshold (default 25)")
    pt.add_argument("--min-area", type=int, default=16,
                    help="minimum surviving mask component area (default 16)")
    pt.add_argument("--morph-radius", type=int, default=1,
                    help="open/close structuring element radius (default 1)")
    pt.add_argument("--no-spatial-filter", action="store_true",
                    help="keep single-block and coefficient-free groups")
    pt.add_argument("--full-decode", action="store_true",
                    help="decode whole I-frames instead of predicted regions")
    pt.add_argument("--live", action="store_true",
                    help="emit records per frame instead of per GOP")
    pt.set_defaults(func=_cmd_track)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
