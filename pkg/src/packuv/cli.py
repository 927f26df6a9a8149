"""Command-line entry point: ``packuv <command> ...``.

Exit codes: 0 success, 2 usage/configuration, 3 file format, 4 input data.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import framecodec, keyframe, motion, sync
from .core import CameraModel
from .errors import (
    ConfigError,
    DataError,
    EncoderUnavailable,
    FormatError,
    InvalidConfig,
    PackUVError,
    SchemaError,
)
from .pipeline import check_origin_range, encode_sequence
from .ply import read_ply
from .uvmap import pyramid_schedule

EXIT_USAGE, EXIT_FORMAT, EXIT_DATA = 2, 3, 4

DEFAULTS = {
    "m0": 1024, "n0": 1024, "k": 8, "theta": keyframe.DEFAULT_THETA, "m": 8,
    "tau": motion.DEFAULT_TAU, "dilate": motion.DEFAULT_DILATE, "rmax": motion.DEFAULT_RMAX,
    "center": None, "encoder": framecodec.DEFAULT_ENCODER, "threads": None, "rate": "30",
    "bits": None,
}


def resolve_config(args):
    """Built-in defaults < ``--config`` file < explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{args.config}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["threads"] is None:
        cfg["threads"] = int(os.environ.get("PACKUV_THREADS", "1"))
    if isinstance(cfg["bits"], list):
        cfg["bits"] = _parse_bits(cfg["bits"])
    if isinstance(cfg["center"], str):
        cfg["center"] = _parse_center(cfg["center"])
    for key in ("m0", "n0", "k", "theta", "m", "dilate", "rmax", "threads"):
        cfg[key] = int(cfg[key])
    cfg["tau"] = float(cfg["tau"])
    if cfg["k"] < 1 or cfg["theta"] < 1 or cfg["m"] < 1 or cfg["threads"] < 1:
        raise InvalidConfig("k, theta, m and threads must be >= 1")
    if cfg["tau"] <= 0 or cfg["dilate"] < 0 or cfg["rmax"] < 0:
        raise InvalidConfig("tau must be > 0; dilate and rmax must be >= 0")
    return cfg


def _parse_center(text):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise InvalidConfig(f"--center expects x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise InvalidConfig(f"--center expects three values, got {text!r}")
    return vals


def _parse_bits(items):
    if items is None:
        return None
    out = {}
    for item in items:
        name, _, b = item.partition("=")
        if not b.isdigit():
            raise InvalidConfig(f"--bits expects name=depth, got {item!r}")
        out[name] = int(b)
    return out


def cmd_pack(args):
    cfg = resolve_config(args)
    check_origin_range(pyramid_schedule(cfg["m0"], cfg["n0"], cfg["k"]))
    sets = [read_ply(p) for p in args.ply]
    enc = encode_sequence(sets, M0=cfg["m0"], N0=cfg["n0"], K=cfg["k"], center=cfg["center"],
                          bits=cfg["bits"], frame_rate=Fraction(cfg["rate"]),
                          workers=cfg["threads"])
    prefix = Path(args.output)
    framecodec.write_sidecar(prefix.with_suffix(".puv"), enc.sidecar)
    stream = framecodec.serialize(enc.frames, enc.sidecar, workers=cfg["threads"])
    prefix.with_suffix(".rgb").write_bytes(stream.data)
    for i, (kept, pruned) in enumerate(zip(enc.retained, enc.pruned)):
        print(f"frame {i}: retained {kept}, pruned {len(pruned)}")
    print(f"atlas {enc.sidecar.atlas_w}x{enc.sidecar.atlas_h}, efficiency {enc.efficiency:.4f}")
    print(f"wrote {prefix.with_suffix('.puv')} and {prefix.with_suffix('.rgb')}")
    return 0


def _load_stream(puv, raw_path):
    sidecar = framecodec.read_sidecar(puv)
    raw = Path(raw_path or Path(puv).with_suffix(".rgb")).read_bytes()
    return sidecar, framecodec.stream_from_bytes(raw, sidecar)


def cmd_encode(args):
    cfg = resolve_config(args)
    sidecar, stream = _load_stream(args.puv, args.stream)
    out = Path(args.output)
    if not args.internal:
        try:
            framecodec.encode_external(stream, sidecar, out, cfg["encoder"], verify=False)
            counts = framecodec.check_lossless(
                stream, framecodec.decode_external(out, sidecar), sidecar)
            print(f"encoded {stream.frame_count} frames with external encoder -> {out}")
            print(f"verification: {sum(counts.values())} byte diffs")
            return 0
        except EncoderUnavailable as exc:
            print(f"external encoder unavailable ({exc}); using internal lossless fallback",
                  file=sys.stderr)
    blob = framecodec.compress_internal(stream, workers=cfg["threads"])
    out.write_bytes(blob)
    back = framecodec.decompress_internal(blob, workers=cfg["threads"])
    counts = framecodec.check_lossless(stream, back, sidecar)
    print(f"encoded {stream.frame_count} frames with internal codec -> {out} "
          f"({len(blob)} of {len(stream.data)} bytes)")
    print(f"verification: {sum(counts.values())} byte diffs")
    return 0


def cmd_decode(args):
    sidecar = framecodec.read_sidecar(args.puv)
    data = Path(args.encoded).read_bytes()
    if data[:4] == framecodec.PUVZ_MAGIC:
        stream = framecodec.decompress_internal(data)
    else:
        stream = framecodec.decode_external(args.encoded, sidecar)
    framecodec.deserialize(stream, sidecar)
    Path(args.output).write_bytes(stream.data)
    print(f"decoded {stream.frame_count} frames -> {args.output}")
    if args.reference:
        ref = framecodec.stream_from_bytes(Path(args.reference).read_bytes(), sidecar)
        counts = framecodec.plane_mismatches(ref, stream, sidecar)
        print(f"verification: {sum(counts.values())} byte diffs")
        for name, n in counts.items():
            if n:
                print(f"  {name}: {n}")
        return 0 if not any(counts.values()) else EXIT_DATA
    return 0


def _load_cameras(path):
    spec = json.loads(Path(path).read_text())
    try:
        items = spec["cameras"] if isinstance(spec, dict) else spec
        names = [c.get("name", f"cam{i}") for i, c in enumerate(items)]
        return names, [CameraModel.from_dict(c) for c in items]
    except (KeyError, TypeError, AttributeError) as exc:
        raise SchemaError(f"{path}: malformed camera list ({exc})") from None


def cmd_label(args):
    cfg = resolve_config(args)
    g = read_ply(args.ply)
    names, cams = _load_cameras(args.cameras)
    flow_dir = Path(args.flows)
    masks = [motion.motion_mask(motion.read_flo(flow_dir / f"{n}.flo"), cfg["tau"], cfg["dilate"])
             for n in names]
    labels = motion.label_dynamic(g, cams, masks, r_max=cfg["rmax"], workers=cfg["threads"])
    motion.write_labels(args.output, labels)
    if args.masks:
        from PIL import Image
        Path(args.masks).mkdir(parents=True, exist_ok=True)
        for n, mk in zip(names, masks):
            Image.fromarray(mk.astype(np.uint8) * 255).save(Path(args.masks) / f"{n}_mask.png")
    print(f"{int(labels.sum())} dynamic / {len(labels)} Gaussians -> {args.output}")
    return 0


def cmd_keyframe(args):
    cfg = resolve_config(args)
    if args.series:
        series = keyframe.read_series_csv(args.series)
    elif args.flows:
        files = sorted(Path(args.flows).glob("*.flo"))
        series = keyframe.flow_magnitude_series(motion.read_flo(f) for f in files)
    else:
        raise InvalidConfig("keyframe needs --series or --flows")
    keys = keyframe.select_keyframes(series, cfg["m"], cfg["theta"])
    if args.promote_percentile is not None:
        keys = keyframe.promote_keyframes(keys, series, args.promote_percentile)
    if len(keys) < cfg["m"]:
        print(f"note: only {len(keys) - 1} peaks found for m={cfg['m']}", file=sys.stderr)
    print("keyframes: " + " ".join(map(str, keys)))
    for s, e in keyframe.segment(len(series), keys):
        print(f"segment [{s}, {e})")
    return 0


def cmd_sync(args):
    trees = {}
    for f in args.camera_files:
        trees[Path(f).stem] = sync.build_tree(sync.read_camera_file(f, args.fps))
    reference = args.reference or next(iter(trees))
    table = sync.synchronize(reference, trees, args.threshold)
    text = table.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.json:
        Path(args.json).write_text(table.to_json())
    if args.save_trees:
        Path(args.save_trees).mkdir(parents=True, exist_ok=True)
        for name, tree in trees.items():
            sync.save_tree(tree, Path(args.save_trees) / f"{name}.avl")
    absent = sum(v is None for col in table.columns.values() for v in col)
    print(f"{len(table.timecodes)} reference frames, {absent} absent matches", file=sys.stderr)
    return 0


def cmd_inspect(args):
    sidecar, stream = _load_stream(args.puv, args.stream)
    frames = framecodec.deserialize(stream, sidecar)
    print(f"format v{sidecar.format_version}: M0={sidecar.M0} N0={sidecar.N0} K={sidecar.K}")
    print(f"atlas {sidecar.atlas_w}x{sidecar.atlas_h}, {len(sidecar.plane_names())} planes "
          f"in {sidecar.groups} triplets, {sidecar.frame_count} frames @ {sidecar.frame_rate}")
    print("scene center: " + ",".join(repr(x) for x in sidecar.scene_center))
    for ch in sidecar.channel_map:
        print(f"  {ch.name:<10} {ch.bits:>2} bits  [{ch.min!r}, {ch.max!r}]")
    total = 0
    for i, qf in enumerate(frames):
        occ = int(np.count_nonzero(qf.planes[0]))
        total += occ
        print(f"frame {i}: {occ} occupied pixels")
    print(f"total occupied: {total}")
    if args.previews and frames:
        from PIL import Image
        out = Path(args.previews)
        out.mkdir(parents=True, exist_ok=True)
        qf = frames[args.frame]
        for name, plane in zip(qf.plane_names, qf.planes):
            Image.fromarray(plane).save(out / f"frame{args.frame:04d}_{name}.png")
        print(f"wrote {len(qf.plane_names)} previews to {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="packuv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--threads", type=int, help="worker count (env PACKUV_THREADS)")

    sp = sub.add_parser("pack", help="PLY frame(s) -> sidecar + raw triplet stream")
    sp.add_argument("ply", nargs="+")
    sp.add_argument("-o", "--output", required=True, help="output prefix")
    sp.add_argument("--m0", type=int)
    sp.add_argument("--n0", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--center", help="projection origin x,y,z (default: bbox center)")
    sp.add_argument("--bits", nargs="+", metavar="NAME=DEPTH")
    sp.add_argument("--rate", help="frame rate, e.g. 30 or 30000/1001")
    common(sp)
    sp.set_defaults(func=cmd_pack)

    sp = sub.add_parser("encode", help="raw stream -> lossless video (or internal codec)")
    sp.add_argument("puv")
    sp.add_argument("--stream", help="raw stream (default: <puv>.rgb)")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--encoder", help="encoder command template")
    sp.add_argument("--internal", action="store_true", help="skip the external encoder")
    common(sp)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="encoded file -> raw stream")
    sp.add_argument("puv")
    sp.add_argument("encoded")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--reference", help="raw stream to verify against")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("label", help="dynamic/static Gaussian labels from flow")
    sp.add_argument("ply")
    sp.add_argument("--cameras", required=True, help="JSON list of cameras")
    sp.add_argument("--flows", required=True, help="directory with <camera>.flo files")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--masks", help="directory for per-camera mask PNGs")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--dilate", type=int)
    sp.add_argument("--rmax", type=int)
    common(sp)
    sp.set_defaults(func=cmd_label)

    sp = sub.add_parser("keyframe", help="keyframes from flow magnitude")
    sp.add_argument("--series", help="CSV of frame,magnitude")
    sp.add_argument("--flows", help="directory of .flo files, sorted by name")
    sp.add_argument("--m", type=int)
    sp.add_argument("--theta", type=int)
    sp.add_argument("--promote-percentile", type=float)
    common(sp)
    sp.set_defaults(func=cmd_keyframe)

    sp = sub.add_parser("sync", help="synchronize cameras by timecode")
    sp.add_argument("camera_files", nargs="+")
    sp.add_argument("--reference", help="camera name (file stem); default: first file")
    sp.add_argument("--threshold", type=int, required=True, help="max timecode distance (ticks)")
    sp.add_argument("--fps", type=int, help="frame rate for HH:MM:SS:FF timecodes")
    sp.add_argument("-o", "--output", help="CSV output (default: stdout)")
    sp.add_argument("--json")
    sp.add_argument("--save-trees", help="directory for binary AVL trees")
    sp.set_defaults(func=cmd_sync)

    sp = sub.add_parser("inspect", help="statistics and channel previews")
    sp.add_argument("puv")
    sp.add_argument("--stream")
    sp.add_argument("--previews", help="directory for 8-bit PNG previews")
    sp.add_argument("--frame", type=int, default=0)
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DataError, PackUVError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
