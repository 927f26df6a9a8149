"""Byte-exact serialization of quantized atlas sequences.

Each frame's 8-bit planes are grouped into RGB triplets (zero-padded to a
multiple of three) and the triplet images are stacked vertically, giving one
``atlas_w x (atlas_h * groups)`` RGB24 video frame per atlas.  A JSON sidecar
carries everything needed to invert the encoding.
"""

from __future__ import annotations

import json
import math
import shlex
import shutil
import struct
import subprocess
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .atlas import layout
from .errors import (
    EncoderUnavailable,
    FormatError,
    GeometryMismatch,
    LossyRoundTrip,
    SchemaError,
    TruncatedStream,
    UnsupportedVersion,
)
from .quant import QuantChannel, QuantizedFrame, QuantSpec
from .uvmap import pyramid_schedule

FORMAT_VERSION = 1
PUVZ_MAGIC = b"PUVZ"
PUVZ_VERSION = 1

DEFAULT_ENCODER = ("{ffmpeg} -y -loglevel error -f rawvideo -pix_fmt rgb24 "
                   "-s {width}x{height} -r {rate} -i - -c:v ffv1 -level 3 -pix_fmt bgr0 {output}")
DEFAULT_DECODER = "{ffmpeg} -loglevel error -i {input} -f rawvideo -pix_fmt rgb24 -"


@dataclass
class Sidecar:
    M0: int
    N0: int
    K: int
    scene_center: tuple
    channel_map: list
    frame_count: int
    atlas_w: int
    atlas_h: int
    frame_rate: Fraction = Fraction(30)
    keyframe_indices: list = field(default_factory=lambda: [0])
    format_version: int = FORMAT_VERSION

    @property
    def spec(self):
        return QuantSpec(tuple(self.channel_map))

    def plane_names(self):
        return self.spec.plane_names()

    @property
    def groups(self):
        return math.ceil(len(self.plane_names()) / 3)

    @property
    def layout(self):
        return layout(pyramid_schedule(self.M0, self.N0, self.K))

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "M0": self.M0,
            "N0": self.N0,
            "K": self.K,
            "scene_center": [float(x) for x in self.scene_center],
            "channel_map": [
                {"name": ch.name, "bits": ch.bits, "min": float(ch.min), "max": float(ch.max)}
                for ch in self.channel_map
            ],
            "frame_count": self.frame_count,
            "frame_rate": f"{self.frame_rate.numerator}/{self.frame_rate.denominator}",
            "keyframe_indices": [int(k) for k in self.keyframe_indices],
            "atlas_w": self.atlas_w,
            "atlas_h": self.atlas_h,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            version = d["format_version"]
        except KeyError:
            raise SchemaError("sidecar is missing 'format_version'") from None
        if version != FORMAT_VERSION:
            raise UnsupportedVersion(f"sidecar format version {version} (expected {FORMAT_VERSION})")
        try:
            channel_map = [QuantChannel(c["name"], int(c["bits"]), float(c["min"]), float(c["max"]))
                           for c in d["channel_map"]]
            sc = cls(
                M0=int(d["M0"]), N0=int(d["N0"]), K=int(d["K"]),
                scene_center=tuple(float(x) for x in d["scene_center"]),
                channel_map=channel_map,
                frame_count=int(d["frame_count"]),
                atlas_w=int(d["atlas_w"]), atlas_h=int(d["atlas_h"]),
                frame_rate=Fraction(d["frame_rate"]),
                keyframe_indices=[int(k) for k in d["keyframe_indices"]],
                format_version=version,
            )
        except KeyError as exc:
            raise SchemaError(f"sidecar is missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed sidecar: {exc}") from None
        sc.validate()
        return sc

    def validate(self):
        for ch in self.channel_map:
            if not (math.isfinite(ch.min) and math.isfinite(ch.max)) or ch.max < ch.min:
                raise SchemaError(f"channel {ch.name} has an invalid range")
        lay = self.layout
        if (lay.atlas_w, lay.atlas_h) != (self.atlas_w, self.atlas_h):
            raise SchemaError("atlas size does not match the pyramid layout")
        if len(self.scene_center) != 3:
            raise SchemaError("scene_center must have three components")


def sidecar_to_json(sidecar):
    return json.dumps(sidecar.to_dict(), indent=2)


def sidecar_from_json(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"sidecar is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise SchemaError("sidecar must be a JSON object")
    return Sidecar.from_dict(d)


def write_sidecar(path, sidecar):
    sidecar.validate()
    Path(path).write_text(sidecar_to_json(sidecar) + "\n")


def read_sidecar(path):
    return sidecar_from_json(Path(path).read_text())


@dataclass
class TripletStream:
    data: bytes
    frame_count: int
    width: int
    height: int
    groups: int

    @property
    def frame_nbytes(self):
        return self.groups * self.height * self.width * 3

    def frames_array(self):
        """View as ``(frames, groups * height, width, 3)`` uint8."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(
            self.frame_count, self.groups * self.height, self.width, 3)


def _frame_bytes(qf, groups):
    P, H, W = qf.planes.shape
    padded = np.zeros((groups * 3, H, W), dtype=np.uint8)
    padded[:P] = qf.planes
    return padded.reshape(groups, 3, H, W).transpose(0, 2, 3, 1).tobytes()


def serialize(frames, sidecar, workers=1):
    frames = list(frames)
    names = tuple(sidecar.plane_names())
    H, W, G = sidecar.atlas_h, sidecar.atlas_w, sidecar.groups
    for i, qf in enumerate(frames):
        if qf.planes.shape != (len(names), H, W) or tuple(qf.plane_names) != names:
            raise GeometryMismatch(f"frame {i} has planes {qf.planes.shape}, expected "
                                   f"{(len(names), H, W)}")
    with ThreadPoolExecutor(max(1, workers)) as pool:
        chunks = list(pool.map(lambda qf: _frame_bytes(qf, G), frames))
    return TripletStream(b"".join(chunks), len(frames), W, H, G)


def deserialize(stream, sidecar):
    H, W, G = sidecar.atlas_h, sidecar.atlas_w, sidecar.groups
    if (stream.width, stream.height, stream.groups) != (W, H, G):
        raise GeometryMismatch("stream geometry does not match the sidecar")
    expected = stream.frame_count * stream.frame_nbytes
    if len(stream.data) < expected:
        raise TruncatedStream(f"stream has {len(stream.data)} bytes, expected {expected}")
    if len(stream.data) > expected:
        raise GeometryMismatch(f"stream has {len(stream.data) - expected} trailing bytes")
    names = tuple(sidecar.plane_names())
    lay = sidecar.layout
    arr = np.frombuffer(stream.data, dtype=np.uint8).reshape(stream.frame_count, G, H, W, 3)
    planes = arr.transpose(0, 1, 4, 2, 3).reshape(stream.frame_count, G * 3, H, W)
    return [QuantizedFrame(lay, np.ascontiguousarray(p[:len(names)]), names) for p in planes]


def stream_from_bytes(data, sidecar):
    """Wrap raw bytes as a stream using the sidecar's geometry."""
    H, W, G = sidecar.atlas_h, sidecar.atlas_w, sidecar.groups
    nbytes = G * H * W * 3
    if len(data) % nbytes:
        raise TruncatedStream(f"{len(data)} bytes is not a whole number of {nbytes}-byte frames")
    stream = TripletStream(bytes(data), len(data) // nbytes, W, H, G)
    if stream.frame_count < sidecar.frame_count:
        raise TruncatedStream(f"stream holds {stream.frame_count} of {sidecar.frame_count} frames")
    return stream


def _delta(frame):
    out = frame.copy()
    out[:, 1:] -= frame[:, :-1]
    return out


def _undelta(frame):
    return np.cumsum(frame, axis=1, dtype=np.uint8)


def compress_internal(stream, level=6, workers=1):
    """Left-neighbor delta per channel, then zlib, one chunk per frame."""
    arr = stream.frames_array()

    def one(f):
        return zlib.compress(_delta(f).tobytes(), level)

    with ThreadPoolExecutor(max(1, workers)) as pool:
        chunks = list(pool.map(one, arr))
    header = PUVZ_MAGIC + struct.pack("<BIIII", PUVZ_VERSION, stream.frame_count, stream.width,
                                      stream.height, stream.groups)
    body = b"".join(struct.pack("<Q", len(c)) + c for c in chunks)
    return header + body


def decompress_internal(blob, workers=1):
    head = struct.calcsize("<BIIII")
    if len(blob) < 4 + head:
        raise TruncatedStream("compressed stream shorter than its header")
    if blob[:4] != PUVZ_MAGIC:
        raise FormatError("not a PUVZ stream")
    version, frames, W, H, G = struct.unpack_from("<BIIII", blob, 4)
    if version != PUVZ_VERSION:
        raise UnsupportedVersion(f"PUVZ version {version}")
    pos = 4 + head
    chunks = []
    for _ in range(frames):
        if pos + 8 > len(blob):
            raise TruncatedStream("compressed stream ends mid-frame")
        (n,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if pos + n > len(blob):
            raise TruncatedStream("compressed stream ends mid-frame")
        chunks.append(blob[pos:pos + n])
        pos += n
    shape = (G * H, W, 3)

    def one(c):
        try:
            raw = zlib.decompress(c)
        except zlib.error as exc:
            raise FormatError(f"corrupt frame payload: {exc}") from None
        if len(raw) != G * H * W * 3:
            raise TruncatedStream("decompressed frame has the wrong size")
        return _undelta(np.frombuffer(raw, dtype=np.uint8).reshape(shape)).tobytes()

    with ThreadPoolExecutor(max(1, workers)) as pool:
        frames_raw = list(pool.map(one, chunks))
    return TripletStream(b"".join(frames_raw), frames, W, H, G)


def find_ffmpeg():
    exe = shutil.which("ffmpeg")
    if exe:
        return exe
    try:
        import imageio_ffmpeg
    except ImportError:
        return None
    try:
        return imageio_ffmpeg.get_ffmpeg_exe()
    except RuntimeError:
        return None


def _command(template, **fields):
    ffmpeg = find_ffmpeg() if "{ffmpeg}" in template else None
    if "{ffmpeg}" in template and ffmpeg is None:
        raise EncoderUnavailable("no ffmpeg executable found on PATH or via imageio-ffmpeg")
    args = [a.format(ffmpeg=ffmpeg, **fields) for a in shlex.split(template)]
    if shutil.which(args[0]) is None and not Path(args[0]).is_file():
        raise EncoderUnavailable(f"encoder executable {args[0]!r} not found")
    return args


def encode_external(stream, sidecar, output, encoder_command=DEFAULT_ENCODER, verify=True,
                    decoder_command=DEFAULT_DECODER):
    """Pipe the stream as raw RGB24 frames into an external encoder.

    ``encoder_command`` is a template; ``{ffmpeg}``, ``{width}``, ``{height}``,
    ``{rate}`` and ``{output}`` are substituted.  With ``verify`` the file is
    decoded again and compared byte for byte.
    """
    rate = f"{sidecar.frame_rate.numerator}/{sidecar.frame_rate.denominator}"
    args = _command(encoder_command, width=stream.width, height=stream.height * stream.groups,
                    rate=rate, output=str(output))
    proc = subprocess.run(args, input=stream.data, capture_output=True)
    if proc.returncode != 0:
        raise EncoderUnavailable(f"encoder failed ({proc.returncode}): "
                                 f"{proc.stderr.decode(errors='replace').strip()}")
    if verify:
        decoded = decode_external(output, sidecar, decoder_command)
        check_lossless(stream, decoded, sidecar)
    return Path(output)


def decode_external(path, sidecar, decoder_command=DEFAULT_DECODER):
    args = _command(decoder_command, input=str(path))
    proc = subprocess.run(args, capture_output=True)
    if proc.returncode != 0:
        raise EncoderUnavailable(f"decoder failed ({proc.returncode}): "
                                 f"{proc.stderr.decode(errors='replace').strip()}")
    return stream_from_bytes(proc.stdout, sidecar)


def plane_mismatches(a, b, sidecar):
    """Count of differing bytes per plane name (padding planes as ``pad<i>``)."""
    if len(a.data) != len(b.data):
        raise LossyRoundTrip(f"length differs: {len(a.data)} vs {len(b.data)} bytes")
    names = list(sidecar.plane_names())
    names += [f"pad{i}" for i in range(a.groups * 3 - len(names))]
    x = np.frombuffer(a.data, np.uint8).reshape(a.frame_count, a.groups, a.height, a.width, 3)
    y = np.frombuffer(b.data, np.uint8).reshape(x.shape)
    diff = (x != y).sum(axis=(0, 2, 3))
    return {names[g * 3 + c]: int(diff[g, c]) for g in range(a.groups) for c in range(3)}


def check_lossless(a, b, sidecar):
    counts = plane_mismatches(a, b, sidecar)
    bad = {k: v for k, v in counts.items() if v}
    if bad:
        raise LossyRoundTrip(f"{sum(bad.values())} byte differences after round trip", bad)
    return counts
