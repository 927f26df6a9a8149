"""Uniform quantization with global per-channel ranges.

Attributes are 8-bit except the ray depth ``rho``, which gets 16 bits and is
stored as a high/low byte pair.  Two channels have fixed ranges: occupancy
(``[0, 1]``, so occupied pixels code to 255) and the base-pixel ``origin``
offset (``[0, 255]``, stored verbatim).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atlas import AtlasFrame
from .errors import EmptySequence, InvalidConfig, OutOfRange, SpecMismatch

CLAMP_TOL = 1e-9
FIXED_RANGES = {"occupancy": (0.0, 1.0), "origin": (0.0, 255.0)}


@dataclass(frozen=True)
class QuantChannel:
    name: str
    bits: int
    min: float
    max: float

    def plane_names(self):
        if self.bits > 8:
            return [f"{self.name}_hi", f"{self.name}_lo"]
        return [self.name]


@dataclass(frozen=True)
class QuantSpec:
    channels: tuple

    @property
    def names(self):
        return tuple(ch.name for ch in self.channels)

    def plane_names(self):
        return [p for ch in self.channels for p in ch.plane_names()]

    def __getitem__(self, name):
        for ch in self.channels:
            if ch.name == name:
                return ch
        raise KeyError(name)


def default_bits(name):
    return 16 if name == "rho" else 8


def fit_quant_spec(frames, bits=None):
    """Exact extrema over occupied pixels of every frame in the sequence.

    ``bits`` optionally overrides depths per channel name (1..16); fixed-range
    channels always use 8 bits.
    """
    bits = dict(bits or {})
    for name, b in bits.items():
        if not 1 <= int(b) <= 16:
            raise InvalidConfig(f"bit depth for {name} must be in 1..16, got {b}")
    frames = list(frames)
    if not frames:
        raise EmptySequence("no frames to fit a quantization spec on")
    names = frames[0].names
    lo = np.full(len(names), np.inf)
    hi = np.full(len(names), -np.inf)
    for f in frames:
        if tuple(f.names) != tuple(names):
            raise SpecMismatch("frames carry different channel sets")
        if f.occupancy.any():
            vals = f.channels[:, f.occupancy]
            lo = np.minimum(lo, vals.min(axis=1))
            hi = np.maximum(hi, vals.max(axis=1))
    if not np.all(np.isfinite(lo)):
        raise EmptySequence("no occupied pixel anywhere in the sequence")
    channels = [QuantChannel("occupancy", 8, *FIXED_RANGES["occupancy"])]
    for i, name in enumerate(names):
        a, b = FIXED_RANGES.get(name, (float(lo[i]), float(hi[i])))
        depth = 8 if name in FIXED_RANGES else int(bits.get(name, default_bits(name)))
        channels.append(QuantChannel(name, depth, a, b))
    return QuantSpec(tuple(channels))


def quantize_array(x, lo, hi, bits):
    x = np.asarray(x, dtype=np.float64)
    levels = (1 << bits) - 1
    if hi == lo:
        return np.zeros(x.shape, dtype=np.int64)
    if x.size and (x.min() < lo - CLAMP_TOL or x.max() > hi + CLAMP_TOL):
        raise OutOfRange(f"values outside [{lo!r}, {hi!r}]")
    t = (np.clip(x, lo, hi) - lo) / (hi - lo) * levels
    # round half away from zero; t is non-negative
    return np.minimum(np.floor(t + 0.5), levels).astype(np.int64)


def quantize(x, lo, hi, bits):
    return int(quantize_array(x, lo, hi, bits))


def dequantize_array(code, lo, hi, bits):
    levels = (1 << bits) - 1
    return lo + np.asarray(code, dtype=np.float64) / levels * (hi - lo)


def dequantize(code, lo, hi, bits):
    return float(dequantize_array(code, lo, hi, bits))


def split16(code16):
    code16 = np.asarray(code16)
    return code16 >> 8, code16 & 0xFF


def join16(hi, lo):
    return (np.asarray(hi, dtype=np.int64) << 8) | np.asarray(lo, dtype=np.int64)


@dataclass
class QuantizedFrame:
    layout: object
    planes: np.ndarray
    plane_names: tuple

    def equals(self, other):
        return (tuple(self.plane_names) == tuple(other.plane_names)
                and np.array_equal(self.planes, other.planes))


def quantize_frame(frame, spec):
    if tuple(frame.names) != spec.names[1:]:
        raise SpecMismatch(f"frame channels {frame.names} do not match spec {spec.names[1:]}")
    occ = frame.occupancy
    planes = []
    for ch in spec.channels:
        if ch.name == "occupancy":
            codes = np.where(occ, 255, 0)
        else:
            plane = frame.channels[frame.names.index(ch.name)]
            codes = np.zeros(occ.shape, dtype=np.int64)
            codes[occ] = quantize_array(plane[occ], ch.min, ch.max, ch.bits)
        if ch.bits > 8:
            planes.extend(split16(codes))
        else:
            planes.append(codes)
    return QuantizedFrame(frame.layout, np.stack(planes).astype(np.uint8), tuple(spec.plane_names()))


def dequantize_frame(qf, spec):
    if tuple(qf.plane_names) != tuple(spec.plane_names()):
        raise SpecMismatch("quantized planes do not match the spec's channel map")
    occ = qf.planes[0] > 127
    channels = []
    i = 1
    for ch in spec.channels[1:]:
        if ch.bits > 8:
            codes = join16(qf.planes[i], qf.planes[i + 1])
            i += 2
        else:
            codes = qf.planes[i].astype(np.int64)
            i += 1
        plane = np.zeros(occ.shape)
        plane[occ] = dequantize_array(codes[occ], ch.min, ch.max, ch.bits)
        channels.append(plane)
    return AtlasFrame(qf.layout, np.stack(channels), occ, spec.names[1:])
