"""End-to-end glue: Gaussian sets to quantized atlases and back."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .atlas import efficiency, layout, pack, unpack
from .core import GaussianSet, as_gaussian_set
from .errors import EmptySequence, InvalidConfig
from .framecodec import Sidecar
from .quant import dequantize_frame, fit_quant_spec, quantize_frame
from .uvmap import build_layered_map, extract_gaussians, pyramid_schedule


@dataclass
class EncodedSequence:
    sidecar: Sidecar
    frames: list
    retained: list
    pruned: list
    efficiency: float


def check_origin_range(schedule):
    worst = max(ru * rv for ru, rv in map(schedule.ratios, range(schedule.K)))
    if worst > 256:
        raise InvalidConfig(f"K={schedule.K} needs {worst} origin codes per cell; at most 256 fit")


def sequence_center(gaussian_sets):
    lo = np.min([g.mu.min(axis=0) for g in gaussian_sets if len(g)], axis=0)
    hi = np.max([g.mu.max(axis=0) for g in gaussian_sets if len(g)], axis=0)
    return 0.5 * (lo + hi)


def encode_sequence(gaussian_sets, M0=1024, N0=1024, K=8, center=None, bits=None,
                    frame_rate=Fraction(30), keyframes=(0,), workers=1):
    schedule = pyramid_schedule(M0, N0, K)
    check_origin_range(schedule)
    sets = [as_gaussian_set(g) for g in gaussian_sets]
    if not sets or not any(len(g) for g in sets):
        raise EmptySequence("no Gaussians to encode")
    lay = layout(schedule)
    center = sequence_center(sets) if center is None else np.asarray(center, dtype=np.float64)

    def build(g):
        uvmap, pruned = build_layered_map(g, center, schedule)
        return pack(uvmap, lay), uvmap.occupied_count(), pruned

    with ThreadPoolExecutor(max(1, workers)) as pool:
        built = list(pool.map(build, sets))
    atlases = [b[0] for b in built]
    spec = fit_quant_spec(atlases, bits)
    with ThreadPoolExecutor(max(1, workers)) as pool:
        qframes = list(pool.map(lambda f: quantize_frame(f, spec), atlases))
    sidecar = Sidecar(
        M0=M0, N0=N0, K=K,
        scene_center=tuple(float(x) for x in center),
        channel_map=list(spec.channels),
        frame_count=len(qframes),
        atlas_w=lay.atlas_w, atlas_h=lay.atlas_h,
        frame_rate=Fraction(frame_rate),
        keyframe_indices=list(keyframes),
    )
    return EncodedSequence(sidecar, qframes, [b[1] for b in built], [b[2] for b in built],
                           efficiency(lay))


def decode_frame(qframe, sidecar):
    """Dequantize, unpack and extract; quaternions are renormalized."""
    uvmap = unpack(dequantize_frame(qframe, sidecar.spec))
    g = extract_gaussians(uvmap, sidecar.scene_center)
    norm = np.linalg.norm(g.q, axis=1, keepdims=True)
    q = np.divide(g.q, norm, out=np.zeros_like(g.q), where=norm > 0)
    return GaussianSet(g.mu, g.s, q, g.alpha, g.c)


def decode_sequence(qframes, sidecar, workers=1):
    with ThreadPoolExecutor(max(1, workers)) as pool:
        return list(pool.map(lambda f: decode_frame(f, sidecar), qframes))
