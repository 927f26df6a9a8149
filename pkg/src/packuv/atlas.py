"""Packing of pyramid layers into a single 2D atlas.

Layer images are laid out equirectangular-style: ``u`` runs along the width
and ``v`` along the height, so an unrotated layer ``k`` is ``M_k`` wide and
``N_k`` tall.  Odd layers are rotated 90 degrees counter-clockwise
(``np.rot90``), which swaps the two extents.

Placement rule: layer 1 (rotated) sits in the top-left column, layer 0 to its
right; the remaining layers go into a bottom strip as tall as the tallest of them,
each at the left-most, then top-most free position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutOverflow, StrayOccupancy
from .uvmap import LayeredUVMap, PyramidSchedule


@dataclass(frozen=True)
class Placement:
    x: int
    y: int
    w: int
    h: int
    rotated: bool

    def overlaps(self, other):
        return (self.x < other.x + other.w and other.x < self.x + self.w
                and self.y < other.y + other.h and other.y < self.y + self.h)


@dataclass(frozen=True)
class AtlasLayout:
    schedule: PyramidSchedule
    atlas_w: int
    atlas_h: int
    placements: tuple

    def coverage_mask(self):
        mask = np.zeros((self.atlas_h, self.atlas_w), dtype=bool)
        for p in self.placements:
            mask[p.y:p.y + p.h, p.x:p.x + p.w] = True
        return mask


def _extent(dims, k):
    m, n = dims
    return (n, m) if k % 2 else (m, n)


def layout(schedule):
    dims = schedule.dims
    K = schedule.K
    if K == 1:
        m, n = dims[0]
        return AtlasLayout(schedule, m, n, (Placement(0, 0, m, n, False),))

    w1, h1 = _extent(dims[1], 1)
    m0, n0 = dims[0]
    atlas_w = w1 + m0
    top_h = max(h1, n0)
    placed = [Placement(w1, 0, m0, n0, False), Placement(0, 0, w1, h1, True)]
    atlas_h = top_h
    if K > 2:
        atlas_h = top_h + max(_extent(dims[k], k)[1] for k in range(2, K))
        for k in range(2, K):
            w, h = _extent(dims[k], k)
            xs = sorted({0} | {p.x + p.w for p in placed[2:]})
            ys = sorted({top_h} | {p.y + p.h for p in placed[2:]})
            spot = next((c for c in (Placement(x, y, w, h, bool(k % 2)) for x in xs for y in ys)
                         if c.y + h <= atlas_h and not any(c.overlaps(p) for p in placed)), None)
            if spot is None:
                raise LayoutOverflow(f"layer {k} ({w}x{h}) does not fit in the atlas strip")
            placed.append(spot)
        # a strip longer than the top region widens the atlas
        atlas_w = max(atlas_w, max(p.x + p.w for p in placed))
    return AtlasLayout(schedule, atlas_w, atlas_h, tuple(placed))


def efficiency(atlas_layout):
    used = sum(m * n for m, n in atlas_layout.schedule.dims)
    return used / (atlas_layout.atlas_w * atlas_layout.atlas_h)


def channel_names(color_dim):
    return (["rho", "q0", "q1", "q2", "q3", "s0", "s1", "s2", "alpha"]
            + [f"c{i}" for i in range(color_dim)] + ["origin"])


@dataclass
class AtlasFrame:
    layout: AtlasLayout
    channels: np.ndarray
    occupancy: np.ndarray
    names: tuple

    def equals(self, other):
        return (self.layout == other.layout and tuple(self.names) == tuple(other.names)
                and np.array_equal(self.occupancy, other.occupancy)
                and np.array_equal(self.channels, other.channels))


def _layer_stack(uvmap, k):
    layer = uvmap.layers[k]
    return np.concatenate([
        layer.rho[None],
        np.moveaxis(layer.q, -1, 0),
        np.moveaxis(layer.s, -1, 0),
        layer.alpha[None],
        np.moveaxis(layer.c, -1, 0),
        uvmap.origin_offsets(k)[None].astype(np.float64),
    ])


def _to_image(a, rotated):
    # [..., u, v] -> image [..., row=v, col=u], optionally turned CCW
    img = np.swapaxes(a, -1, -2)
    return np.rot90(img, 1, axes=(-2, -1)) if rotated else img


def _from_image(img, rotated):
    if rotated:
        img = np.rot90(img, -1, axes=(-2, -1))
    return np.swapaxes(img, -1, -2)


def pack(uvmap, atlas_layout):
    if uvmap.schedule != atlas_layout.schedule:
        raise ValueError("layout was built for a different schedule")
    names = tuple(channel_names(uvmap.color_dim))
    H, W = atlas_layout.atlas_h, atlas_layout.atlas_w
    channels = np.zeros((len(names), H, W))
    occupancy = np.zeros((H, W), dtype=bool)
    for k, p in enumerate(atlas_layout.placements):
        channels[:, p.y:p.y + p.h, p.x:p.x + p.w] = _to_image(_layer_stack(uvmap, k), p.rotated)
        occupancy[p.y:p.y + p.h, p.x:p.x + p.w] = _to_image(uvmap.layers[k].occupied, p.rotated)
    return AtlasFrame(atlas_layout, channels, occupancy, names)


def unpack(frame):
    lay = frame.layout
    if np.any(frame.occupancy & ~lay.coverage_mask()):
        raise StrayOccupancy("occupied atlas pixel outside every layer placement")
    color_dim = len(frame.names) - 10
    uvmap = LayeredUVMap.empty(lay.schedule, color_dim)
    for k, p in enumerate(lay.placements):
        stack = _from_image(frame.channels[:, p.y:p.y + p.h, p.x:p.x + p.w], p.rotated)
        occ = _from_image(frame.occupancy[p.y:p.y + p.h, p.x:p.x + p.w], p.rotated)
        layer = uvmap.layers[k]
        layer.occupied = occ.copy()
        layer.rho = stack[0].copy()
        layer.q = np.moveaxis(stack[1:5], 0, -1).copy()
        layer.s = np.moveaxis(stack[5:8], 0, -1).copy()
        layer.alpha = stack[8].copy()
        layer.c = np.moveaxis(stack[9:9 + color_dim], 0, -1).copy()
        uvmap.set_origin_offsets(k, np.rint(stack[-1]).astype(np.int64))
    return uvmap


def channel_previews(frame):
    """8-bit grayscale rendering of each channel, stretched over occupied pixels."""
    out = {}
    occ = frame.occupancy
    for name, plane in zip(frame.names, frame.channels):
        img = np.zeros(plane.shape, dtype=np.uint8)
        if occ.any():
            vals = plane[occ]
            lo, hi = vals.min(), vals.max()
            scale = 255.0 / (hi - lo) if hi > lo else 0.0
            img[occ] = np.clip(np.rint((vals - lo) * scale), 0, 255).astype(np.uint8)
        out[name] = img
    out["occupancy"] = occ.astype(np.uint8) * 255
    return out
