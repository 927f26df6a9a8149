"""Flow-driven dynamic/static labeling of Gaussians.

A Gaussian is dynamic for a camera when some motion-mask pixel lies inside
its projected 3-sigma ellipse (Mahalanobis ``d^2 <= 9``); labels are OR-ed
over cameras.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import as_gaussian_set, covariance3d, project_covariances
from .errors import DimensionMismatch, FormatError

FLO_MAGIC = 202021.25
DEFAULT_TAU = 1.0
DEFAULT_DILATE = 3
DEFAULT_RMAX = 64


@dataclass
class FlowField:
    """Per-pixel displacement, ``vectors[y, x] = (dx, dy)`` in pixels."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise DimensionMismatch(f"flow must be (H, W, 2), got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("flow contains non-finite values")

    @property
    def height(self):
        return self.vectors.shape[0]

    @property
    def width(self):
        return self.vectors.shape[1]

    def magnitude(self):
        return np.hypot(self.vectors[..., 0], self.vectors[..., 1])


def read_flo(path):
    """Read a Middlebury ``.flo`` file (magic, width, height, float32 u/v pairs)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: too short for a flow header")
    magic = np.frombuffer(raw, "<f4", 1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad flow magic")
    w, h = np.frombuffer(raw, "<i4", 2, offset=4)
    n = int(w) * int(h) * 2
    if len(raw) < 12 + 4 * n:
        raise FormatError(f"{path}: truncated flow data")
    data = np.frombuffer(raw, "<f4", n, offset=12).reshape(int(h), int(w), 2)
    return FlowField(data)


def write_flo(path, flow):
    with open(path, "wb") as fh:
        fh.write(np.float32(FLO_MAGIC).astype("<f4").tobytes())
        fh.write(np.array([flow.width, flow.height], dtype="<i4").tobytes())
        fh.write(flow.vectors.astype("<f4").tobytes())


def motion_mask(flow, tau=DEFAULT_TAU, r=DEFAULT_DILATE):
    """Threshold ``|flow| > tau`` then dilate with a ``(2r+1)``-square."""
    bits = flow.magnitude() > tau
    if r > 0 and bits.any():
        bits = ndimage.binary_dilation(bits, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool))
    return bits


def _integral(mask):
    sat = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = mask.cumsum(0).cumsum(1)
    return sat


def _camera_labels(sigma3d, mu, cam, mask, r_max, candidates, workers):
    pr = project_covariances(sigma3d[candidates], mu[candidates], cam)
    H, W = mask.shape
    ok = np.flatnonzero(pr.valid)
    if len(ok) == 0:
        return np.zeros(0, dtype=np.int64)
    S = pr.sigma2d[ok]
    a, b, c = S[:, 0, 0], S[:, 0, 1], S[:, 1, 1]
    det = pr.det[ok]
    tr = a + c
    lam = (tr + np.sqrt(np.maximum(0.0, tr * tr - 4 * det))) / 2
    r = np.minimum(r_max, np.ceil(3 * np.sqrt(lam)))
    m = pr.mean_px[ok]
    x0 = np.maximum(np.ceil(m[:, 0] - r), 0).astype(np.int64)
    x1 = np.minimum(np.floor(m[:, 0] + r), W - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(m[:, 1] - r), 0).astype(np.int64)
    y1 = np.minimum(np.floor(m[:, 1] + r), H - 1).astype(np.int64)
    inside = (x0 <= x1) & (y0 <= y1)
    sat = _integral(mask)
    hits = np.zeros(len(ok), dtype=np.int64)
    x0c, x1c = np.clip(x0, 0, W - 1), np.clip(x1, 0, W - 1)
    y0c, y1c = np.clip(y0, 0, H - 1), np.clip(y1, 0, H - 1)
    hits[inside] = (sat[y1c + 1, x1c + 1] - sat[y0c, x1c + 1] - sat[y1c + 1, x0c] + sat[y0c, x0c])[inside]
    todo = np.flatnonzero(hits > 0)

    def scan(j):
        ys, xs = np.nonzero(mask[y0[j]:y1[j] + 1, x0[j]:x1[j] + 1])
        dx = xs + x0[j] - m[j, 0]
        dy = ys + y0[j] - m[j, 1]
        d2 = (c[j] * dx * dx - 2 * b[j] * dx * dy + a[j] * dy * dy) / det[j]
        return bool(np.any(d2 <= 9.0))

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(workers) as pool:
            flags = list(pool.map(scan, todo, chunksize=max(1, len(todo) // (4 * workers))))
    else:
        flags = [scan(j) for j in todo]
    return candidates[ok[todo[np.asarray(flags, dtype=bool)]]] if len(todo) else np.zeros(0, np.int64)


def label_dynamic(gaussians, cameras, masks, r_max=DEFAULT_RMAX, workers=1):
    """Per-Gaussian dynamic flags, OR-aggregated over cameras.

    Invalid projections (behind the camera, ``det <= 1e-7``) count as static.
    """
    g = as_gaussian_set(gaussians)
    if len(masks) != len(cameras):
        raise DimensionMismatch(f"{len(cameras)} cameras but {len(masks)} masks")
    masks = [np.asarray(mk, dtype=bool) for mk in masks]
    for cam, mk in zip(cameras, masks):
        if mk.shape != (cam.height, cam.width):
            raise DimensionMismatch(f"mask {mk.shape} does not match camera "
                                    f"{(cam.height, cam.width)}")
    dynamic = np.zeros(len(g), dtype=bool)
    if len(g) == 0:
        return dynamic
    sigma3d = covariance3d(g.s, g.q)
    for cam, mk in zip(cameras, masks):
        if not mk.any():
            continue
        candidates = np.flatnonzero(~dynamic)
        if len(candidates) == 0:
            break
        dynamic[_camera_labels(sigma3d, g.mu, cam, mk, r_max, candidates, max(1, workers))] = True
    return dynamic


def sampling_radius(sigma2d, r_max=DEFAULT_RMAX):
    a, b, c = sigma2d[0, 0], sigma2d[0, 1], sigma2d[1, 1]
    det = a * c - b * b
    tr = a + c
    lam = (tr + math.sqrt(max(0.0, tr * tr - 4 * det))) / 2
    return min(r_max, math.ceil(3 * math.sqrt(lam)))


def freeze_gradients(grads, labels):
    """Zero the gradients of static Gaussians (first axis indexes Gaussians)."""
    labels = np.asarray(labels, dtype=bool)
    if isinstance(grads, dict):
        return {k: freeze_gradients(v, labels) for k, v in grads.items()}
    grads = np.asarray(grads)
    if len(grads) != len(labels):
        raise DimensionMismatch(f"{len(grads)} gradients for {len(labels)} labels")
    return grads * labels.reshape((-1,) + (1,) * (grads.ndim - 1))


def inherit_labels(parent_labels, children):
    """Labels for densified children given each child's parent index."""
    parent_labels = np.asarray(parent_labels, dtype=bool)
    return parent_labels[np.asarray(children, dtype=np.int64)]


def write_labels(path, labels):
    """One bit per Gaussian: 8-byte little-endian count, then packed bits."""
    labels = np.asarray(labels, dtype=bool)
    with open(path, "wb") as fh:
        fh.write(np.uint64(len(labels)).astype("<u8").tobytes())
        fh.write(np.packbits(labels).tobytes())


def read_labels(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: too short for a label file")
    n = int(np.frombuffer(raw, "<u8", 1)[0])
    bits = np.unpackbits(np.frombuffer(raw, np.uint8, offset=8))
    if len(bits) < n:
        raise FormatError(f"{path}: truncated label bits")
    return bits[:n].astype(bool)
