"""Multi-layer pyramid UV maps.

A base pixel ``(u0, v0)`` on the ``M0 x N0`` grid owns a chain of cells, one
per layer, at ``(u0 * M_k // M0, v0 * N_k // N0)``.  Each base pixel offers
its Gaussians in descending opacity; at every layer, base pixels that share a
coarse cell compete for it and the highest opacity wins.  Losers retry at the
next layer, and whatever is left after the last layer is pruned.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import GaussianSet, as_gaussian_set, ray_direction, spherical_arrays, uv_project_arrays
from .errors import InvalidConfig


def _is_pow2(x):
    return x >= 1 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class PyramidSchedule:
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple((int(m), int(n)) for m, n in self.dims))
        if not self.dims:
            raise InvalidConfig("a schedule needs at least one layer")
        M0, N0 = self.dims[0]
        for m, n in self.dims:
            if m < 1 or n < 1 or M0 % m or N0 % n:
                raise InvalidConfig(f"layer dims {(m, n)} do not divide the base grid {(M0, N0)}")

    @property
    def K(self):
        return len(self.dims)

    @property
    def base(self):
        return self.dims[0]

    def ratios(self, k):
        """Base pixels per layer-``k`` cell along ``u`` and ``v``."""
        M0, N0 = self.dims[0]
        m, n = self.dims[k]
        return M0 // m, N0 // n


def pyramid_schedule(M0, N0, K):
    """Alternating halving: odd layers halve ``N``, even layers halve ``M``."""
    if K < 1:
        raise InvalidConfig("K must be >= 1")
    if not (_is_pow2(M0) and _is_pow2(N0)):
        raise InvalidConfig(f"M0 and N0 must be powers of two, got {M0}x{N0}")
    dims = [(M0, N0)]
    for k in range(1, K):
        m, n = dims[-1]
        m, n = (m, n // 2) if k % 2 else (m // 2, n)
        if m < 1 or n < 1:
            raise InvalidConfig(f"layer {k} of a {M0}x{N0} pyramid would have zero size")
        dims.append((m, n))
    return PyramidSchedule(tuple(dims))


@dataclass
class UVLayer:
    """Cell arrays for one layer, all indexed ``[u, v]``.

    Empty cells hold zeros everywhere so that maps compare by value.
    """

    occupied: np.ndarray
    rho: np.ndarray
    q: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    c: np.ndarray
    base_u: np.ndarray
    base_v: np.ndarray

    @classmethod
    def empty(cls, m, n, color_dim):
        return cls(
            np.zeros((m, n), dtype=bool),
            np.zeros((m, n)),
            np.zeros((m, n, 4)),
            np.zeros((m, n, 3)),
            np.zeros((m, n)),
            np.zeros((m, n, color_dim)),
            np.zeros((m, n), dtype=np.int64),
            np.zeros((m, n), dtype=np.int64),
        )

    def equals(self, other):
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("occupied", "rho", "q", "s", "alpha", "c", "base_u", "base_v")
        )


@dataclass
class LayeredUVMap:
    schedule: PyramidSchedule
    layers: list

    @classmethod
    def empty(cls, schedule, color_dim=3):
        return cls(schedule, [UVLayer.empty(m, n, color_dim) for m, n in schedule.dims])

    @property
    def color_dim(self):
        return self.layers[0].c.shape[-1]

    def occupied_count(self):
        return int(sum(layer.occupied.sum() for layer in self.layers))

    def origin_offsets(self, k):
        """Position of each cell's base pixel inside its layer-``k`` block."""
        layer = self.layers[k]
        ru, rv = self.schedule.ratios(k)
        u = np.arange(layer.occupied.shape[0])[:, None]
        v = np.arange(layer.occupied.shape[1])[None, :]
        off = (layer.base_u - u * ru) * rv + (layer.base_v - v * rv)
        return np.where(layer.occupied, off, 0)

    def set_origin_offsets(self, k, offsets):
        layer = self.layers[k]
        ru, rv = self.schedule.ratios(k)
        offsets = np.asarray(offsets, dtype=np.int64)
        u = np.arange(layer.occupied.shape[0])[:, None]
        v = np.arange(layer.occupied.shape[1])[None, :]
        layer.base_u = np.where(layer.occupied, u * ru + offsets // rv, 0)
        layer.base_v = np.where(layer.occupied, v * rv + offsets % rv, 0)

    def __eq__(self, other):
        if not isinstance(other, LayeredUVMap) or self.schedule != other.schedule:
            return NotImplemented if not isinstance(other, LayeredUVMap) else False
        return all(a.equals(b) for a, b in zip(self.layers, other.layers))


class PruneReason(enum.IntEnum):
    ORIGIN_DEGENERATE = 1
    ZERO_OPACITY = 2
    MAX_K = 3


@dataclass
class PruneReport:
    indices: np.ndarray
    reasons: np.ndarray

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        for i, r in zip(self.indices, self.reasons):
            yield int(i), PruneReason(int(r))

    def count(self, reason):
        return int(np.sum(self.reasons == reason))


def _cascade(cand, u0, v0, alpha, schedule):
    """Run the per-layer competition for one independent group of candidates.

    ``cand`` holds Gaussian indices sorted by (base pixel, -alpha, index).
    Returns ``(placements, pruned)`` where ``placements`` is a list of
    ``(k, gaussian_indices)``.
    """
    if len(cand) == 0:
        return [], cand
    M0, N0 = schedule.base
    pix = u0[cand] * N0 + v0[cand]
    starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
    ends = np.r_[starts[1:], len(cand)]
    pu = u0[cand[starts]]
    pv = v0[cand[starts]]
    ptr = starts.copy()
    placements = []
    for k in range(schedule.K):
        act = np.flatnonzero(ptr < ends)
        if len(act) == 0:
            break
        g = cand[ptr[act]]
        ru, rv = schedule.ratios(k)
        n_k = schedule.dims[k][1]
        cell = (pu[act] // ru) * n_k + pv[act] // rv
        order = np.lexsort((pv[act], pu[act], -alpha[g], cell))
        cs = cell[order]
        first = np.r_[True, cs[1:] != cs[:-1]]
        win = order[first]
        placements.append((k, g[win]))
        ptr[act[win]] += 1
    counts = ends - starts
    pruned = cand[np.arange(len(cand)) >= np.repeat(ptr, counts)]
    return placements, pruned


def build_layered_map(gaussians, center, schedule, workers=1):
    """Assign Gaussians to layered UV cells.

    Returns ``(LayeredUVMap, PruneReport)``.  The result does not depend on
    ``workers``: base pixels are split into groups that share no cell at any
    layer and each group is processed independently.
    """
    g = as_gaussian_set(gaussians)
    n = len(g)
    M0, N0 = schedule.base
    rho, theta, phi = spherical_arrays(g.mu, center)
    reason = np.zeros(n, dtype=np.int8)
    reason[g.alpha <= 0] = PruneReason.ZERO_OPACITY
    reason[rho == 0] = PruneReason.ORIGIN_DEGENERATE
    u0, v0 = uv_project_arrays(theta, phi, M0, N0)

    valid = np.flatnonzero(reason == 0)
    pix = u0[valid] * N0 + v0[valid]
    cand = valid[np.lexsort((valid, -g.alpha[valid], pix))]

    ru, rv = schedule.ratios(schedule.K - 1)
    n_last = schedule.dims[-1][1]
    group = (u0[cand] // ru) * n_last + v0[cand] // rv
    workers = max(1, int(workers))
    nested = all(ru % a == 0 and rv % b == 0 for a, b in map(schedule.ratios, range(schedule.K)))
    if not nested:
        workers = 1
    chunks = [cand[group % workers == w] for w in range(workers)]
    if workers == 1:
        results = [_cascade(chunks[0], u0, v0, g.alpha, schedule)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda c: _cascade(c, u0, v0, g.alpha, schedule), chunks))

    uvmap = LayeredUVMap.empty(schedule, g.color_dim)
    for placements, _ in results:
        for k, idx in placements:
            ru_k, rv_k = schedule.ratios(k)
            cu, cv = u0[idx] // ru_k, v0[idx] // rv_k
            layer = uvmap.layers[k]
            layer.occupied[cu, cv] = True
            layer.rho[cu, cv] = rho[idx]
            layer.q[cu, cv] = g.q[idx]
            layer.s[cu, cv] = g.s[idx]
            layer.alpha[cu, cv] = g.alpha[idx]
            layer.c[cu, cv] = g.c[idx]
            layer.base_u[cu, cv] = u0[idx]
            layer.base_v[cu, cv] = v0[idx]

    reason[np.concatenate([r[1] for r in results])] = PruneReason.MAX_K
    pruned = np.flatnonzero(reason)
    return uvmap, PruneReport(pruned, reason[pruned])


def extract_gaussians(uvmap, center):
    """One Gaussian per occupied cell, layer by layer in ``(u, v)`` order."""
    M0, N0 = uvmap.schedule.base
    parts = []
    for layer in uvmap.layers:
        iu, iv = np.nonzero(layer.occupied)
        bu, bv = layer.base_u[iu, iv], layer.base_v[iu, iv]
        rho = layer.rho[iu, iv]
        mu = np.asarray(center, dtype=np.float64) + rho[:, None] * ray_direction(bu, bv, M0, N0)
        parts.append(GaussianSet(mu, layer.s[iu, iv], layer.q[iu, iv], layer.alpha[iu, iv],
                                 layer.c[iu, iv]))
    return GaussianSet(
        np.concatenate([p.mu for p in parts]),
        np.concatenate([p.s for p in parts]),
        np.concatenate([p.q for p in parts]),
        np.concatenate([p.alpha for p in parts]),
        np.concatenate([p.c for p in parts]),
    )


def gradient_prune(grad_norms, tau):
    """Keep mask: Gaussians whose gradient norm is at least ``tau`` survive."""
    if tau <= 0:
        raise InvalidConfig("tau must be positive")
    return np.asarray(grad_norms, dtype=np.float64) >= tau
