"""Keyframe selection from per-frame optical-flow magnitude."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import SchemaError

DEFAULT_THETA = 30


def flow_magnitude_series(flows):
    """``M(t)`` for ``t = 0..T-1`` given the ``T-1`` flows between consecutive frames.

    ``M(0)`` is 0; ``M(t)`` is the spatial mean of ``|flow_{t-1 -> t}|``.
    """
    series = [0.0]
    for f in flows:
        series.append(float(f.magnitude().mean()))
    return np.asarray(series)


def local_peaks(series):
    """Strict interior local maxima."""
    m = np.asarray(series, dtype=np.float64)
    if len(m) < 3:
        return np.zeros(0, dtype=np.int64)
    inner = (m[1:-1] > m[:-2]) & (m[1:-1] > m[2:])
    return np.flatnonzero(inner) + 1


def select_peaks(series, m, theta=DEFAULT_THETA):
    """Greedy top-``(m-1)`` peaks, each at least ``theta`` frames from the others."""
    if m < 1 or theta < 1:
        raise ValueError("m and theta must be >= 1")
    values = np.asarray(series, dtype=np.float64)
    peaks = local_peaks(values)
    # descending magnitude, earlier frame first on ties
    order = peaks[np.lexsort((peaks, -values[peaks]))]
    chosen = []
    for p in order:
        if len(chosen) >= m - 1:
            break
        if all(abs(int(p) - q) >= theta for q in chosen):
            chosen.append(int(p))
    return sorted(chosen)


def select_keyframes(series, m, theta=DEFAULT_THETA):
    """Sorted keyframe indices: frame 0 plus the selected peaks."""
    if len(series) < 1:
        raise ValueError("series must contain at least one frame")
    return sorted({0, *select_peaks(series, m, theta)})


def promote_keyframes(keyframes, scores, percentile=99.0):
    """Add frames whose score is strictly above the given percentile."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        return sorted(keyframes)
    cut = np.percentile(scores, percentile)
    return sorted(set(int(k) for k in keyframes) | set(np.flatnonzero(scores > cut).tolist()))


def segment(T, keyframes):
    """Half-open ``(start, end)`` ranges starting at each keyframe."""
    ks = sorted(set(int(k) for k in keyframes))
    if not ks or ks[0] != 0:
        raise ValueError("keyframes must include frame 0")
    if ks[-1] >= T:
        raise ValueError(f"keyframe {ks[-1]} outside a {T}-frame sequence")
    return [(s, e) for s, e in zip(ks, ks[1:] + [T])]


def read_series_csv(path):
    """Read ``frame,magnitude`` rows (header optional); missing frames are 0."""
    rows = []
    with open(Path(path), newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().lower() == "frame":
                continue
            try:
                rows.append((int(rec[0]), float(rec[1])))
            except (ValueError, IndexError):
                raise SchemaError(f"{path}: bad series row {rec!r}") from None
    if not rows:
        raise SchemaError(f"{path}: empty series")
    if min(f for f, _ in rows) < 0:
        raise SchemaError(f"{path}: negative frame index")
    T = max(f for f, _ in rows) + 1
    series = np.zeros(T)
    for f, v in rows:
        series[f] = v
    return series
