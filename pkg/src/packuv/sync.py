"""Timecode indexing and multi-camera frame synchronization.

Each camera's ``(timecode, frame_index)`` pairs live in an AVL tree; frames
of a reference camera are matched to the nearest timecode of every other
camera, and matches farther than a threshold are reported as absent.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateTimecode, FormatError, SchemaError, UnknownReference, UnsupportedVersion

TREE_MAGIC = b"PUVT"
TREE_VERSION = 1
_HEADER = struct.Struct("<4sBQ")
_NODE = struct.Struct("<qiB")


class Node:
    __slots__ = ("timecode", "frame_index", "left", "right", "height")

    def __init__(self, timecode, frame_index):
        self.timecode = timecode
        self.frame_index = frame_index
        self.left = None
        self.right = None
        self.height = 1


def _h(node):
    return node.height if node else 0


def _fix(node):
    node.height = 1 + max(_h(node.left), _h(node.right))


def _rotate_right(y):
    x = y.left
    y.left = x.right
    x.right = y
    _fix(y)
    _fix(x)
    return x


def _rotate_left(x):
    y = x.right
    x.right = y.left
    y.left = x
    _fix(x)
    _fix(y)
    return y


def _insert(node, timecode, frame_index):
    if node is None:
        return Node(timecode, frame_index)
    if timecode < node.timecode:
        node.left = _insert(node.left, timecode, frame_index)
    elif timecode > node.timecode:
        node.right = _insert(node.right, timecode, frame_index)
    else:
        raise DuplicateTimecode(f"timecode {timecode} already indexed")
    _fix(node)
    balance = _h(node.left) - _h(node.right)
    if balance > 1:
        if timecode > node.left.timecode:
            node.left = _rotate_left(node.left)
        return _rotate_right(node)
    if balance < -1:
        if timecode < node.right.timecode:
            node.right = _rotate_right(node.right)
        return _rotate_left(node)
    return node


class TimecodeTree:
    def __init__(self):
        self.root = None
        self.size = 0

    def __len__(self):
        return self.size

    @property
    def height(self):
        return _h(self.root)

    def insert(self, timecode, frame_index):
        self.root = _insert(self.root, int(timecode), int(frame_index))
        self.size += 1

    def items(self):
        """``(timecode, frame_index)`` pairs in timecode order."""
        out, stack, node = [], [], self.root
        while stack or node:
            while node:
                stack.append(node)
                node = node.left
            node = stack.pop()
            out.append((node.timecode, node.frame_index))
            node = node.right
        return out

    def preorder(self):
        out, stack = [], [self.root] if self.root else []
        while stack:
            node = stack.pop()
            out.append(node)
            if node.right:
                stack.append(node.right)
            if node.left:
                stack.append(node.left)
        return out

    def find_closest(self, target, threshold):
        """Nearest ``(timecode, frame_index)`` to ``target``, or ``None``.

        The descent path contains both the floor and the ceiling of
        ``target``, so tracking the best node along it yields the true
        nearest entry.  Equidistant candidates resolve to the smaller
        timecode.  ``None`` when the best distance exceeds ``threshold``.
        """
        best = None
        best_d = None
        node = self.root
        while node is not None:
            d = abs(node.timecode - target)
            if best_d is None or d < best_d or (d == best_d and node.timecode < best.timecode):
                best, best_d = node, d
            if d == 0:
                break
            node = node.left if target < node.timecode else node.right
        if best is None or best_d > threshold:
            return None
        return best.timecode, best.frame_index

    def check_invariants(self):
        """Raise ``AssertionError`` if order, balance or stored heights are off."""
        def walk(node, lo, hi):
            if node is None:
                return 0
            assert (lo is None or node.timecode > lo) and (hi is None or node.timecode < hi)
            hl = walk(node.left, lo, node.timecode)
            hr = walk(node.right, node.timecode, hi)
            assert abs(hl - hr) <= 1, "AVL balance violated"
            assert node.height == 1 + max(hl, hr), "stale height"
            return node.height
        walk(self.root, None, None)

    def structure(self):
        """Nested tuples describing the shape, for structural comparison."""
        def rec(node):
            if node is None:
                return None
            return (node.timecode, node.frame_index, node.height, rec(node.left), rec(node.right))
        return rec(self.root)


def build_tree(entries):
    tree = TimecodeTree()
    for timecode, frame_index in entries:
        tree.insert(timecode, frame_index)
    return tree


def save_tree(tree, path=None):
    """Binary form: header (magic, version, count) and preorder nodes.

    Returns the bytes; also writes them to ``path`` when given.
    """
    nodes = tree.preorder()
    buf = bytearray(_HEADER.pack(TREE_MAGIC, TREE_VERSION, len(nodes)))
    for n in nodes:
        buf += _NODE.pack(n.timecode, n.frame_index, n.height)
    data = bytes(buf)
    if path is not None:
        Path(path).write_bytes(data)
    return data


def load_tree(source):
    data = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("tree file shorter than its header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != TREE_MAGIC:
        raise FormatError("bad tree magic")
    if version != TREE_VERSION:
        raise UnsupportedVersion(f"tree format version {version}")
    if len(data) != _HEADER.size + count * _NODE.size:
        raise FormatError(f"tree file size does not match its {count} nodes")
    recs = [_NODE.unpack_from(data, _HEADER.size + i * _NODE.size) for i in range(count)]
    pos = 0

    def rebuild(lo, hi, depth):
        nonlocal pos
        if pos >= count:
            return None
        tc = recs[pos][0]
        if (lo is not None and tc <= lo) or (hi is not None and tc >= hi):
            return None
        if depth > 255:
            raise FormatError("tree deeper than its height field allows")
        tc, fi, h = recs[pos]
        pos += 1
        node = Node(tc, fi)
        node.left = rebuild(lo, tc, depth + 1)
        node.right = rebuild(tc, hi, depth + 1)
        _fix(node)
        if node.height != h:
            raise FormatError(f"stored height {h} disagrees with shape at timecode {tc}")
        return node

    tree = TimecodeTree()
    tree.root = rebuild(None, None, 0)
    if pos != count:
        raise FormatError("node sequence is not a valid preorder")
    tree.size = count
    try:
        tree.check_invariants()
    except AssertionError as exc:
        raise FormatError(f"stored tree is not a valid AVL tree: {exc}") from None
    return tree


def parse_timecode(text, fps=None):
    """Integer ticks, or ``HH:MM:SS:FF`` (``;`` allowed) converted with ``fps``."""
    text = text.strip()
    if ":" not in text and ";" not in text:
        return int(text)
    parts = text.replace(";", ":").split(":")
    if len(parts) != 4 or fps is None:
        raise SchemaError(f"timecode {text!r} needs HH:MM:SS:FF form and a frame rate")
    h, m, s, f = (int(p) for p in parts)
    return ((h * 60 + m) * 60 + s) * int(fps) + f


def read_camera_file(path, fps=None):
    """Entries from a camera information file: ``timecode frame_index`` per line."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        try:
            entries.append((parse_timecode(fields[0], fps), int(fields[1])))
        except (ValueError, IndexError):
            raise SchemaError(f"{path}:{lineno}: expected 'timecode frame_index'") from None
    return entries


@dataclass
class SyncTable:
    reference: str
    cameras: list
    timecodes: list
    columns: dict

    def row(self, i):
        return {cam: self.columns[cam][i] for cam in self.cameras}

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["timecode"] + list(self.cameras))
        for i, tc in enumerate(self.timecodes):
            w.writerow([tc] + ["" if self.columns[c][i] is None else self.columns[c][i]
                               for c in self.cameras])
        return out.getvalue()

    def to_json(self):
        return json.dumps({"reference": self.reference, "cameras": list(self.cameras),
                           "timecodes": self.timecodes, "columns": self.columns}, indent=2)


def synchronize(reference, trees, threshold):
    """Match every reference frame to the closest frame of each camera."""
    if reference not in trees:
        raise UnknownReference(f"unknown reference camera {reference!r}")
    ref_items = trees[reference].items()
    timecodes = [tc for tc, _ in ref_items]
    columns = {}
    for cam, tree in trees.items():
        col = []
        for tc in timecodes:
            hit = tree.find_closest(tc, threshold)
            col.append(None if hit is None else hit[1])
        columns[cam] = col
    return SyncTable(reference, list(trees), timecodes, columns)
