import numpy as np
import pytest

from packuv.errors import DuplicateTimecode, FormatError, SchemaError, UnknownReference, UnsupportedVersion
from packuv.sync import (
    TimecodeTree,
    build_tree,
    load_tree,
    parse_timecode,
    read_camera_file,
    save_tree,
    synchronize,
)

from oracles import nearest_timecode


def test_ascending_insert_balances():
    t = build_tree((i, i) for i in range(1, 8))
    assert t.height == 3
    assert t.root.timecode == 4
    t.check_invariants()


def test_empty_and_duplicates():
    t = build_tree([])
    assert len(t) == 0 and t.height == 0 and t.find_closest(5, 100) is None
    with pytest.raises(DuplicateTimecode):
        build_tree([(1, 0), (1, 1)])


def test_find_closest_examples():
    t = build_tree([(100, 0), (200, 1), (300, 2)])
    assert t.find_closest(210, 15) == (200, 1)
    assert t.find_closest(250, 15) is None
    assert t.find_closest(300, 0) == (300, 2)
    assert t.find_closest(250, 50) == (200, 1)  # tie goes to the smaller timecode
    assert t.find_closest(215, 15) == (200, 1)  # threshold is inclusive


def test_find_closest_oracle(rng):
    for _ in range(300):
        n = int(rng.integers(0, 40))
        tcs = rng.choice(1000, size=n, replace=False)
        entries = [(int(tc), i) for i, tc in enumerate(tcs)]
        t = build_tree(entries)
        for _ in range(10):
            q = int(rng.integers(-50, 1050))
            th = int(rng.integers(0, 200))
            assert t.find_closest(q, th) == nearest_timecode(entries, q, th)


def test_invariants_after_each_insert(rng):
    t = TimecodeTree()
    for i, tc in enumerate(rng.permutation(2000)[:500]):
        t.insert(int(tc), i)
        t.check_invariants()
        assert t.height <= 1.4405 * np.log2(len(t) + 2) - 0.3277
    assert [tc for tc, _ in t.items()] == sorted(tc for tc, _ in t.items())


def test_save_load(rng, tmp_path):
    assert len(save_tree(TimecodeTree())) == 13
    t = build_tree((int(tc), i) for i, tc in enumerate(rng.choice(10 ** 9, 300, replace=False)))
    data = save_tree(t, tmp_path / "t.bin")
    assert len(data) == 13 + 300 * 13
    back = load_tree(tmp_path / "t.bin")
    assert back.structure() == t.structure() and len(back) == 300
    assert load_tree(save_tree(TimecodeTree())).root is None


def test_load_errors():
    data = bytearray(save_tree(build_tree([(1, 0), (2, 1)])))
    with pytest.raises(FormatError):
        load_tree(b"XXXX" + bytes(data[4:]))
    with pytest.raises(FormatError):
        load_tree(bytes(data[:-1]))
    bumped = bytearray(data)
    bumped[4] = 9
    with pytest.raises(UnsupportedVersion):
        load_tree(bytes(bumped))
    wrong_height = bytearray(data)
    wrong_height[13 + 12] = 5
    with pytest.raises(FormatError):
        load_tree(bytes(wrong_height))


def test_negative_timecodes_roundtrip():
    t = build_tree([(-5, 0), (7, 1), (-100, 2)])
    assert load_tree(save_tree(t)).structure() == t.structure()


def test_parse_timecode():
    assert parse_timecode("1234") == 1234
    assert parse_timecode("00:00:01:05", fps=30) == 35
    assert parse_timecode("01:00:00;00", fps=25) == 90000
    with pytest.raises(SchemaError):
        parse_timecode("00:01:05")


def test_read_camera_file(tmp_path):
    p = tmp_path / "cam.txt"
    p.write_text("# timecode frame\n100 0\n\n200,1\n")
    assert read_camera_file(p) == [(100, 0), (200, 1)]
    p.write_text("100\n")
    with pytest.raises(SchemaError):
        read_camera_file(p)


def test_synchronize():
    ref = build_tree([(100, 0), (200, 1), (300, 2)])
    same = build_tree([(100, 5), (200, 6), (300, 7)])
    near = build_tree([(104, 0), (196, 1), (305, 2)])
    far = build_tree([(1000, 0)])
    table = synchronize("a", {"a": ref, "b": same, "c": near, "d": far}, threshold=10)
    assert table.timecodes == [100, 200, 300]
    assert table.columns["a"] == [0, 1, 2]
    assert table.columns["b"] == [5, 6, 7]
    assert table.columns["c"] == [0, 1, 2]
    assert table.columns["d"] == [None, None, None]
    assert table.row(1) == {"a": 1, "b": 6, "c": 1, "d": None}
    csv_text = table.to_csv()
    assert csv_text.splitlines()[0] == "timecode,a,b,c,d"
    assert csv_text.splitlines()[1] == "100,0,5,0,"
    with pytest.raises(UnknownReference):
        synchronize("zz", {"a": ref}, 10)


def test_synchronize_column_order_invariant():
    trees = {"a": build_tree([(10, 0), (20, 1)]), "b": build_tree([(12, 0), (19, 1)])}
    t1 = synchronize("a", trees, 5)
    t2 = synchronize("a", dict(reversed(list(trees.items()))), 5)
    assert t1.columns == t2.columns
