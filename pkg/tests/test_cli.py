import json

import numpy as np
import pytest

from packuv import framecodec
from packuv.cli import main
from packuv.core import GaussianSet
from packuv.motion import FlowField, read_labels, write_flo
from packuv.ply import read_ply, write_ply
from packuv.sync import load_tree

from conftest import random_gaussians


@pytest.fixture
def plys(tmp_path, rng):
    paths = []
    for i in range(2):
        p = tmp_path / f"f{i}.ply"
        write_ply(p, random_gaussians(rng, 300))
        paths.append(str(p))
    return paths


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_ply_roundtrip(tmp_path, rng):
    g = random_gaussians(rng, 20, color_dim=12)
    write_ply(tmp_path / "a.ply", g)
    back = read_ply(tmp_path / "a.ply")
    assert np.allclose(back.mu, g.mu, atol=1e-6)
    assert np.allclose(back.s, g.s, rtol=1e-5)
    assert np.allclose(np.abs(np.sum(back.q * g.q, axis=1)), 1, atol=1e-6)
    assert np.allclose(back.alpha, g.alpha, atol=1e-6)
    assert np.allclose(back.c, g.c, atol=1e-6)


def test_pack_encode_decode_inspect(tmp_path, plys, capsys):
    prefix = tmp_path / "seq"
    code, out, _ = run(capsys, "pack", *plys, "-o", prefix, "--m0", 16, "--n0", 16, "--k", 4)
    assert code == 0
    assert "efficiency" in out and "frame 1: retained" in out
    retained = sum(int(l.split("retained ")[1].split(",")[0]) for l in out.splitlines()
                   if l.startswith("frame"))

    code, out, _ = run(capsys, "encode", f"{prefix}.puv", "-o", tmp_path / "seq.bin", "--internal")
    assert code == 0 and "verification: 0 byte diffs" in out

    code, out, _ = run(capsys, "decode", f"{prefix}.puv", tmp_path / "seq.bin",
                       "-o", tmp_path / "back.rgb", "--reference", f"{prefix}.rgb")
    assert code == 0 and "verification: 0 byte diffs" in out
    assert (tmp_path / "back.rgb").read_bytes() == (tmp_path / "seq.rgb").read_bytes()

    code, out, _ = run(capsys, "inspect", f"{prefix}.puv", "--previews", tmp_path / "prev")
    assert code == 0
    assert f"total occupied: {retained}" in out
    assert len(list((tmp_path / "prev").glob("*.png"))) == 15


def test_pack_default_efficiency(tmp_path, plys, capsys):
    code, out, _ = run(capsys, "pack", plys[0], "-o", tmp_path / "d")
    assert code == 0 and "efficiency 0.8854" in out
    code, out, _ = run(capsys, "pack", plys[0], "-o", tmp_path / "k1", "--m0", 8, "--n0", 8, "--k", 1)
    assert code == 0 and "efficiency 1.0000" in out


def test_pack_errors(tmp_path, capsys):
    empty = tmp_path / "empty.ply"
    write_ply(empty, GaussianSet.empty())
    code, _, err = run(capsys, "pack", empty, "-o", tmp_path / "x", "--m0", 8, "--n0", 8, "--k", 2)
    assert code == 4 and "error" in err
    code, _, _ = run(capsys, "pack", empty, "-o", tmp_path / "x", "--m0", 6)
    assert code == 2
    code, _, _ = run(capsys, "pack", tmp_path / "missing.ply", "-o", tmp_path / "x")
    assert code == 3


def test_config_file_and_flag_precedence(tmp_path, plys, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"m0": 8, "n0": 8, "k": 3}))
    code, _, _ = run(capsys, "pack", plys[0], "-o", tmp_path / "a", "--config", cfg)
    assert code == 0
    assert framecodec.read_sidecar(tmp_path / "a.puv").K == 3
    code, _, _ = run(capsys, "pack", plys[0], "-o", tmp_path / "b", "--config", cfg, "--k", 2)
    assert framecodec.read_sidecar(tmp_path / "b.puv").K == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, _ = run(capsys, "pack", plys[0], "-o", tmp_path / "c", "--config", cfg)
    assert code == 2


def test_threads_do_not_change_output(tmp_path, plys, capsys, monkeypatch):
    run(capsys, "pack", *plys, "-o", tmp_path / "one", "--m0", 16, "--n0", 16, "--k", 4)
    monkeypatch.setenv("PACKUV_THREADS", "4")
    run(capsys, "pack", *plys, "-o", tmp_path / "four", "--m0", 16, "--n0", 16, "--k", 4)
    assert (tmp_path / "one.rgb").read_bytes() == (tmp_path / "four.rgb").read_bytes()
    assert (tmp_path / "one.puv").read_text() == (tmp_path / "four.puv").read_text()


def test_encode_missing_encoder_falls_back(tmp_path, plys, capsys):
    run(capsys, "pack", plys[0], "-o", tmp_path / "s", "--m0", 8, "--n0", 8, "--k", 2)
    code, out, err = run(capsys, "encode", tmp_path / "s.puv", "-o", tmp_path / "s.bin",
                         "--encoder", "no-such-encoder {output}")
    assert code == 0 and "fallback" in err and "0 byte diffs" in out


@pytest.mark.skipif(framecodec.find_ffmpeg() is None, reason="no ffmpeg available")
def test_encode_external(tmp_path, plys, capsys):
    run(capsys, "pack", *plys, "-o", tmp_path / "s", "--m0", 16, "--n0", 16, "--k", 3)
    code, out, _ = run(capsys, "encode", tmp_path / "s.puv", "-o", tmp_path / "s.mkv")
    assert code == 0 and "external encoder" in out and "0 byte diffs" in out
    code, out, _ = run(capsys, "decode", tmp_path / "s.puv", tmp_path / "s.mkv",
                       "-o", tmp_path / "b.rgb", "--reference", tmp_path / "s.rgb")
    assert code == 0 and "0 byte diffs" in out


def test_decode_corrupt(tmp_path, plys, capsys):
    run(capsys, "pack", plys[0], "-o", tmp_path / "s", "--m0", 8, "--n0", 8, "--k", 2)
    run(capsys, "encode", tmp_path / "s.puv", "-o", tmp_path / "s.bin", "--internal")
    data = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[:-7])
    code, _, err = run(capsys, "decode", tmp_path / "s.puv", tmp_path / "cut.bin", "-o", tmp_path / "o")
    assert code == 3 and "ends mid-frame" in err


def test_inspect_unknown_version(tmp_path, plys, capsys):
    run(capsys, "pack", plys[0], "-o", tmp_path / "s", "--m0", 8, "--n0", 8, "--k", 2)
    d = json.loads((tmp_path / "s.puv").read_text())
    d["format_version"] = 7
    (tmp_path / "s.puv").write_text(json.dumps(d))
    code, _, err = run(capsys, "inspect", tmp_path / "s.puv")
    assert code == 3 and "version" in err


def write_scene(tmp_path, flow_value):
    g = GaussianSet([[0, 0, 4.0], [0.2, 0, 5.0]], np.full((2, 3), 0.05), [[1.0, 0, 0, 0]] * 2,
                    [0.9, 0.9], np.zeros((2, 3)))
    write_ply(tmp_path / "g.ply", g)
    cams = [{"name": "a", "fx": 20, "fy": 20, "cx": 8, "cy": 8, "width": 16, "height": 16}]
    (tmp_path / "cams.json").write_text(json.dumps(cams))
    (tmp_path / "flows").mkdir()
    v = np.zeros((16, 16, 2))
    v[8, 8] = flow_value
    write_flo(tmp_path / "flows" / "a.flo", FlowField(v))


def test_label(tmp_path, capsys):
    write_scene(tmp_path, (5.0, 0.0))
    code, out, _ = run(capsys, "label", tmp_path / "g.ply", "--cameras", tmp_path / "cams.json",
                       "--flows", tmp_path / "flows", "-o", tmp_path / "l.bin",
                       "--masks", tmp_path / "m", "--dilate", 0)
    assert code == 0
    # the first Gaussian projects onto (8, 8); the second lands at x = 8.8
    assert read_labels(tmp_path / "l.bin").tolist() == [True, True]
    assert (tmp_path / "m" / "a_mask.png").exists()


def test_label_zero_flow_and_mismatch(tmp_path, capsys):
    write_scene(tmp_path, (0.0, 0.0))
    code, _, _ = run(capsys, "label", tmp_path / "g.ply", "--cameras", tmp_path / "cams.json",
                     "--flows", tmp_path / "flows", "-o", tmp_path / "l.bin")
    assert code == 0 and not read_labels(tmp_path / "l.bin").any()
    write_flo(tmp_path / "flows" / "a.flo", FlowField(np.zeros((8, 16, 2))))
    code, _, _ = run(capsys, "label", tmp_path / "g.ply", "--cameras", tmp_path / "cams.json",
                     "--flows", tmp_path / "flows", "-o", tmp_path / "l.bin")
    assert code == 4


def test_keyframe(tmp_path, capsys):
    rows = ["frame,magnitude"] + [f"{t},{v}" for t, v in [(10, 5), (20, 4), (50, 6), (100, 3), (119, 0)]]
    (tmp_path / "s.csv").write_text("\n".join(rows) + "\n")
    code, out, _ = run(capsys, "keyframe", "--series", tmp_path / "s.csv", "--m", 3, "--theta", 30)
    assert code == 0
    assert "keyframes: 0 10 50" in out
    assert "segment [50, 120)" in out
    code, _, _ = run(capsys, "keyframe", "--m", 3)
    assert code == 2


def test_keyframe_from_flows(tmp_path, capsys):
    (tmp_path / "fl").mkdir()
    for t in range(5):
        write_flo(tmp_path / "fl" / f"{t:03d}.flo", FlowField(np.full((4, 4, 2), 1.0 if t == 2 else 0.0)))
    code, out, _ = run(capsys, "keyframe", "--flows", tmp_path / "fl", "--m", 2, "--theta", 1)
    assert code == 0 and "keyframes: 0 3" in out


def test_sync(tmp_path, capsys):
    (tmp_path / "a.txt").write_text("100 0\n200 1\n300 2\n")
    (tmp_path / "b.txt").write_text("104 0\n196 1\n400 2\n")
    code, out, err = run(capsys, "sync", tmp_path / "a.txt", tmp_path / "b.txt", "--threshold", 10,
                         "--save-trees", tmp_path / "trees", "--json", tmp_path / "t.json")
    assert code == 0
    assert out.splitlines() == ["timecode,a,b", "100,0,0", "200,1,1", "300,2,"]
    assert "1 absent" in err
    assert len(load_tree(tmp_path / "trees" / "b.avl")) == 3
    assert json.loads((tmp_path / "t.json").read_text())["reference"] == "a"
    code, _, _ = run(capsys, "sync", tmp_path / "a.txt", "--reference", "zz", "--threshold", 1)
    assert code == 4
