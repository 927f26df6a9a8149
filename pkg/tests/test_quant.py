import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from packuv.atlas import layout, pack
from packuv.errors import EmptySequence, InvalidConfig, OutOfRange, SpecMismatch
from packuv.quant import (
    dequantize,
    dequantize_frame,
    fit_quant_spec,
    join16,
    quantize,
    quantize_array,
    quantize_frame,
    split16,
)
from packuv.uvmap import LayeredUVMap, build_layered_map, pyramid_schedule

from conftest import random_gaussians


def test_quantize_examples():
    assert quantize(0.5, -1, 1, 8) == 191
    assert quantize(-1, -1, 1, 8) == 0
    assert quantize(1, -1, 1, 8) == 255
    assert quantize(1, -1, 1, 16) == 65535
    assert quantize(3.0, 3.0, 3.0, 8) == 0
    assert dequantize(191, -1, 1, 8) == pytest.approx(0.4980392156862745)


def test_round_half_away_from_zero():
    # on [0, 255] with 8 bits the scaled value equals x, so halves are exact
    assert quantize_array([0.5, 1.5, 2.5], 0, 255, 8).tolist() == [1, 2, 3]


def test_clamp_tolerance():
    assert quantize(1 + 1e-10, -1, 1, 8) == 255
    assert quantize(-1 - 1e-10, -1, 1, 8) == 0
    with pytest.raises(OutOfRange):
        quantize(1.001, -1, 1, 8)


def test_split_join():
    assert tuple(map(int, split16(0))) == (0, 0)
    assert tuple(map(int, split16(65535))) == (255, 255)
    assert tuple(map(int, split16(513))) == (2, 1)
    codes = np.arange(65536)
    hi, lo = split16(codes)
    assert np.array_equal(hi, codes // 256) and np.array_equal(lo, codes % 256)
    assert np.array_equal(join16(hi, lo), codes)


@given(st.floats(-1e6, 1e6), st.floats(0.0, 1e6), st.integers(1, 16), st.floats(0, 1))
def test_error_bound_and_grid_identity(lo, width, bits, t):
    hi = lo + width
    x = lo + t * (hi - lo)
    x = min(max(x, lo), hi)
    code = quantize(x, lo, hi, bits)
    assert 0 <= code <= (1 << bits) - 1
    err = abs(x - dequantize(code, lo, hi, bits))
    assert err <= (hi - lo) / (2 * ((1 << bits) - 1)) * (1 + 1e-9) + 1e-9 * abs(lo)
    if hi > lo:
        assert quantize(dequantize(code, lo, hi, bits), lo, hi, bits) == code


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=50))
def test_monotone(xs):
    xs = np.sort(np.asarray(xs))
    codes = quantize_array(xs, xs[0], xs[-1], 8)
    assert np.all(np.diff(codes) >= 0)


def frames_for(rng, n_frames=3, n=400, sched=None):
    sched = sched or pyramid_schedule(16, 16, 4)
    lay = layout(sched)
    out = []
    for _ in range(n_frames):
        uvmap, _ = build_layered_map(random_gaussians(rng, n), (0, 0, 0), sched)
        out.append(pack(uvmap, lay))
    return out


def test_fit_matches_scan(rng):
    frames = frames_for(rng)
    spec = fit_quant_spec(frames)
    assert spec.names[0] == "occupancy" and spec["rho"].bits == 16 and spec["alpha"].bits == 8
    for i, name in enumerate(frames[0].names):
        if name == "origin":
            continue
        vals = [v for f in frames for v in f.channels[i][f.occupancy].tolist()]
        assert (spec[name].min, spec[name].max) == (min(vals), max(vals))
    assert (spec["origin"].min, spec["origin"].max) == (0.0, 255.0)


def test_fit_simple_ranges():
    sched = pyramid_schedule(4, 4, 1)
    lay = layout(sched)
    uvmap = LayeredUVMap.empty(sched)
    layer = uvmap.layers[0]
    layer.occupied[:3, 0] = True
    layer.rho[:3, 0] = [-1, 0.5, 2]
    layer.alpha[:3, 0] = 3
    spec = fit_quant_spec([pack(uvmap, lay)])
    assert (spec["rho"].min, spec["rho"].max) == (-1, 2)
    assert (spec["alpha"].min, spec["alpha"].max) == (3, 3)


def test_fit_errors(rng):
    sched = pyramid_schedule(4, 4, 1)
    with pytest.raises(EmptySequence):
        fit_quant_spec([])
    with pytest.raises(EmptySequence):
        fit_quant_spec([pack(LayeredUVMap.empty(sched), layout(sched))])
    with pytest.raises(InvalidConfig):
        fit_quant_spec(frames_for(rng, 1), bits={"rho": 17})


def test_custom_bits(rng):
    frames = frames_for(rng, 1)
    spec = fit_quant_spec(frames, bits={"alpha": 12, "rho": 8})
    assert spec["alpha"].bits == 12 and spec["rho"].bits == 8
    assert "alpha_hi" in spec.plane_names() and "rho" in spec.plane_names()
    qf = quantize_frame(frames[0], spec)
    back = dequantize_frame(qf, spec)
    assert quantize_frame(back, spec).equals(qf)


def test_frame_roundtrip_idempotent_and_bounded(rng):
    frames = frames_for(rng)
    spec = fit_quant_spec(frames)
    for f in frames:
        qf = quantize_frame(f, spec)
        assert set(np.unique(qf.planes[0]).tolist()) <= {0, 255}
        assert not qf.planes[:, ~f.occupancy].any()
        back = dequantize_frame(qf, spec)
        assert np.array_equal(back.occupancy, f.occupancy)
        assert quantize_frame(back, spec).equals(qf)
        for i, name in enumerate(f.names):
            ch = spec[name]
            bound = (ch.max - ch.min) / (2 * ((1 << ch.bits) - 1))
            err = np.abs(back.channels[i] - f.channels[i])[f.occupancy]
            assert err.max() <= bound * (1 + 1e-9) + 1e-12
        # origin codes survive verbatim
        assert np.array_equal(back.channels[-1], f.channels[-1])


def test_zero_occupancy_frame(rng):
    spec = fit_quant_spec(frames_for(rng, 1))
    sched = pyramid_schedule(16, 16, 4)
    qf = quantize_frame(pack(LayeredUVMap.empty(sched), layout(sched)), spec)
    assert not qf.planes.any()


def test_spec_mismatch(rng):
    spec = fit_quant_spec(frames_for(rng, 1))
    sched = pyramid_schedule(16, 16, 4)
    uvmap, _ = build_layered_map(random_gaussians(rng, 20, color_dim=12), (0, 0, 0), sched)
    with pytest.raises(SpecMismatch):
        quantize_frame(pack(uvmap, layout(sched)), spec)
