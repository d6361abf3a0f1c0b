import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dalksim import dsp


def cosine_frame(peak_bin, seq=0, amplitude=1.0):
    n = np.arange(dsp.N_SAMPLES)
    nu = peak_bin / (dsp.N_SAMPLES * dsp.ZERO_PAD_FACTOR)
    return dsp.SpectralFrame(samples=amplitude * np.cos(2 * np.pi * nu * n), seq=seq)


def zero_frame(seq=0):
    return dsp.SpectralFrame(samples=np.zeros(dsp.N_SAMPLES), seq=seq)


def test_all_zero_frames_reconstruct_to_zero():
    aline = dsp.reconstruct_aline([zero_frame(i) for i in range(256)], zero_frame())
    assert np.all(aline.intensity == 0.0)


def test_background_cancellation_is_exact():
    frame = cosine_frame(250)
    frames = [dsp.SpectralFrame(frame.samples.copy(), seq=i) for i in range(256)]
    aline = dsp.reconstruct_aline(frames, frame)
    assert np.allclose(aline.intensity, 0.0)


def test_pure_cosine_peaks_at_bin_100():
    frames = [cosine_frame(100, seq=i) for i in range(256)]
    aline = dsp.reconstruct_aline(frames, zero_frame())
    assert int(np.argmax(aline.intensity)) == 100


def test_background_subtraction_restores_component():
    # frames = a + b with background b reconstructs exactly like a alone
    a, b = cosine_frame(300), cosine_frame(411)
    summed = [dsp.SpectralFrame(a.samples + b.samples, seq=i) for i in range(256)]
    alone = [dsp.SpectralFrame(a.samples.copy(), seq=i) for i in range(256)]
    via_bg = dsp.reconstruct_aline(summed, b)
    direct = dsp.reconstruct_aline(alone, zero_frame())
    assert np.allclose(via_bg.intensity, direct.intensity)


def test_frame_count_contract():
    with pytest.raises(ValueError):
        dsp.reconstruct_aline([zero_frame()] * 255, zero_frame())


def test_frame_length_contract():
    with pytest.raises(ValueError):
        dsp.SpectralFrame(samples=np.zeros(512))


def test_timestamp_follows_sweep_counter():
    frames = [zero_frame(seq=512 + i) for i in range(256)]
    aline = dsp.reconstruct_aline(frames, zero_frame())
    assert aline.timestamp_ms == pytest.approx(2 * dsp.LINE_PERIOD_MS)


def test_peak_localization_on_random_depths():
    rng = np.random.default_rng(9)
    for _ in range(10):
        z = rng.uniform(100.0, 3500.0)
        expected = round(z / dsp.DZ_AIR_UM)
        frames = [cosine_frame(z / dsp.DZ_AIR_UM, seq=i) for i in range(256)]
        aline = dsp.reconstruct_aline(frames, zero_frame())
        assert abs(int(np.argmax(aline.intensity)) - expected) <= 2


# -- unit conversions --------------------------------------------------------


def test_refract_correct_reference_values():
    assert dsp.refract_correct(3700.0, 1.321) == pytest.approx(2800.9, abs=0.05)
    assert dsp.refract_correct(1234.5, 1.0) == 1234.5
    assert dsp.refract_correct(1376.0, 1.376) == pytest.approx(1000.0)


def test_refract_correct_rejects_bad_inputs():
    with pytest.raises(ValueError):
        dsp.refract_correct(100.0, 0.99)
    with pytest.raises(ValueError):
        dsp.refract_correct(-1.0, 1.3)


def test_needle_offset_optical_reference_values():
    assert dsp.needle_offset_optical(500.0, 1.321) == pytest.approx(660.5)
    assert dsp.needle_offset_optical(500.0, 1.0) == 500.0
    with pytest.raises(ValueError):
        dsp.needle_offset_optical(0.0, 1.3)


@given(
    offset=st.floats(min_value=1e-3, max_value=1e5),
    n_s=st.floats(min_value=1.0, max_value=2.0),
)
def test_unit_conversions_are_exact_inverses(offset, n_s):
    back = dsp.refract_correct(dsp.needle_offset_optical(offset, n_s), n_s)
    assert abs(back - offset) <= 1e-9 * offset


# -- M-scan assembly and display ---------------------------------------------


def make_aline(value=1.0, t=0.0):
    return dsp.ALine(intensity=np.full(dsp.N_SAMPLES, value), timestamp_ms=t)


def test_assemble_mscan_preserves_column_order():
    alines = [make_aline(value=float(k)) for k in range(48)]
    scan = dsp.assemble_mscan(alines)
    for k in range(48):
        assert np.all(scan.pixels[:, k] == float(k))
    assert scan.duration_ms == pytest.approx(122.88)


def test_assemble_mscan_count_contract():
    with pytest.raises(ValueError):
        dsp.assemble_mscan([make_aline()] * 47)


def test_equalize_constant_image_unchanged():
    img = np.full((1024, 48), 0.37)
    out = dsp.hist_equalize(img)
    assert np.array_equal(out, img)


def test_equalize_four_equal_levels():
    img = np.repeat(np.array([0.0, 1.0, 2.0, 3.0]), 1024 * 12).reshape(1024, 48)
    out = dsp.hist_equalize(img)
    assert sorted(np.unique(out)) == [63, 127, 191, 255]


def test_equalize_preserves_rank_order():
    rng = np.random.default_rng(4)
    img = rng.normal(size=(1024, 48))
    out = dsp.hist_equalize(img)
    flat_in, flat_out = img.ravel(), out.ravel()
    order = np.argsort(flat_in)
    assert np.all(np.diff(flat_out[order]) >= 0)


def test_fixture_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    scan = dsp.MScan(pixels=rng.random((1024, 48)).astype(np.float32))
    axis = dsp.DepthAxis(n_s=1.376)
    path = tmp_path / "scan.mscn"
    dsp.write_mscan_fixture(str(path), scan, axis)
    loaded, loaded_axis = dsp.read_mscan_fixture(str(path))
    assert np.array_equal(loaded.pixels, scan.pixels.astype(np.float32))
    assert loaded_axis.n_s == pytest.approx(1.376)
    assert loaded_axis.dz_air == pytest.approx(dsp.DZ_AIR_UM)


def test_fixture_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.mscn"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ValueError):
        dsp.read_mscan_fixture(str(path))
