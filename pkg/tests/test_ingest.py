r"""
Tests for ``rssgeo._ingest``
"""

import logging

import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st
from rssgeo import (
    ETA,
    FadingFilter,
    RssSampleStream,
    design_fading_filter,
    fit_pathloss,
    normalize_rss,
    read_combined_csv,
    read_distance_csv,
    read_stream_csv,
    remove_fast_fading,
    remove_fast_fading_all,
    smooth_samples,
    synthesize_streams,
)
from rssgeo._errors import (
    CollinearDegenerate,
    DimensionMismatch,
    EmptyStream,
    InsufficientPoints,
    NonpositiveRss,
    RssgeoError,
)

FS = 1000.0
DISTANCES = [2.0, 3.0, 5.0, 8.0, 13.0, 21.0, 34.0]


def test_filter_unit_dc_gain():
    b, a = design_fading_filter(FadingFilter(order=2), FS)
    assert b.sum() / a.sum() == pytest.approx(1.0)
    _, response = scipy.signal.freqz(b, a, worN=[0.0, 0.4 * FS], fs=FS)
    assert abs(response[0]) == pytest.approx(1.0)
    assert abs(response[1]) < 0.1


def test_filter_impulse_response():
    b, a = design_fading_filter(FadingFilter(), FS)
    y = smooth_samples([1.0, 0.0, 0.0, 0.0], FS)
    expected = [b[0], b[1] - a[1] * b[0]]
    expected += [-a[1] * expected[-1], a[1] ** 2 * expected[-1]]
    np.testing.assert_allclose(y, expected, rtol=1e-12)


def test_tone_attenuation_matches_response():
    params = FadingFilter()
    b, a = design_fading_filter(params, FS)
    k = np.arange(1000)
    y = smooth_samples(np.sin(2 * np.pi * 0.4 * k), FS, params)[-500:]
    # 500 samples hold a whole number of periods at 0.4 fs
    phase = 2 * np.pi * 0.4 * k[-500:]
    amplitude = 2 / 500 * np.hypot(y @ np.sin(phase), y @ np.cos(phase))
    _, response = scipy.signal.freqz(b, a, worN=[0.4 * FS], fs=FS)
    assert amplitude == pytest.approx(abs(response[0]), rel=1e-3)


@pytest.mark.parametrize("reducer", ["mean", "median"])
def test_constant_stream(reducer):
    stream = RssSampleStream("a", FS, np.full(2000, 3e-6))
    value = remove_fast_fading(stream, FadingFilter(reducer=reducer, decimation=3))
    assert value == pytest.approx(3e-6, rel=1e-3)


def test_fading_removed_from_synthetic_stream():
    (stream,) = synthesize_streams([4.0], exponent=3.0, sigma_db=0.0)
    assert remove_fast_fading(stream) == pytest.approx(4.0**-3, rel=0.02)


def test_empty_and_short_streams(caplog):
    with pytest.raises(EmptyStream):
        remove_fast_fading(RssSampleStream("x", FS, []))
    with caplog.at_level(logging.WARNING, logger="rssgeo"):
        value = remove_fast_fading(RssSampleStream("x", FS, [1.0, 1.0, 1.0]))
    assert 0 < value < 1
    assert "shorter than" in caplog.text


def test_stream_validation():
    with pytest.raises(RssgeoError):
        RssSampleStream("x", 0.0, [1.0])
    with pytest.raises(RssgeoError):
        RssSampleStream("x", FS, [1.0, -1.0])
    with pytest.raises(RssgeoError):
        FadingFilter(reducer="mode")
    with pytest.raises(RssgeoError):
        FadingFilter(cutoff_ratio=0.5)


def test_remove_all_keeps_order():
    streams = synthesize_streams(DISTANCES, exponent=3.0, sigma_db=2.0, seed=4)
    values = remove_fast_fading_all(streams, workers=3)
    np.testing.assert_array_equal(values, [remove_fast_fading(s) for s in streams])


def test_normalize_rss():
    normalized = normalize_rss([2.0, 8.0, 1.0], [3.0, 1.0, 9.0])
    np.testing.assert_array_equal(normalized, [0.25, 1.0, 0.125])
    with pytest.raises(NonpositiveRss):
        normalize_rss([1.0, 0.0], [1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        normalize_rss([1.0], [1.0, 2.0])
    with pytest.raises(InsufficientPoints):
        normalize_rss([], [])


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-12, 1e6))
def test_normalize_rss_scale_invariant(scale):
    rss = np.array([0.3, 1.2, 0.05])
    np.testing.assert_allclose(
        normalize_rss(scale * rss, DISTANCES[:3]), normalize_rss(rss, DISTANCES[:3])
    )


@pytest.mark.parametrize("n", [1.0, 2.0, 3.45, 6.0])
def test_fit_exact(n):
    d = np.array(DISTANCES)
    fit = fit_pathloss(d, 0.5 * (2.0 / d) ** n, r0=2.0)
    assert fit.n_hat == pytest.approx(n, abs=1e-9)
    assert fit.k_hat == pytest.approx(0.5)
    assert fit.sigma_db_hat == pytest.approx(0.0, abs=1e-9)
    assert fit.count == len(d)
    assert fit.to_dict()["reference_distance_m"] == 2.0


def test_fit_failures():
    with pytest.raises(InsufficientPoints):
        fit_pathloss([1.0], [1.0])
    with pytest.raises(CollinearDegenerate):
        fit_pathloss([5.0, 5.0, 5.0], [1.0, 2.0, 3.0])
    with pytest.raises(NonpositiveRss):
        fit_pathloss([1.0, 2.0], [1.0, -1.0])
    assert fit_pathloss([1.0, 2.0], [1.0, 0.1]).sigma_db_hat == 0.0


def test_fit_unbiased_under_shadowing():
    rng = np.random.default_rng(12)
    d = np.geomspace(1.0, 50.0, 20)
    fits = [
        fit_pathloss(d, d**-3.45 * np.exp(ETA * 2.0 * rng.standard_normal(len(d))))
        for _ in range(200)
    ]
    assert np.mean([f.n_hat for f in fits]) == pytest.approx(3.45, abs=0.05)
    assert np.mean([f.sigma_db_hat for f in fits]) == pytest.approx(2.0, abs=0.1)


def test_pipeline_recovers_exponent():
    streams = synthesize_streams(DISTANCES, exponent=3.45, sigma_db=0.0, seed=1)
    rss = normalize_rss(remove_fast_fading_all(streams), DISTANCES)
    fit = fit_pathloss(DISTANCES, rss)
    assert fit.n_hat == pytest.approx(3.45, abs=1e-3)
    assert fit.sigma_db_hat == pytest.approx(0.0, abs=1e-3)


def test_read_stream_csv(tmp_path):
    path = tmp_path / "sensor_03.csv"
    t = np.arange(50) / 100.0
    rows = "\n".join(f"{ti:.2f},{1e-6 * (1 + ti):.9g}" for ti in t)
    path.write_text("time_s,rss_linear\n" + rows + "\n")
    stream = read_stream_csv(path)
    assert stream.sensor_id == "03"
    assert stream.sample_rate == pytest.approx(100.0)
    assert len(stream) == 50
    assert read_stream_csv(path, sample_rate=10.0, sensor_id="x").sensor_id == "x"


def test_read_stream_csv_missing_column(tmp_path):
    path = tmp_path / "rx1.csv"
    path.write_text("t,power\n0,1\n1,2\n")
    with pytest.raises(RssgeoError, match="missing"):
        read_stream_csv(path)


def test_read_combined_csv(tmp_path):
    path = tmp_path / "readings.csv"
    path.write_text("sensor_id,rss_linear,distance_m\nA,1.0,2.0\nB,0.5,3.0\n")
    readings = read_combined_csv(path)
    assert readings.sensor_ids == ("A", "B")
    np.testing.assert_array_equal(readings.distances, [2.0, 3.0])
    assert readings.positions is None

    path.write_text("sensor_id,rss_linear,x_m,y_m\nA,1.0,0.0,1.0\nB,0.5,3.0,4.0\n")
    readings = read_combined_csv(path)
    assert readings.distances is None
    np.testing.assert_array_equal(readings.positions, [[0.0, 1.0], [3.0, 4.0]])

    path.write_text("sensor_id,rss_linear\nA,1.0\nB,0.5\n")
    with pytest.raises(RssgeoError, match="expected columns"):
        read_combined_csv(path)


def test_read_distance_csv(tmp_path):
    path = tmp_path / "distances.csv"
    path.write_text("sensor_id,distance_m\n00,2.5\n07,4\n")
    assert read_distance_csv(path) == {"00": 2.5, "07": 4.0}
    with pytest.raises(FileNotFoundError):
        read_distance_csv(tmp_path / "missing.csv")
