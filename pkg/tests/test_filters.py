import json

import numpy as np
import pytest

from fingersense.audio import AudioClip
from fingersense.filters import (BiquadCascade, InvalidBand, RateMismatch,
                                 StreamFilter, apply, design_bandpass,
                                 frequency_response)

SR = 16000


def analytic_gain(sections, freq_hz, sr=SR):
    """Independent unit-circle evaluation of the cascade transfer function."""
    w = 2 * np.pi * freq_hz / sr
    z1 = np.exp(-1j * w)
    h = 1.0 + 0j
    for b0, b1, b2, a1, a2 in sections:
        h *= (b0 + b1 * z1 + b2 * z1 ** 2) / (1 + a1 * z1 + a2 * z1 ** 2)
    return abs(h)


def measured_gain(cascade, freq_hz, settle_s=4.0, measure_s=2.0):
    """Drive a steady sine through the filter and project the tail onto
    quadrature references over an integer number of cycles."""
    cycles = max(1, int(measure_s * freq_hz))
    measure_n = int(round(cycles * SR / freq_hz))
    n = int(settle_s * SR) + measure_n
    t = np.arange(n) / SR
    x = np.sin(2 * np.pi * freq_hz * t)
    y = apply(cascade, AudioClip(x, SR)).samples[-measure_n:]
    tt = t[-measure_n:]
    c = 2 * np.mean(y * np.cos(2 * np.pi * freq_hz * tt))
    s = 2 * np.mean(y * np.sin(2 * np.pi * freq_hz * tt))
    return np.hypot(c, s)


@pytest.fixture(scope="module")
def cascade():
    return design_bandpass(10, 500, 4, SR)


def test_unity_at_geometric_center(cascade):
    assert 0.99 <= analytic_gain(cascade.sections, np.sqrt(10 * 500)) <= 1.01


def test_minus_3db_at_cutoffs(cascade):
    assert 0.68 <= analytic_gain(cascade.sections, 10.0) <= 0.74
    assert 0.68 <= analytic_gain(cascade.sections, 500.0) <= 0.74


def test_invalid_band():
    with pytest.raises(InvalidBand):
        design_bandpass(500, 500, 4, SR)
    with pytest.raises(InvalidBand):
        design_bandpass(0, 500, 4, SR)
    with pytest.raises(InvalidBand):
        design_bandpass(10, 9000, 4, SR)
    with pytest.raises(InvalidBand):
        design_bandpass(10, 500, 3, SR)


def test_sections_stable(cascade):
    for b0, b1, b2, a1, a2 in cascade.sections:
        assert abs(a2) < 1
        assert abs(a1) < 1 + a2


def test_zero_in_zero_out(cascade):
    out = apply(cascade, AudioClip(np.zeros(SR), SR))
    np.testing.assert_array_equal(out.samples, 0.0)


def test_passband_sine_survives(cascade):
    assert measured_gain(cascade, 100.0) >= 0.95


def test_stopband_sine_rejected(cascade):
    assert measured_gain(cascade, 2000.0) <= 0.05


def test_rate_mismatch(cascade):
    with pytest.raises(RateMismatch):
        apply(cascade, AudioClip(np.zeros(100), 8000))


def test_linearity(cascade):
    rng = np.random.default_rng(0)
    x = rng.normal(size=4000)
    y = rng.normal(size=4000)
    a, b = 1.7, -0.4
    left = apply(cascade, AudioClip(a * x + b * y, SR)).samples
    right = (a * apply(cascade, AudioClip(x, SR)).samples
             + b * apply(cascade, AudioClip(y, SR)).samples)
    scale = np.abs(left).max()
    np.testing.assert_allclose(left, right, atol=1e-9 * max(scale, 1.0))


def test_impulse_decays_within_2s(cascade):
    impulse = np.zeros(2 * SR)
    impulse[0] = 1.0
    response = apply(cascade, AudioClip(impulse, SR)).samples
    assert np.abs(response[-SR // 10:]).max() < 1e-6


def test_monotone_stopband(cascade):
    gains = [measured_gain(cascade, f) for f in (1000, 2000, 4000)]
    assert gains[0] > gains[1] > gains[2]


def test_sweep_matches_analytic_within_1pct(cascade):
    freqs = np.logspace(np.log10(5), np.log10(4000), 20)
    for f in freqs:
        measured = measured_gain(cascade, f)
        analytic = analytic_gain(cascade.sections, f)
        assert measured == pytest.approx(analytic, rel=0.01), f"{f:.1f} Hz"


def test_json_roundtrip(cascade):
    doc = json.loads(cascade.to_json())
    assert len(doc["sections"]) == 4
    assert doc["meta"]["low_hz"] == 10.0
    again = BiquadCascade.from_json(cascade.to_json())
    assert again.sections == cascade.sections


def test_stream_filter_matches_batch(cascade):
    rng = np.random.default_rng(2)
    x = rng.normal(size=SR)
    batch = apply(cascade, AudioClip(x, SR)).samples
    stream = StreamFilter(cascade)
    chunks = [stream.process(x[i:i + 1600]) for i in range(0, SR, 1600)]
    np.testing.assert_allclose(np.concatenate(chunks), batch, atol=1e-12)
