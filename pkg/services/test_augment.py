"""
Tests for mixing, the augmentation chain and dataset synthesis
"""

import json

import numpy as np
import pytest
import scipy.signal
from hypothesis import given
from hypothesis import strategies as st

from services.audio_io import read_wav, write_wav
from services.augment import (
    apply_eq,
    attenuation_target,
    biquad_augment,
    convolve_rir,
    draw_spec,
    fit_length,
    lowpass_match,
    measure_snr,
    mix,
    peaking_sos,
    random_biquad,
    random_eq,
    render,
    resample,
    synthesize_dataset,
)
from services.errors import ContractViolation, SilentSignalError
from services.models import EqBand, ManifestEntry

SR = 48000


def tone(freq, seconds=0.5, sr=SR, amp=0.3):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def rms(x):
    return float(np.sqrt(np.mean(np.asarray(x) ** 2)))


@given(st.sampled_from([-5.0, 0.0, 5.0, 10.0, 20.0, 40.0]), st.integers(min_value=1, max_value=5))
def test_mix_hits_snr_for_any_noise_count(snr, n_noises):
    rng = np.random.default_rng(n_noises)
    speech = tone(220.0)
    noises = [rng.standard_normal(int(rng.integers(1000, 30000))) for _ in range(n_noises)]
    noisy, clean, noise = mix(speech, noises, snr)
    assert len(noisy) == len(speech)
    np.testing.assert_allclose(noisy, clean + noise)
    assert measure_snr(clean, noise) == pytest.approx(snr, abs=1e-6)


def test_mix_rejects_silence(rng):
    with pytest.raises(SilentSignalError):
        mix(np.zeros(1000), [rng.standard_normal(1000)], 0.0)
    with pytest.raises(ContractViolation):
        mix(tone(100.0), [], 0.0)
    with pytest.raises(ContractViolation):
        mix(tone(100.0), [np.zeros(1000)], 0.0)


def test_fit_length_loops_and_trims():
    assert fit_length(np.array([1.0, 2.0, 3.0]), 7).tolist() == [1, 2, 3, 1, 2, 3, 1]
    assert fit_length(np.arange(10.0), 4).tolist() == [0, 1, 2, 3]
    with pytest.raises(ContractViolation):
        fit_length(np.array([]), 3)


def test_snr_is_measured_over_active_speech(rng):
    speech = np.concatenate([tone(200.0), np.zeros(SR // 2)])
    noise = 0.01 * rng.standard_normal(len(speech))
    full = 10 * np.log10(np.mean(speech ** 2) / np.mean(noise ** 2))
    assert measure_snr(speech, noise) == pytest.approx(full + 10 * np.log10(2), abs=0.2)


@pytest.mark.parametrize("seed", range(10))
def test_random_biquad_is_stable_and_bounded(seed):
    params = random_biquad(np.random.default_rng(seed))
    assert params.a[0] == 1.0
    assert all(abs(c) <= 3 / 8 for c in params.a[1:])
    assert np.all(np.abs(np.roots(params.a)) < 1.0)
    impulse = np.zeros(4096)
    impulse[0] = 1.0
    response = scipy.signal.lfilter(params.b, params.a, impulse)
    assert np.isfinite(np.sum(response ** 2))
    assert abs(response[-1]) < 1e-12


def test_biquad_augment_is_seeded(rng):
    x = rng.standard_normal(2000)
    np.testing.assert_array_equal(biquad_augment(x, 5), biquad_augment(x, 5))
    assert not np.allclose(biquad_augment(x, 5), biquad_augment(x, 6))


def test_peaking_band_gain_at_center():
    band = EqBand(freq_hz=1000.0, gain_db=6.0, q=1.0)
    sos = peaking_sos(band, SR)
    _, h = scipy.signal.sosfreqz(sos[None], worN=[1000.0], fs=SR)
    assert 20 * np.log10(abs(h[0])) == pytest.approx(6.0, abs=1e-6)
    assert apply_eq(tone(50.0), [band], SR).shape == (SR // 2,)


def test_random_eq_ranges():
    for seed in range(20):
        bands = random_eq(np.random.default_rng(seed), SR)
        assert 1 <= len(bands) <= 3
        assert all(100.0 <= b.freq_hz <= 8000.0 and -6 <= b.gain_db <= 6 and 0.5 <= b.q <= 2 for b in bands)


def test_resample_changes_length_by_ratio():
    x = tone(300.0, seconds=1.0)
    assert len(resample(x, 1.1)) == pytest.approx(1.1 * len(x), abs=2)
    assert len(resample(x, 0.9)) == pytest.approx(0.9 * len(x), abs=2)
    np.testing.assert_array_equal(resample(x, 1.0), x)


def test_rir_convolution(rng):
    x = rng.standard_normal(1000)
    delta = np.zeros(50)
    delta[0] = 0.5
    np.testing.assert_allclose(convolve_rir(x, delta), x, atol=1e-9)
    assert len(convolve_rir(x, rng.standard_normal(300))) == 1000
    with pytest.raises(ContractViolation):
        convolve_rir(x, np.zeros(10))


def test_lowpass_removes_content_above_speech_bandwidth():
    stop = lowpass_match(tone(12000.0), 8000.0)[2000:]
    passed = lowpass_match(tone(2000.0), 8000.0)[2000:]
    assert 20 * np.log10(rms(stop) / rms(tone(12000.0))) < -60.0
    assert rms(passed) == pytest.approx(rms(tone(2000.0)), rel=0.05)
    np.testing.assert_array_equal(lowpass_match(tone(12000.0), 24000.0), tone(12000.0))
    with pytest.raises(ContractViolation):
        lowpass_match(tone(100.0), 30000.0)


def test_attenuation_target(rng):
    clean = tone(200.0)
    noise = 0.1 * rng.standard_normal(len(clean))
    np.testing.assert_array_equal(attenuation_target(clean, noise, 0.0, np.inf), clean)
    target = attenuation_target(clean, noise, 0.0, 12.0)
    assert measure_snr(clean, target - clean) == pytest.approx(12.0, abs=1e-6)


def test_draw_spec_is_deterministic_per_row():
    entry = ManifestEntry(speech="s.wav", noises=["a.wav", "b.wav"])
    a = draw_spec(entry, 3, seed=42)
    assert a == draw_spec(entry, 3, seed=42)
    assert len(a.noise_gains_db) == 2 and len(a.noise_filters) == 2
    assert a.snr_db in (-5.0, 0.0, 5.0, 10.0, 20.0, 40.0)
    assert a.speech_bandwidth_hz is None
    assert draw_spec(entry, 3, seed=42, speech_rate=16000).speech_bandwidth_hz == 8000.0
    assert draw_spec(entry, 3, seed=42, atten_limit=True).atten_extra_db is not None

    seeded = ManifestEntry(speech="s.wav", noises=["a.wav"], seed=7)
    assert draw_spec(seeded, 0, seed=1) == draw_spec(seeded, 0, seed=2)


def test_render_mixes_at_drawn_snr(rng):
    entry = ManifestEntry(speech="s.wav", noises=["a.wav"])
    spec = draw_spec(entry, 0, seed=9, atten_limit=True)
    noisy, clean, target = render(spec, tone(180.0, seconds=1.0), [rng.standard_normal(SR)])
    assert len(noisy) == len(clean) == len(target)
    assert measure_snr(clean, noisy - clean) == pytest.approx(spec.snr_db, abs=1e-6)
    assert measure_snr(clean, target - clean) == pytest.approx(spec.snr_db + spec.atten_extra_db, abs=1e-6)


@pytest.fixture
def corpus(tmp_path, rng):
    write_wav(tmp_path / "speech.wav", tone(200.0, seconds=1.0), SR)
    write_wav(tmp_path / "narrow.wav", tone(200.0, seconds=1.0, sr=16000), 16000)
    write_wav(tmp_path / "noise.wav", 0.1 * rng.standard_normal(SR // 2), SR)
    write_wav(tmp_path / "noise16k.wav", 0.1 * rng.standard_normal(8000), 16000)
    rows = [
        {"speech": "speech.wav", "noises": ["noise.wav", "noise16k.wav"]},
        {"speech": "narrow.wav", "noises": ["noise.wav"], "seed": 3},
        {"speech": "missing.wav", "noises": ["noise.wav"]},
        {"speech": "speech.wav"},
    ]
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return manifest


def test_synthesize_dataset_writes_triples_and_failures(corpus, tmp_path):
    out = tmp_path / "set"
    report = synthesize_dataset(corpus, out, seed=1)

    assert report.written == 2
    assert len(report.failures) == 2
    assert (out / "failures.txt").exists()
    specs = [json.loads(line) for line in (out / "index.jsonl").read_text().splitlines()]
    assert [s["index"] for s in specs] == [0, 1]

    for s in specs:
        noisy, sr = read_wav(out / s["noisy_file"])
        clean, _ = read_wav(out / s["clean_file"])
        target, _ = read_wav(out / s["target_file"])
        assert sr == SR
        np.testing.assert_array_equal(target, clean)
        assert measure_snr(clean, noisy - clean) == pytest.approx(s["snr_db"], abs=0.1)
    assert specs[1]["speech_bandwidth_hz"] == 8000.0


def test_synthesis_is_reproducible(corpus, tmp_path):
    first = synthesize_dataset(corpus, tmp_path / "a", seed=5, workers=2)
    second = synthesize_dataset(corpus, tmp_path / "b", seed=5)
    assert first.written == second.written
    assert (tmp_path / "a" / "index.jsonl").read_text() == (tmp_path / "b" / "index.jsonl").read_text()
    for name in ("noisy/000000.wav", "clean/000001.wav"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
