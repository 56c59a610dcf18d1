"""
Tests for gain application, deep filtering and the streaming enhancement pipeline
"""

import numpy as np
import pytest

from network import NetDescriptor, NetworkWeights, save_weights
from services.audio_io import read_wav, write_wav
from services.enhance import (
    AlphaTrack,
    DfCoefficients,
    apply_df,
    apply_gains,
    blend,
    check_compatible,
    clamp_gains,
    df_filter,
    enhance_file,
    enhance_stream,
)
from services.errors import ConfigurationError, ContractViolation
from services.models import RunConfig


@pytest.fixture
def descriptor():
    return NetDescriptor.for_run(n_erb=32, nb_df=101, df_order=5, l_dnn=2, conv_ch=4, groups=2, emb_dim=8)


@pytest.fixture
def config():
    return RunConfig()


def complex_noise(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_apply_gains_scales_magnitude_only(rng):
    x = complex_noise(rng, 10)
    g = rng.random(10)
    y = apply_gains(x, g)
    np.testing.assert_allclose(np.abs(y), np.abs(x) * g)
    with pytest.raises(ContractViolation):
        apply_gains(x, g[:9])


def test_apply_df_single_tap_selects_current_frame(rng):
    order, lookahead = 5, 2
    buffer = complex_noise(rng, order, 4)
    coefs = np.zeros((order, 4), dtype=complex)
    coefs[lookahead] = 1.0
    # buffer rows are X(k-N+1+l) .. X(k+l), so X(k) is row N-1-l
    np.testing.assert_allclose(apply_df(buffer, coefs, lookahead), buffer[order - 1 - lookahead])


def test_apply_df_contract_checks(rng):
    with pytest.raises(ContractViolation):
        apply_df(complex_noise(rng, 4, 3), complex_noise(rng, 5, 3), 1)
    with pytest.raises(ContractViolation):
        apply_df(complex_noise(rng, 5, 3), complex_noise(rng, 5, 3), 5)


def test_df_filter_matches_framewise_apply_df(rng):
    n_frames, order, lookahead, nb_df = 9, 3, 1, 4
    spec = complex_noise(rng, n_frames, 7)
    coefs = DfCoefficients(complex_noise(rng, n_frames, order, nb_df), lookahead=lookahead)
    out = df_filter(spec, coefs)

    padded = np.concatenate([np.zeros((order - 1 - lookahead, nb_df)), spec[:, :nb_df], np.zeros((lookahead, nb_df))])
    for k in range(n_frames):
        expected = apply_df(padded[k:k + order], coefs.coefs[k], lookahead)
        np.testing.assert_allclose(out[k, :nb_df], expected, atol=1e-12)
    np.testing.assert_array_equal(out[:, nb_df:], spec[:, nb_df:])


def test_order_one_filter_is_a_complex_mask(rng):
    spec = complex_noise(rng, 6, 5)
    mask = complex_noise(rng, 6, 1, 5)
    np.testing.assert_allclose(df_filter(spec, DfCoefficients(mask)), spec * mask[:, 0], atol=1e-12)


def test_coefficient_and_alpha_containers_validate():
    with pytest.raises(ContractViolation):
        DfCoefficients(np.zeros((3, 2, 4), dtype=complex), lookahead=2)
    with pytest.raises(ContractViolation):
        DfCoefficients(np.zeros((3, 4), dtype=complex))
    with pytest.raises(ContractViolation):
        AlphaTrack(np.array([0.2, 1.2]))
    assert AlphaTrack([0.0, 1.0]).alpha.dtype == np.float64


def test_blend_endpoints(rng):
    a, b = complex_noise(rng, 3), complex_noise(rng, 3)
    np.testing.assert_array_equal(blend(a, b, 1.0), a)
    np.testing.assert_array_equal(blend(a, b, 0.0), b)
    with pytest.raises(ContractViolation):
        blend(a, b, 1.5)


def test_clamp_gains():
    g = np.array([0.0, 0.05, 0.5, 1.0])
    np.testing.assert_allclose(clamp_gains(g, 20.0), [0.1, 0.1, 0.5, 1.0])
    np.testing.assert_array_equal(clamp_gains(g, None), g)
    with pytest.raises(ContractViolation):
        clamp_gains(g, -3.0)


def test_incompatible_weights_rejected(descriptor):
    weights = NetworkWeights.zeros(descriptor)
    with pytest.raises(ConfigurationError, match="df_order"):
        check_compatible(weights, RunConfig(df_order=3))
    with pytest.raises(ConfigurationError, match="n_erb"):
        enhance_stream(np.zeros(960), weights, RunConfig(n_erb=24))


def test_identity_network_reproduces_delayed_input(descriptor, config, rng):
    weights = NetworkWeights.identity(descriptor, df_lookahead=config.l_df)
    x = 0.1 * rng.standard_normal(48000)
    result = enhance_stream(x, weights, config)

    delay = result.delay_samples
    assert delay == 480 + 2 * 480
    assert result.latency_ms == pytest.approx(40.0)
    assert len(result.samples) == len(x)
    np.testing.assert_allclose(result.samples[delay:], x[:-delay], atol=1e-6)


def muting_weights(descriptor):
    tensors = {k: np.array(v) for k, v in NetworkWeights.zeros(descriptor).tensors.items()}
    tensors["erb_dec.conv0.bias"][:] = -40.0
    return NetworkWeights(descriptor, tensors)


def test_attenuation_limit_bounds_suppression(descriptor, rng):
    weights = muting_weights(descriptor)
    x = 0.1 * rng.standard_normal(24000)

    muted = enhance_stream(x, weights, RunConfig()).samples
    limited = enhance_stream(x, weights, RunConfig(atten_limit=20)).samples

    assert np.max(np.abs(muted)) < 1e-9
    rms_in = np.sqrt(np.mean(x ** 2))
    rms_out = np.sqrt(np.mean(limited[1440:] ** 2))
    assert 0.02 * rms_in < rms_out <= 0.1 * rms_in * 1.05


def test_silence_stays_silent(descriptor, config):
    weights = NetworkWeights.init_random(descriptor, seed=5)
    out = enhance_stream(np.zeros(9600), weights, config).samples
    assert np.all(np.isfinite(out))
    assert np.max(np.abs(out)) < 1e-9


def test_enhance_file_round_trip(descriptor, config, rng, tmp_path):
    weights_path = save_weights(NetworkWeights.identity(descriptor), tmp_path / "id.dfnw")
    x = 0.1 * rng.standard_normal(19200)
    write_wav(tmp_path / "noisy.wav", x, 48000)

    result = enhance_file(tmp_path / "noisy.wav", tmp_path / "out" / "clean.wav", weights_path, config, compensate_delay=True)
    y, sr = read_wav(tmp_path / "out" / "clean.wav")

    assert sr == 48000
    assert len(y) == len(x)
    n = len(x) - result.delay_samples
    np.testing.assert_allclose(y[:n], x[:n], atol=1e-5)


def test_enhance_file_resamples_other_rates(descriptor, config, rng, tmp_path):
    write_wav(tmp_path / "narrow.wav", 0.1 * rng.standard_normal(16000), 16000)
    enhance_file(tmp_path / "narrow.wav", tmp_path / "wide.wav", NetworkWeights.identity(descriptor), config)
    y, sr = read_wav(tmp_path / "wide.wav")
    assert sr == 48000
    assert len(y) == 48000


def test_output_never_depends_on_future_input(descriptor, config, rng):
    weights = NetworkWeights.init_random(descriptor, seed=3)
    x = 0.1 * rng.standard_normal(19200)
    t0 = 20 * 480
    perturbed = x.copy()
    perturbed[t0:] += rng.standard_normal(len(x) - t0)

    a = enhance_stream(x, weights, config).samples
    b = enhance_stream(perturbed, weights, config).samples
    np.testing.assert_array_equal(a[:t0], b[:t0])
    assert not np.allclose(a[t0:], b[t0:])


def test_minimal_latency_configuration(rng):
    config = RunConfig(fft_size=240, l_dnn=0, l_df=0, n_erb=16)
    descriptor = NetDescriptor.for_run(16, config.nb_df, config.df_order, l_dnn=0, conv_ch=4, groups=2, emb_dim=8)
    x = 0.1 * rng.standard_normal(4800)
    result = enhance_stream(x, NetworkWeights.identity(descriptor, df_lookahead=0), config)

    assert result.latency_ms == pytest.approx(5.0)
    assert result.delay_samples == 120
    np.testing.assert_allclose(result.samples[120:], x[:-120], atol=1e-6)


def test_single_tap_df_is_mask_multiplication_at_scale(rng):
    bins = complex_noise(rng, 1, 100_000)
    mask = complex_noise(rng, 1, 100_000)
    np.testing.assert_allclose(apply_df(bins, mask, 0), bins[0] * mask[0], rtol=0, atol=1e-12)
