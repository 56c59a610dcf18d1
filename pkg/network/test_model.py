"""
Tests for the descriptor, the forward pass and the complexity report
"""

import numpy as np
import pytest
from pydantic import ValidationError

from network import NetDescriptor, NetworkWeights, complexity_report, forward, layer_complexity
from network.models import LayerSpec
from services.errors import ConfigurationError
from services.spectral import StftConfig


def features(rng, n_frames, d):
    erb = rng.standard_normal((n_frames, d.n_erb))
    df = rng.standard_normal((n_frames, d.nb_df)) + 1j * rng.standard_normal((n_frames, d.nb_df))
    return erb, df


def test_default_descriptor():
    d = NetDescriptor()
    assert d.l_dnn == 2
    assert d.erb_freqs() == [32, 32, 16, 8, 8]
    assert d.df_freqs() == [101, 101, 51]
    assert d.layer("df_dec.df_out").out_dim == 5 * 101 * 2
    assert d.layer("erb_dec.conv0").out_dim == 1


def test_descriptor_rejects_inconsistent_topology(small_descriptor):
    with pytest.raises(ValidationError):
        NetDescriptor(kernel=(5, 2))
    with pytest.raises(ValidationError):
        NetDescriptor(l_dnn=3)
    with pytest.raises(ValidationError):
        NetDescriptor(conv_ch=60, groups=8)
    with pytest.raises(ValidationError):
        NetDescriptor(erb_strides=[1, 2], erb_lookahead=[1])

    layers = small_descriptor.model_dump()["layers"]
    layers[0]["out_dim"] += 1
    with pytest.raises(ValidationError):
        NetDescriptor(**{**small_descriptor.model_dump(exclude={"layers"}), "layers": layers})


@pytest.mark.parametrize("l_dnn,erb,df", [
    (0, [0, 0, 0, 0], [0, 0]),
    (1, [1, 0, 0, 0], [1, 0]),
    (2, [1, 1, 0, 0], [1, 1]),
    (3, [1, 1, 1, 0], [2, 1]),
])
def test_for_run_spreads_lookahead(l_dnn, erb, df):
    d = NetDescriptor.for_run(n_erb=32, nb_df=101, df_order=5, l_dnn=l_dnn)
    assert d.erb_lookahead == erb
    assert d.df_lookahead == df
    assert d.l_dnn == l_dnn


def test_for_run_rejects_unreachable_lookahead():
    with pytest.raises(ValueError):
        NetDescriptor.for_run(n_erb=32, nb_df=101, df_order=5, l_dnn=5)


def test_forward_output_shapes_and_ranges(small_weights, rng):
    d = small_weights.descriptor
    out = forward(*features(rng, 10, d), small_weights)

    assert out.band_gains.shape == (10, 8)
    assert out.df_coefs.shape == (10, 3, 6)
    assert np.iscomplexobj(out.df_coefs)
    assert out.alpha.shape == (10,)
    assert np.all((out.band_gains >= 0) & (out.band_gains <= 1))
    assert np.all((out.alpha >= 0) & (out.alpha <= 1))
    assert set(out.state.hidden) == {"enc.emb_gru", "df_dec.df_gru"}


def test_forward_reads_at_most_l_dnn_future_frames(small_weights, rng):
    d = small_weights.descriptor
    erb, df = features(rng, 12, d)
    base = forward(erb, df, small_weights)

    erb2, df2 = erb.copy(), df.copy()
    erb2[7] += 5.0
    df2[7] += 5.0
    moved = forward(erb2, df2, small_weights)

    settled = 7 - d.l_dnn
    np.testing.assert_allclose(moved.band_gains[:settled], base.band_gains[:settled], atol=1e-12)
    np.testing.assert_allclose(moved.df_coefs[:settled], base.df_coefs[:settled], atol=1e-12)
    np.testing.assert_allclose(moved.alpha[:settled], base.alpha[:settled], atol=1e-12)
    assert not np.allclose(moved.df_coefs[7], base.df_coefs[7])


def test_forward_carries_recurrent_state(small_weights, rng):
    d = small_weights.descriptor
    erb, df = features(rng, 6, d)
    cold = forward(erb, df, small_weights)
    warm = forward(erb, df, small_weights, state=cold.state)
    assert not np.allclose(cold.alpha, warm.alpha)
    # the caller's state is not mutated
    again = forward(erb, df, small_weights, state=cold.state)
    np.testing.assert_array_equal(warm.alpha, again.alpha)


def test_forward_rejects_wrong_feature_shapes(small_weights, rng):
    d = small_weights.descriptor
    erb, df = features(rng, 5, d)
    with pytest.raises(ConfigurationError):
        forward(erb[:, :7], df, small_weights)
    with pytest.raises(ConfigurationError):
        forward(erb, df[:4], small_weights)


def test_identity_weights_pass_through(small_descriptor, rng):
    weights = NetworkWeights.identity(small_descriptor, df_lookahead=1)
    out = forward(*features(rng, 4, small_descriptor), weights)
    np.testing.assert_allclose(out.band_gains, 1.0)
    np.testing.assert_allclose(out.alpha, 0.5)
    expected = np.zeros((4, 3, 6), dtype=complex)
    expected[:, 1, :] = 1.0
    np.testing.assert_allclose(out.df_coefs, expected)


def test_param_count_matches_stored_tensors():
    d = NetDescriptor()
    report = complexity_report(d)
    stored = sum(int(np.prod(shape)) for _, shape in d.tensor_specs())
    assert report.param_count == stored
    assert report.frames_per_second == pytest.approx(100.0)
    assert report.macs_per_second == pytest.approx(100.0 * report.macs_per_frame)


def test_complexity_scales_with_hop():
    d = NetDescriptor()
    half = complexity_report(d, StftConfig(fft_size=960, hop_size=480))
    quarter = complexity_report(d, StftConfig(fft_size=960, hop_size=240))
    assert quarter.macs_per_second == pytest.approx(2 * half.macs_per_second)


def test_grouping_and_separable_convs_cut_parameters():
    d = NetDescriptor()
    emb = layer_complexity(d.layer("enc.erb_fc_emb"))
    assert emb.dense_params == d.groups * emb.params

    gru = layer_complexity(d.layer("enc.emb_gru"))
    assert gru.params == 3 * (512 * 512 + 512 * 512) // 8

    conv = layer_complexity(d.layer("enc.erb_conv1"))
    assert conv.params == 64 * 6 + 64 * 64 + 64
    assert conv.dense_params == 64 * 64 * 6 + 64
    assert conv.macs_per_frame == d.layer("enc.erb_conv1").freq_bins * (64 * 6 + 64 * 64)


def test_grouped_512_layers_keep_one_eighth_of_dense():
    square = LayerSpec(name="probe", kind="glinear", in_dim=512, out_dim=512, groups=8, bias=False)
    assert layer_complexity(square).params == 32768

    d = NetDescriptor()
    for spec in d.layers:
        if spec.kind == "ggru" and spec.in_dim == spec.out_dim == 512:
            # three gates, each with an input and a recurrent 512x512 matrix
            assert layer_complexity(spec).params == 6 * 32768
