"""
Tests for the weight container, the DFNW file format and batch-norm folding
"""

import json
import struct

import numpy as np
import pytest

from network import NetDescriptor, NetworkWeights, fold_batch_norm, load_weights, save_weights
from network.layers import separable_conv_forward
from network.weights import BN_EPS, MAGIC
from services.errors import ConfigurationError


def test_save_load_round_trip(small_weights, tmp_path):
    path = save_weights(small_weights, tmp_path / "net.dfnw")
    loaded = load_weights(path)

    assert loaded.descriptor == small_weights.descriptor
    assert set(loaded.tensors) == set(small_weights.tensors)
    for name, t in small_weights.tensors.items():
        np.testing.assert_array_equal(loaded.tensors[name], t)
    assert not list(tmp_path.glob("*.tmp"))


def test_tensors_are_read_only_float32(small_weights):
    t = small_weights.tensors["enc.emb_gru.weight_ih"]
    assert t.dtype == np.float32
    with pytest.raises(ValueError):
        t[0, 0, 0, 0] = 1.0


def test_random_init_is_seeded(small_descriptor):
    a = NetworkWeights.init_random(small_descriptor, seed=3)
    b = NetworkWeights.init_random(small_descriptor, seed=3)
    c = NetworkWeights.init_random(small_descriptor, seed=4)
    name = "df_dec.df_out.weight"
    np.testing.assert_array_equal(a.tensors[name], b.tensors[name])
    assert not np.array_equal(a.tensors[name], c.tensors[name])


def test_validation_catches_missing_misshaped_and_non_finite(small_descriptor):
    good = {k: np.array(v) for k, v in NetworkWeights.zeros(small_descriptor).tensors.items()}

    missing = dict(good)
    missing.pop("enc.erb_conv0.depthwise")
    with pytest.raises(ConfigurationError, match="missing"):
        NetworkWeights(small_descriptor, missing)

    extra = {**good, "enc.extra.weight": np.zeros(3)}
    with pytest.raises(ConfigurationError, match="unexpected"):
        NetworkWeights(small_descriptor, extra)

    misshaped = {**good, "df_dec.alpha.bias": np.zeros(2)}
    with pytest.raises(ConfigurationError, match="shape"):
        NetworkWeights(small_descriptor, misshaped)

    nan = {**good, "df_dec.alpha.bias": np.array([np.nan])}
    with pytest.raises(ConfigurationError, match="non-finite"):
        NetworkWeights(small_descriptor, nan)


def test_identity_lookahead_must_fit_order(small_descriptor):
    with pytest.raises(ConfigurationError):
        NetworkWeights.identity(small_descriptor, df_lookahead=3)


def read_parts(path):
    raw = path.read_bytes()
    magic, version, header_len = struct.unpack_from("<4sII", raw)
    header = json.loads(raw[12:12 + header_len])
    return raw, header, header_len


def test_corrupt_files_are_configuration_errors(small_weights, tmp_path):
    path = save_weights(small_weights, tmp_path / "net.dfnw")
    raw, header, header_len = read_parts(path)

    cases = {
        "missing.dfnw": None,
        "short.dfnw": raw[:6],
        "magic.dfnw": b"XXXX" + raw[4:],
        "version.dfnw": raw[:4] + struct.pack("<I", 99) + raw[8:],
        "truncated.dfnw": raw[:-4],
        "json.dfnw": raw[:12] + b"{" * header_len + raw[12 + header_len:],
    }
    for name, content in cases.items():
        target = tmp_path / name
        if content is not None:
            target.write_bytes(content)
        with pytest.raises(ConfigurationError):
            load_weights(target)


def test_declared_tensor_list_must_match_descriptor(small_weights, tmp_path):
    path = save_weights(small_weights, tmp_path / "net.dfnw")
    raw, header, header_len = read_parts(path)
    header["tensors"] = header["tensors"][:-1]
    body = json.dumps(header).encode()
    bad = tmp_path / "list.dfnw"
    bad.write_bytes(MAGIC + struct.pack("<II", 1, len(body)) + body + raw[12 + header_len:])
    with pytest.raises(ConfigurationError, match="tensor list"):
        load_weights(bad)


def test_fold_batch_norm_matches_conv_then_norm(rng):
    d = NetDescriptor(n_erb=8, nb_df=6, df_order=3, conv_ch=4, groups=2, emb_dim=8, batch_norm=True)
    tensors = {k: np.array(v) for k, v in NetworkWeights.init_random(d, seed=1).tensors.items()}
    for name in tensors:
        if name.endswith((".bn_gamma", ".bn_var")):
            tensors[name] = rng.uniform(0.5, 2.0, tensors[name].shape)
        elif name.endswith((".bn_beta", ".bn_mean", ".bias")):
            tensors[name] = rng.standard_normal(tensors[name].shape)
    weights = NetworkWeights(d, tensors)
    folded = fold_batch_norm(weights)

    assert folded.descriptor.batch_norm is False
    assert not any(".bn_" in name for name in folded.tensors)

    n = "enc.erb_conv1"
    x = rng.standard_normal((4, 8, 5))
    raw = separable_conv_forward(x, weights.get(f"{n}.depthwise"), weights.get(f"{n}.pointwise"), weights.get(f"{n}.bias"))
    g, b = weights.get(f"{n}.bn_gamma"), weights.get(f"{n}.bn_beta")
    m, v = weights.get(f"{n}.bn_mean"), weights.get(f"{n}.bn_var")
    expected = (raw - m[:, None, None]) / np.sqrt(v[:, None, None] + BN_EPS) * g[:, None, None] + b[:, None, None]

    got = separable_conv_forward(x, folded.get(f"{n}.depthwise"), folded.get(f"{n}.pointwise"), folded.get(f"{n}.bias"))
    np.testing.assert_allclose(got, expected, rtol=1e-4, atol=1e-4)


def test_load_folds_batch_norm_by_default(tmp_path):
    d = NetDescriptor(n_erb=8, nb_df=6, df_order=3, conv_ch=4, groups=2, emb_dim=8, batch_norm=True)
    path = save_weights(NetworkWeights.init_random(d, seed=2), tmp_path / "bn.dfnw")
    assert load_weights(path).descriptor.batch_norm is False
    assert load_weights(path, fold_bn=False).descriptor.batch_norm is True
