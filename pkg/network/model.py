"""
Forward pass and complexity accounting of the reference network

Encoder: ERB conv blocks and DF conv blocks feed grouped linear embeddings that
are summed and run through a grouped GRU. The ERB decoder mirrors the encoder
with 1x1 pathway add-skips and ends in a sigmoid (band gains). The DF decoder
runs a second grouped GRU, a linear coefficient head plus a 1x1 pathway skip
of the DF input, and a sigmoid alpha head.
"""

import logging
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from services.errors import ConfigurationError
from services.spectral import StftConfig

from .layers import (
    grouped_gru_forward,
    grouped_linear_forward,
    pathway_conv,
    relu,
    separable_conv_forward,
    upsample_freq,
)
from .models import ComplexityReport, LayerComplexity, LayerSpec, NetDescriptor, NetOutputs, NetState
from .weights import NetworkWeights

logger = logging.getLogger(__name__)


def _conv(weights: NetworkWeights, spec: LayerSpec, x: np.ndarray) -> np.ndarray:
    return separable_conv_forward(
        x,
        weights.get(f"{spec.name}.depthwise"),
        weights.get(f"{spec.name}.pointwise"),
        weights.optional(f"{spec.name}.bias"),
        lookahead=spec.lookahead,
        fstride=spec.fstride if spec.kind == "sepconv" else 1,
    )


def _linear(weights: NetworkWeights, name: str, x: np.ndarray) -> np.ndarray:
    return grouped_linear_forward(x, weights.get(f"{name}.weight"), weights.optional(f"{name}.bias"))


def _gru(weights: NetworkWeights, name: str, x: np.ndarray, state: NetState) -> np.ndarray:
    out, state.hidden[name] = grouped_gru_forward(
        x,
        state.hidden.get(name),
        weights.get(f"{name}.weight_ih"),
        weights.get(f"{name}.weight_hh"),
        weights.optional(f"{name}.bias_ih"),
        weights.optional(f"{name}.bias_hh"),
    )
    return out


def _flatten(x: np.ndarray) -> np.ndarray:
    """C x F x T -> T x (C*F)"""
    return x.transpose(2, 0, 1).reshape(x.shape[2], -1)


def forward(
    erb_feats: np.ndarray,
    df_feats: np.ndarray,
    weights: NetworkWeights,
    state: Optional[NetState] = None,
) -> NetOutputs:
    """
    Run the network over a feature sequence

    Output frame t depends on feature frames up to t + l_dnn only. The GRU
    hidden states are carried in `state`; pass the returned state back in to
    continue a stream.

    Args:
        erb_feats: T x n_erb normalized ERB features
        df_feats: T x nb_df normalized complex DF features
        weights: Validated weights
        state: Recurrent state from a previous call, or None for zeros

    Returns:
        NetOutputs with band gains, DF coefficients, alpha and the new state

    Raises:
        ConfigurationError: If the feature shapes do not match the descriptor
    """
    d = weights.descriptor
    erb_feats = np.asarray(erb_feats, dtype=np.float64)
    df_feats = np.asarray(df_feats)
    if erb_feats.ndim != 2 or erb_feats.shape[1] != d.n_erb:
        raise ConfigurationError(f"ERB features must be frames x {d.n_erb}, got {erb_feats.shape}")
    if df_feats.shape != (erb_feats.shape[0], d.nb_df):
        raise ConfigurationError(f"DF features must be {erb_feats.shape[0]} x {d.nb_df}, got {df_feats.shape}")
    state = NetState(hidden=dict(state.hidden)) if state is not None else NetState()
    n_frames = erb_feats.shape[0]
    n_erb_blocks, n_df_blocks = len(d.erb_strides), len(d.df_strides)

    # encoder
    e = erb_feats.T[None]
    skips = []
    for i in range(n_erb_blocks):
        e = relu(_conv(weights, d.layer(f"enc.erb_conv{i}"), e))
        skips.append(e)
    df_in = np.stack([df_feats.real.T, df_feats.imag.T]).astype(np.float64)
    c = df_in
    for j in range(n_df_blocks):
        c = relu(_conv(weights, d.layer(f"enc.df_conv{j}"), c))

    emb = relu(_linear(weights, "enc.erb_fc_emb", _flatten(e))) + relu(_linear(weights, "enc.df_fc_emb", _flatten(c)))
    emb = _gru(weights, "enc.emb_gru", emb, state)

    # ERB decoder
    erb_freqs = d.erb_freqs()
    g = relu(_linear(weights, "erb_dec.fc_emb", emb))
    g = g.reshape(n_frames, d.conv_ch, erb_freqs[-1]).transpose(1, 2, 0)
    for i in reversed(range(n_erb_blocks)):
        p = d.layer(f"erb_dec.pconv{i}")
        g = g + pathway_conv(skips[i], weights.get(f"{p.name}.weight"), weights.optional(f"{p.name}.bias"))
        up = d.layer(f"erb_dec.conv{i}")
        g = _conv(weights, up, upsample_freq(g, up.fstride, up.freq_bins))
        g = relu(g) if i > 0 else expit(g)
    band_gains = g[0].T

    # DF decoder
    h = _gru(weights, "df_dec.df_gru", emb, state)
    coefs = _linear(weights, "df_dec.df_out", h).reshape(n_frames, d.df_order, d.nb_df, 2)
    skip = pathway_conv(df_in, weights.get("df_dec.df_convp.weight"), weights.optional("df_dec.df_convp.bias"))
    coefs = coefs + skip.reshape(d.df_order, 2, d.nb_df, n_frames).transpose(3, 0, 2, 1)
    alpha = expit(_linear(weights, "df_dec.alpha", h))[:, 0]

    return NetOutputs(
        band_gains=band_gains,
        df_coefs=coefs[..., 0] + 1j * coefs[..., 1],
        alpha=alpha,
        state=state,
    )


def layer_complexity(spec: LayerSpec, kernel=(3, 2)) -> LayerComplexity:
    """Parameters, dense-equivalent parameters and per-frame MACs of one layer"""
    kf, kt = kernel
    bias = spec.out_dim if spec.bias else 0
    if spec.kind in ("sepconv", "upconv"):
        weights = spec.in_dim * kf * kt + spec.out_dim * spec.in_dim
        dense = spec.out_dim * spec.in_dim * kf * kt
        macs = spec.freq_bins * weights
    elif spec.kind == "pconv":
        weights = dense = spec.out_dim * spec.in_dim
        macs = spec.freq_bins * weights
    elif spec.kind == "glinear":
        weights = spec.in_dim * spec.out_dim // spec.groups
        dense = spec.in_dim * spec.out_dim
        macs = weights
    else:
        weights = 3 * (spec.in_dim * spec.out_dim + spec.out_dim * spec.out_dim) // spec.groups
        dense = 3 * (spec.in_dim * spec.out_dim + spec.out_dim * spec.out_dim)
        bias = 6 * spec.out_dim if spec.bias else 0
        macs = weights
    return LayerComplexity(
        name=spec.name,
        kind=spec.kind,
        params=weights + bias,
        dense_params=dense + bias,
        macs_per_frame=macs,
    )


def complexity_report(
    weights: Union[NetworkWeights, NetDescriptor],
    stft_config: Optional[StftConfig] = None,
) -> ComplexityReport:
    """
    Exact parameter count and multiply-accumulates per second

    Batch-norm statistics are not counted (they fold into the convs).
    MACs/s = per-frame MACs x sample_rate / hop_size.
    """
    d = weights.descriptor if isinstance(weights, NetworkWeights) else weights
    stft_config = stft_config or StftConfig()
    layers = [layer_complexity(spec, d.kernel) for spec in d.layers]
    macs_per_frame = sum(l.macs_per_frame for l in layers)
    fps = stft_config.sample_rate / stft_config.hop_size
    return ComplexityReport(
        param_count=sum(l.params for l in layers),
        macs_per_frame=macs_per_frame,
        frames_per_second=fps,
        macs_per_second=macs_per_frame * fps,
        layers=layers,
    )
