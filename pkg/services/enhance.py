"""
Two-stage enhancement: ERB gains (stage 1) then deep filtering with alpha blend (stage 2)

Deep filtering runs on the gain-enhanced spectrogram Y^G for the first nb_df
bins only; higher bins keep Y^G. The streaming pipeline emits frame t once
input frame t + max(l_dnn, l_df) has been analyzed, so the output is delayed
by (fft - hop) + max(l_dnn, l_df) * hop samples.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.signal

from network import NetworkWeights, forward, load_weights

from .audio_io import read_wav, write_wav
from .erb import apply_inverse_fb, build_erb_fb
from .errors import ConfigurationError, ContractViolation
from .features import NormState, df_feat, erb_feat, smoothing_coef
from .models import RunConfig
from .spectral import (
    AnalysisState,
    SynthesisState,
    algorithmic_delay,
    analyze_frame,
    latency,
    synthesize_frame,
)

logger = logging.getLogger(__name__)


@dataclass
class DfCoefficients:
    """Complex filter taps C(k, i, f): frames x order x nb_df"""

    coefs: np.ndarray
    lookahead: int = 0

    def __post_init__(self):
        if self.coefs.ndim != 3:
            raise ContractViolation(f"coefs must be frames x order x nb_df, got shape {self.coefs.shape}")
        if not 0 <= self.lookahead < self.order:
            raise ContractViolation(f"lookahead must lie in [0, {self.order}), got {self.lookahead}")

    @property
    def order(self) -> int:
        return self.coefs.shape[1]

    @property
    def nb_df(self) -> int:
        return self.coefs.shape[2]

    @property
    def n_frames(self) -> int:
        return self.coefs.shape[0]


@dataclass
class AlphaTrack:
    """Per-frame blend weights in [0, 1]"""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.ndim != 1 or np.any(a < 0) or np.any(a > 1):
            raise ContractViolation("alpha must be a per-frame vector within [0, 1]")
        self.alpha = a


def apply_gains(spectrum: np.ndarray, bin_gains: np.ndarray) -> np.ndarray:
    """Stage 1: Y^G = X * G per bin (phase unchanged)"""
    spectrum, bin_gains = np.asarray(spectrum), np.asarray(bin_gains)
    if spectrum.shape[-1] != bin_gains.shape[-1]:
        raise ContractViolation(f"apply_gains got {spectrum.shape[-1]} bins and {bin_gains.shape[-1]} gains")
    return spectrum * bin_gains


def apply_df(frame_buffer: np.ndarray, coefs_k: np.ndarray, lookahead: int) -> np.ndarray:
    """
    Deep filter one frame: Y(k, f) = sum_i C(k, i, f) * X(k - i + l, f)

    Args:
        frame_buffer: order x nb_df frames k-N+1+l ... k+l, oldest first
        coefs_k: order x nb_df complex taps for frame k
        lookahead: l in frames

    Returns:
        nb_df complex bins

    Raises:
        ContractViolation: If the buffer does not hold `order` frames
    """
    frame_buffer, coefs_k = np.asarray(frame_buffer), np.asarray(coefs_k)
    order = coefs_k.shape[0]
    if frame_buffer.shape != coefs_k.shape:
        raise ContractViolation(
            f"apply_df needs {order} buffered frames of {coefs_k.shape[1]} bins, got {frame_buffer.shape}"
        )
    if not 0 <= lookahead < order:
        raise ContractViolation(f"lookahead must lie in [0, {order}), got {lookahead}")
    # buffer row N-1-i holds X(k - i + l)
    return np.sum(coefs_k * frame_buffer[::-1], axis=0)


def df_filter(spec: np.ndarray, coefs: DfCoefficients) -> np.ndarray:
    """
    Apply deep filtering to a whole frames x bins matrix

    Only the first nb_df bins are filtered, the rest is returned unchanged.
    Frames outside the signal count as zeros.
    """
    spec = np.asarray(spec)
    n_frames, nb_df, order, la = spec.shape[0], coefs.nb_df, coefs.order, coefs.lookahead
    if coefs.n_frames != n_frames:
        raise ContractViolation(f"{coefs.n_frames} coefficient frames for {n_frames} spectrum frames")

    low = spec[:, :nb_df]
    padded = np.concatenate([np.zeros((order - 1 - la, nb_df), low.dtype), low, np.zeros((la, nb_df), low.dtype)])
    out = spec.astype(np.complex128, copy=True)
    filtered = np.zeros((n_frames, nb_df), dtype=np.complex128)
    for i in range(order):
        # X(k - i + l) sits at padded row k + order - 1 - i
        filtered += coefs.coefs[:, i, :] * padded[order - 1 - i:order - 1 - i + n_frames]
    out[:, :nb_df] = filtered
    return out


def blend(y_df: np.ndarray, y_g: np.ndarray, alpha_k: float) -> np.ndarray:
    """Y^DF = alpha * Y^DF' + (1 - alpha) * Y^G"""
    if not 0.0 <= alpha_k <= 1.0:
        raise ContractViolation(f"alpha must lie in [0, 1], got {alpha_k}")
    return alpha_k * np.asarray(y_df) + (1.0 - alpha_k) * np.asarray(y_g)


def clamp_gains(bin_gains: np.ndarray, max_atten_db: Optional[float]) -> np.ndarray:
    """Raise every gain to at least 10^(-max_atten_db/20); None means unlimited"""
    if max_atten_db is None:
        return np.asarray(bin_gains)
    if max_atten_db < 0:
        raise ContractViolation(f"max_atten_db must be >= 0, got {max_atten_db}")
    return np.maximum(bin_gains, 10.0 ** (-max_atten_db / 20.0))


def check_compatible(weights: NetworkWeights, config: RunConfig) -> None:
    """
    Raise ConfigurationError when the network was built for another setup

    Raises:
        ConfigurationError: On any mismatch of bands, DF bins, order or lookahead
    """
    d = weights.descriptor
    expected = {
        "n_erb": config.n_erb,
        "nb_df": config.nb_df,
        "df_order": config.df_order,
        "l_dnn": config.l_dnn,
    }
    actual = {"n_erb": d.n_erb, "nb_df": d.nb_df, "df_order": d.df_order, "l_dnn": d.l_dnn}
    mismatches = [f"{k}: weights {actual[k]} vs config {v}" for k, v in expected.items() if actual[k] != v]
    if mismatches:
        raise ConfigurationError("Weights incompatible with configuration (" + "; ".join(mismatches) + ")")


@dataclass
class EnhanceResult:
    samples: np.ndarray
    sample_rate: int
    delay_samples: int
    latency_ms: float


def enhance_stream(noisy: np.ndarray, weights: NetworkWeights, config: RunConfig) -> EnhanceResult:
    """
    Enhance a signal: STFT -> features -> net -> gains -> DF -> blend -> ISTFT

    Output has the input's length and is delayed by `delay_samples`.
    DF taps newer than the latest available gain estimate reuse that estimate.

    Args:
        noisy: Input samples at config.sample_rate
        weights: Validated network weights
        config: Run configuration

    Returns:
        EnhanceResult with the delayed enhanced signal

    Raises:
        ConfigurationError: If the weights do not fit the configuration
    """
    check_compatible(weights, config)
    stft_cfg = config.stft_config()
    hop, nb_df, order, l_df, l_dnn = stft_cfg.hop_size, config.nb_df, config.df_order, config.l_df, config.l_dnn
    fb = build_erb_fb(config.sample_rate, config.fft_size, config.n_erb, config.min_bins_per_band)
    norm_alpha = smoothing_coef(config.norm_decay, hop, config.sample_rate)

    noisy = np.asarray(noisy, dtype=np.float64)
    n_samples = len(noisy)
    n_frames = max(1, int(np.ceil(n_samples / hop)))
    x = np.pad(noisy, (0, n_frames * hop - n_samples))

    analysis = AnalysisState(stft_cfg)
    erb_state, df_state = NormState(alpha=norm_alpha), NormState(alpha=norm_alpha)
    spec = np.empty((n_frames, stft_cfg.n_bins), dtype=np.complex128)
    erb_in = np.empty((n_frames, config.n_erb))
    df_in = np.empty((n_frames, nb_df), dtype=np.complex128)
    for j in range(n_frames):
        spec[j] = analyze_frame(analysis, x[j * hop:(j + 1) * hop])
        erb_in[j] = erb_feat(spec[j], fb, erb_state)
        df_in[j] = df_feat(spec[j, :nb_df], df_state)

    # lookahead is bounded by the network's causal structure, so the output for frame t only reads frames <= t + l_dnn
    net = forward(erb_in, df_in, weights)
    bin_gains = clamp_gains(apply_inverse_fb(net.band_gains, fb), config.atten_limit)

    total_la = max(l_dnn, l_df)
    synthesis = SynthesisState(stft_cfg)
    out = np.empty(n_frames * hop)
    for j in range(n_frames):
        t = j - total_la
        if t < 0:
            frame = np.zeros(stft_cfg.n_bins, dtype=np.complex128)
        else:
            newest_gain = j - l_dnn
            taps = np.zeros((order, nb_df), dtype=np.complex128)
            for row, tf in enumerate(range(t - order + 1 + l_df, t + l_df + 1)):
                if tf >= 0:
                    taps[row] = apply_gains(spec[tf, :nb_df], bin_gains[min(tf, newest_gain), :nb_df])
            frame = apply_gains(spec[t], bin_gains[t])
            y_df = apply_df(taps, net.df_coefs[t], l_df)
            frame[:nb_df] = blend(y_df, frame[:nb_df], float(net.alpha[t]))
        out[j * hop:(j + 1) * hop] = synthesize_frame(synthesis, frame)

    return EnhanceResult(
        samples=out[:n_samples],
        sample_rate=config.sample_rate,
        delay_samples=algorithmic_delay(stft_cfg, l_dnn, l_df),
        latency_ms=latency(stft_cfg, l_dnn, l_df),
    )


def enhance_file(
    input_path: Union[str, Path],
    output_path: Union[str, Path],
    weights: Union[NetworkWeights, str, Path],
    config: RunConfig,
    compensate_delay: bool = False,
) -> EnhanceResult:
    """
    Enhance a WAV file and write the result

    Input at another sample rate is resampled to the model rate first.
    With compensate_delay the algorithmic delay is removed from the file.
    """
    if not isinstance(weights, NetworkWeights):
        weights = load_weights(weights)

    noisy, sample_rate = read_wav(input_path)
    if sample_rate != config.sample_rate:
        logger.warning(f"⚠️ Resampling {input_path} from {sample_rate} Hz to {config.sample_rate} Hz")
        g = np.gcd(sample_rate, config.sample_rate)
        noisy = scipy.signal.resample_poly(noisy, config.sample_rate // g, sample_rate // g)

    result = enhance_stream(noisy, weights, config)
    samples = result.samples
    if compensate_delay:
        samples = np.concatenate([samples[result.delay_samples:], np.zeros(min(result.delay_samples, len(samples)))])

    write_wav(output_path, samples, config.sample_rate)
    logger.info(f"✓ Enhanced {input_path} -> {output_path} (latency {result.latency_ms:.1f} ms)")
    return result
