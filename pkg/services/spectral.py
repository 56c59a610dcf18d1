"""
Streaming STFT analysis/synthesis with weighted overlap-add

Conventions:
- Forward FFT unnormalized, inverse scaled by 1/fft_size (scipy.fft defaults).
- Square-root Hann analysis window; the synthesis window is the analysis
  window divided by the overlap-summed squared window, so analyze followed by
  synthesize is a pure delay of fft_size - hop_size samples.
- Streaming frame j covers samples [(j+1)*hop - fft, (j+1)*hop); offline
  frame k covers [k*hop, k*hop + fft) of the signal handed to `stft`.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import scipy.fft
import scipy.signal
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ContractViolation

COLA_TOLERANCE = 1e-10
MIN_WINDOW_MS = 5.0
MAX_WINDOW_MS = 30.0


class StftConfig(BaseModel):
    """Immutable STFT configuration, shareable across streams"""

    model_config = ConfigDict(frozen=True)

    sample_rate: int = Field(48000, gt=0, description="Sample rate in Hz")
    fft_size: int = Field(960, gt=0, description="Window length N_FFT in samples")
    hop_size: int = Field(480, gt=0, description="Frame advance in samples")
    custom_window: Optional[Tuple[float, ...]] = Field(
        None, description="Analysis window override; square-root Hann when omitted"
    )

    @model_validator(mode="after")
    def check_geometry(self):
        if self.fft_size % 2:
            raise ValueError(f"fft_size must be even, got {self.fft_size}")
        if self.fft_size % self.hop_size or self.fft_size // self.hop_size not in (2, 4):
            raise ValueError(
                f"hop_size {self.hop_size} must be fft_size/2 or fft_size/4 (50% or 75% overlap)"
            )
        duration_ms = 1000.0 * self.fft_size / self.sample_rate
        if not MIN_WINDOW_MS - 1e-9 <= duration_ms <= MAX_WINDOW_MS + 1e-9:
            raise ValueError(
                f"fft_size {self.fft_size} is {duration_ms:.2f} ms at {self.sample_rate} Hz; "
                f"expected {MIN_WINDOW_MS:g}-{MAX_WINDOW_MS:g} ms"
            )
        if self.custom_window is not None and len(self.custom_window) != self.fft_size:
            raise ValueError(
                f"custom_window has {len(self.custom_window)} samples, expected {self.fft_size}"
            )
        if not check_cola(self.window, self.hop_size):
            raise ValueError("window does not satisfy constant overlap-add for this hop")
        return self

    @classmethod
    def from_overlap(cls, sample_rate: int, fft_size: int, overlap: int = 50) -> "StftConfig":
        """Build a config from an overlap percentage (50 or 75)"""
        if overlap not in (50, 75):
            raise ValueError(f"overlap must be 50 or 75, got {overlap}")
        return cls(sample_rate=sample_rate, fft_size=fft_size, hop_size=fft_size * (100 - overlap) // 100)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def overlap(self) -> float:
        return 1.0 - self.hop_size / self.fft_size

    @property
    def hop_ms(self) -> float:
        return 1000.0 * self.hop_size / self.sample_rate

    @property
    def window_ms(self) -> float:
        return 1000.0 * self.fft_size / self.sample_rate

    @property
    def window(self) -> np.ndarray:
        return _analysis_window(self.fft_size, self.custom_window)

    @property
    def synthesis_window(self) -> np.ndarray:
        return _synthesis_window(self.fft_size, self.hop_size, self.custom_window)


@lru_cache(maxsize=64)
def _analysis_window(fft_size: int, custom_window: Optional[Tuple[float, ...]]) -> np.ndarray:
    if custom_window is not None:
        w = np.asarray(custom_window, dtype=np.float64)
    else:
        w = np.sqrt(scipy.signal.get_window("hann", fft_size, fftbins=True))
    w.flags.writeable = False
    return w


@lru_cache(maxsize=64)
def _synthesis_window(fft_size: int, hop_size: int, custom_window: Optional[Tuple[float, ...]]) -> np.ndarray:
    w = _analysis_window(fft_size, custom_window)
    ws = w / _overlap_sum(w * w, hop_size)
    ws.flags.writeable = False
    return ws


def _overlap_sum(w2: np.ndarray, hop: int) -> float:
    return float(w2.reshape(-1, hop).sum(axis=0).mean())


def check_cola(window: np.ndarray, hop: int, tol: float = COLA_TOLERANCE) -> bool:
    """
    Check that the squared window overlap-adds to a constant for the given hop

    Uses scipy.signal.check_COLA on w^2 with a tolerance relative to the
    overlap-summed level.
    """
    w2 = np.asarray(window, dtype=np.float64) ** 2
    level = _overlap_sum(w2, hop)
    if level <= 0:
        return False
    return bool(scipy.signal.check_COLA(w2 / level, len(w2), len(w2) - hop, tol=tol))


@dataclass
class Spectrogram:
    """Complex frames x bins matrix with the config that produced it"""

    data: np.ndarray
    config: StftConfig
    n_samples: Optional[int] = None
    padded: bool = False

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != self.config.n_bins:
            raise ContractViolation(
                f"Spectrogram data must be frames x {self.config.n_bins}, got {self.data.shape}"
            )

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return Spectrogram(data=data, config=self.config, n_samples=self.n_samples, padded=self.padded)


@dataclass
class AnalysisState:
    """Per-stream analysis state: the previous fft_size - hop_size input samples"""

    config: StftConfig
    buffer: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.buffer is None:
            self.buffer = np.zeros(self.config.fft_size - self.config.hop_size)


@dataclass
class SynthesisState:
    """Per-stream synthesis state: the overlap-add accumulator"""

    config: StftConfig
    accumulator: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.accumulator is None:
            self.accumulator = np.zeros(self.config.fft_size)


def analyze_frame(state: AnalysisState, samples: np.ndarray) -> np.ndarray:
    """
    Consume one hop of input and return the windowed FFT of the current buffer

    Args:
        state: Stream state, advanced in place by hop_size samples
        samples: Exactly hop_size new samples

    Returns:
        Complex vector of fft_size/2 + 1 bins

    Raises:
        ContractViolation: If the sample count is not hop_size
    """
    cfg = state.config
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape != (cfg.hop_size,):
        raise ContractViolation(f"analyze_frame expects {cfg.hop_size} samples, got {samples.shape}")

    frame = np.concatenate([state.buffer, samples])
    state.buffer = frame[cfg.hop_size:].copy()
    return scipy.fft.rfft(frame * cfg.window)


def synthesize_frame(state: SynthesisState, bins: np.ndarray) -> np.ndarray:
    """
    Overlap-add one frame and emit the next hop of output samples

    Args:
        state: Stream state, advanced in place
        bins: fft_size/2 + 1 complex bins

    Returns:
        hop_size time samples

    Raises:
        ContractViolation: If the bin count is wrong
    """
    cfg = state.config
    bins = np.asarray(bins)
    if bins.shape != (cfg.n_bins,):
        raise ContractViolation(f"synthesize_frame expects {cfg.n_bins} bins, got {bins.shape}")

    hop = cfg.hop_size
    state.accumulator += scipy.fft.irfft(bins, n=cfg.fft_size) * cfg.synthesis_window
    out = state.accumulator[:hop].copy()
    state.accumulator[:-hop] = state.accumulator[hop:]
    state.accumulator[-hop:] = 0.0
    return out


def stft(signal: np.ndarray, config: StftConfig, pad: bool = False) -> Spectrogram:
    """
    Offline STFT of a whole signal

    The tail is zero-padded to a whole number of hops. With pad=True,
    fft_size - hop_size zeros are added at both ends so every input sample is
    covered by a full set of overlapping frames; `istft` removes them again.
    """
    x = np.asarray(signal, dtype=np.float64)
    n_samples = len(x)
    fft, hop = config.fft_size, config.hop_size
    if pad:
        edge = np.zeros(fft - hop)
        x = np.concatenate([edge, x, edge])
    n_frames = max(1, int(np.ceil((len(x) - fft) / hop)) + 1)
    total = (n_frames - 1) * hop + fft
    x = np.pad(x, (0, total - len(x)))

    frames = np.lib.stride_tricks.sliding_window_view(x, fft)[::hop]
    data = scipy.fft.rfft(frames * config.window, axis=-1)
    return Spectrogram(data=data, config=config, n_samples=n_samples, padded=pad)


def istft(spec: Spectrogram, length: Optional[int] = None) -> np.ndarray:
    """Weighted overlap-add inverse of `stft`"""
    cfg = spec.config
    fft, hop = cfg.fft_size, cfg.hop_size
    frames = scipy.fft.irfft(spec.data, n=fft, axis=-1) * cfg.synthesis_window

    out = np.zeros((spec.n_frames - 1) * hop + fft)
    for k, frame in enumerate(frames):
        out[k * hop:k * hop + fft] += frame

    if spec.padded:
        out = out[fft - hop:]
    if length is None:
        length = spec.n_samples if spec.n_samples is not None else len(out)
    return np.pad(out, (0, max(0, length - len(out))))[:length]


def frame_energy(bins: np.ndarray, fft_size: int) -> float:
    """Time-domain energy of the windowed frame behind a one-sided spectrum (Parseval)"""
    power = np.abs(np.asarray(bins)) ** 2
    return float((power[0] + power[-1] + 2.0 * power[1:-1].sum()) / fft_size)


def algorithmic_delay(config: StftConfig, l_dnn: int = 0, l_df: int = 0) -> int:
    """Output delay of the streaming pipeline in samples"""
    if l_dnn < 0 or l_df < 0:
        raise ContractViolation(f"lookaheads must be >= 0, got l_dnn={l_dnn}, l_df={l_df}")
    return config.fft_size - config.hop_size + max(l_dnn, l_df) * config.hop_size


def latency(config: StftConfig, l_dnn: int = 0, l_df: int = 0) -> float:
    """
    Overall latency in milliseconds: window duration plus max(l_dnn, l_df) hops

    Lookaheads are counted in hops. The window term includes the one hop of
    input that must be buffered before a frame can be analyzed.
    """
    if l_dnn < 0 or l_df < 0:
        raise ContractViolation(f"lookaheads must be >= 0, got l_dnn={l_dnn}, l_df={l_df}")
    return config.window_ms + max(l_dnn, l_df) * config.hop_ms
