"""
Pydantic models for run configuration and the records the services exchange
"""

import csv
import io
import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .spectral import StftConfig

SNR_SET_DB = (-5.0, 0.0, 5.0, 10.0, 20.0, 40.0)
GAIN_SET_DB = (-6.0, 0.0, 6.0)
MAX_NOISES = 5
ATTEN_EXTRA_RANGE_DB = (6.0, 20.0)


def parse_atten_limit(value: Any) -> Optional[float]:
    """'off'/'none'/'' mean unlimited; anything else is a dB value"""
    if value is None:
        return None
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("", "off", "none", "unlimited"):
            return None
        return float(text)
    return float(value)


class RunConfig(BaseModel):
    """Run parameters shared by every subcommand; defaults are the reference setup"""

    sample_rate: int = Field(48000, gt=0, description="Model sample rate in Hz")
    fft_size: int = Field(960, gt=0, description="STFT window in samples")
    overlap: int = Field(50, description="STFT overlap in percent (50 or 75)")
    n_erb: int = Field(32, gt=0, description="Number of ERB bands")
    f_df: float = Field(5000.0, gt=0, description="Upper frequency of deep filtering in Hz")
    df_order: int = Field(5, ge=1, description="Deep filter order N")
    l_df: int = Field(1, ge=0, description="Deep filter lookahead in frames")
    l_dnn: int = Field(2, ge=0, description="Network lookahead in frames")
    atten_limit: Optional[float] = Field(None, description="Attenuation limit in dB; None is unlimited")
    seed: int = Field(42, description="Seed for every random draw")
    min_bins_per_band: int = Field(2, ge=1, description="Minimum ERB band width in bins")
    norm_decay: float = Field(1.0, gt=0, description="Feature normalization decay in seconds")

    @field_validator("atten_limit", mode="before")
    @classmethod
    def validate_atten_limit(cls, v):
        v = parse_atten_limit(v)
        if v is not None and v < 0:
            raise ValueError(f"atten_limit must be >= 0 dB or off, got {v}")
        return v

    @field_validator("overlap")
    @classmethod
    def validate_overlap(cls, v):
        if v not in (50, 75):
            raise ValueError(f"overlap must be 50 or 75, got {v}")
        return v

    @model_validator(mode="after")
    def check_combination(self):
        if self.l_df >= self.df_order:
            raise ValueError(f"l_df ({self.l_df}) must be smaller than df_order ({self.df_order})")
        if self.f_df > self.sample_rate / 2:
            raise ValueError(f"f_df ({self.f_df} Hz) exceeds Nyquist ({self.sample_rate / 2} Hz)")
        try:
            self.stft_config()
        except ValueError as e:
            raise ValueError(f"invalid STFT geometry: {e}") from e
        return self

    @property
    def hop_size(self) -> int:
        return self.fft_size * (100 - self.overlap) // 100

    @property
    def nb_df(self) -> int:
        return nb_df_bins(self.f_df, self.fft_size, self.sample_rate)

    def stft_config(self) -> StftConfig:
        return StftConfig.from_overlap(self.sample_rate, self.fft_size, self.overlap)


def nb_df_bins(f_df: float, fft_size: int, sample_rate: int) -> int:
    """Number of bins up to and including f_df"""
    return int(math.floor(f_df * fft_size / sample_rate)) + 1


class LossConfig(BaseModel):
    """Weights and thresholds of the training objective"""

    model_config = ConfigDict(frozen=True)

    c: float = Field(0.6, description="Magnitude compression exponent")
    lambda_spec: float = Field(1.0, ge=0)
    lambda_alpha: float = Field(0.05, ge=0)
    lsnr_lo: float = Field(-10.0, description="Below this LSNR alpha is pushed to 0 (dB)")
    lsnr_hi: float = Field(-5.0, description="Above this LSNR alpha is pushed to 1 (dB)")
    lsnr_window_ms: float = Field(20.0, gt=0)
    f_df: float = Field(5000.0, gt=0)

    @field_validator("c")
    @classmethod
    def validate_c(cls, v):
        if not 0 < v <= 1:
            raise ValueError(f"compression c must lie in (0, 1], got {v}")
        return v

    @model_validator(mode="after")
    def check_thresholds(self):
        if self.lsnr_lo >= self.lsnr_hi:
            raise ValueError(f"lsnr_lo ({self.lsnr_lo}) must be below lsnr_hi ({self.lsnr_hi})")
        return self


class ManifestEntry(BaseModel):
    """One row of a synthesis manifest (JSON lines)"""

    speech: str
    noises: List[str] = Field(..., min_length=1, max_length=MAX_NOISES)
    rir: Optional[str] = None
    seed: Optional[int] = None


class BiquadParams(BaseModel):
    """Second-order IIR section, b and a with a[0] == 1"""

    b: Tuple[float, float, float]
    a: Tuple[float, float, float]


class EqBand(BaseModel):
    """Peaking EQ band"""

    freq_hz: float = Field(..., gt=0)
    gain_db: float = Field(..., ge=-6.0, le=6.0)
    q: float = Field(..., gt=0)


class AugmentSpec(BaseModel):
    """Seeded recipe for one (noisy, clean, target) triple"""

    index: int
    seed: int
    sample_rate: int
    speech: str
    noises: List[str] = Field(..., min_length=1, max_length=MAX_NOISES)
    snr_db: float
    speech_gain_db: float = 0.0
    noise_gains_db: List[float] = Field(default_factory=list)
    speech_filter: Optional[BiquadParams] = None
    noise_filters: List[Optional[BiquadParams]] = Field(default_factory=list)
    speech_eq: List[EqBand] = Field(default_factory=list)
    resample_ratio: float = Field(1.0, ge=0.9, le=1.1)
    rir: Optional[str] = None
    speech_bandwidth_hz: Optional[float] = None
    atten_extra_db: Optional[float] = None
    noisy_file: Optional[str] = None
    clean_file: Optional[str] = None
    target_file: Optional[str] = None

    @field_validator("speech_gain_db")
    @classmethod
    def validate_speech_gain(cls, v):
        if v not in GAIN_SET_DB:
            raise ValueError(f"gain {v} dB not in {GAIN_SET_DB}")
        return v

    @field_validator("noise_gains_db")
    @classmethod
    def validate_noise_gains(cls, v):
        for g in v:
            if g not in GAIN_SET_DB:
                raise ValueError(f"gain {g} dB not in {GAIN_SET_DB}")
        return v

    @field_validator("atten_extra_db")
    @classmethod
    def validate_extra(cls, v):
        lo, hi = ATTEN_EXTRA_RANGE_DB
        if v is not None and not lo <= v <= hi:
            raise ValueError(f"atten_extra_db must lie in [{lo}, {hi}], got {v}")
        return v


class OracleMethod(BaseModel):
    """An oracle estimator: DF(order, lookahead) or CRM (order 1, lookahead 0)"""

    model_config = ConfigDict(frozen=True)

    name: Literal["DF", "CRM"]
    order: int = Field(1, ge=1)
    lookahead: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_shape(self):
        if self.name == "CRM" and (self.order, self.lookahead) != (1, 0):
            raise ValueError("CRM is order 1 with lookahead 0")
        if self.lookahead >= self.order:
            raise ValueError(f"lookahead ({self.lookahead}) must be smaller than order ({self.order})")
        return self

    @property
    def label(self) -> str:
        return "CRM" if self.name == "CRM" else f"DF({self.order},{self.lookahead})"

    @classmethod
    def parse(cls, text: str) -> "OracleMethod":
        """'CRM', 'DF' (N=5, l=1) or 'DF(N,l)'"""
        text = text.strip().upper().replace(" ", "")
        if text == "CRM":
            return cls(name="CRM")
        if text == "DF":
            return cls(name="DF", order=5, lookahead=1)
        if text.startswith("DF(") and text.endswith(")"):
            order, lookahead = (int(p) for p in text[3:-1].split(","))
            return cls(name="DF", order=order, lookahead=lookahead)
        raise ValueError(f"Unknown oracle method '{text}'")


class OracleRow(BaseModel):
    fft_size: int
    method: str
    order: int
    lookahead: int
    snr_in: float
    si_sdr: float


class OracleReport(BaseModel):
    """Mean SI-SDR per (fft_size, method, input SNR) cell"""

    seed: int
    n_fixtures: int
    rows: List[OracleRow] = Field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["fft_size", "method", "order", "lookahead", "snr_in", "si_sdr"])
        for r in self.rows:
            writer.writerow([r.fft_size, r.method, r.order, r.lookahead, f"{r.snr_in:g}", f"{r.si_sdr:.4f}"])
        return buf.getvalue()

    def lookup(self, fft_size: int, method: str, snr_in: float) -> float:
        for r in self.rows:
            if r.fft_size == fft_size and r.method == method and r.snr_in == snr_in:
                return r.si_sdr
        raise KeyError((fft_size, method, snr_in))


class EvalRow(BaseModel):
    pair_id: str
    si_sdr_db: float
    pesq: Optional[float] = None


class EvalResult(BaseModel):
    """Per-pair and mean SI-SDR over a set of (estimate, reference) pairs"""

    si_sdr_db: Optional[float] = Field(None, description="Mean over evaluated pairs; None when no pair was evaluated")
    pairs_evaluated: int = 0
    rows: List[EvalRow] = Field(default_factory=list)
    skipped: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pair_id", "si_sdr_db", "pesq"])
        for r in self.rows:
            writer.writerow([r.pair_id, f"{r.si_sdr_db:.6f}", "" if r.pesq is None else f"{r.pesq:.4f}"])
        return buf.getvalue()


class GradCheckReport(BaseModel):
    """Outcome of comparing analytic loss gradients with finite differences"""

    seed: int
    c: float
    trials: int
    max_rel_error: float
    finite_at_zero: bool
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.finite_at_zero and math.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance


class SynthesisReport(BaseModel):
    """Outcome of a dataset synthesis run"""

    written: int = 0
    failures: List[str] = Field(default_factory=list)
    index_file: str
    failure_file: Optional[str] = None
