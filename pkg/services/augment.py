"""
Seeded dataset synthesis: noisy = reverberant speech + scaled noise

Every random draw of a row comes from numpy.random.default_rng([seed, row]),
so rows are reproducible on their own and in any worker order. Augmentation
gains and filters are applied before SNR scaling; SNR is measured over the
active-speech part of the clean signal. The clean target keeps the
reverberation (speech convolved with the RIR).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.signal

from .audio_io import read_wav, write_text, write_wav
from .errors import AudioIOError, ContractViolation, DeepFilterError, SilentSignalError
from .models import (
    ATTEN_EXTRA_RANGE_DB,
    GAIN_SET_DB,
    SNR_SET_DB,
    AugmentSpec,
    BiquadParams,
    EqBand,
    ManifestEntry,
    SynthesisReport,
)

logger = logging.getLogger(__name__)

ACTIVE_FRAME_MS = 10.0
ACTIVE_THRESHOLD_DBFS = -50.0
BIQUAD_COEF_RANGE = 3.0 / 8.0
LOWPASS_ORDER = 10
LOWPASS_STOP_DB = 80.0

PathLike = Union[str, Path]


def active_mask(signal: np.ndarray, sample_rate: int = 48000) -> np.ndarray:
    """Per-sample mask of 10 ms frames whose level exceeds -50 dBFS"""
    x = np.asarray(signal, dtype=np.float64)
    frame = max(1, int(round(sample_rate * ACTIVE_FRAME_MS / 1000.0)))
    n_frames = int(np.ceil(len(x) / frame))
    padded = np.pad(x, (0, n_frames * frame - len(x)))
    power = np.mean(padded.reshape(n_frames, frame) ** 2, axis=1)
    active = 10.0 * np.log10(power + 1e-30) > ACTIVE_THRESHOLD_DBFS
    return np.repeat(active, frame)[:len(x)]


def _energies(clean: np.ndarray, noise: np.ndarray, sample_rate: int) -> Tuple[float, float]:
    mask = active_mask(clean, sample_rate)
    if not mask.any():
        mask = np.ones(len(clean), dtype=bool)
    return float(np.mean(clean[mask] ** 2)), float(np.mean(noise[mask] ** 2))


def measure_snr(clean: np.ndarray, noise: np.ndarray, sample_rate: int = 48000) -> float:
    """SNR in dB over the active-speech samples of `clean`"""
    e_s, e_z = _energies(np.asarray(clean, dtype=np.float64), np.asarray(noise, dtype=np.float64), sample_rate)
    if e_z == 0.0:
        return float("inf")
    return float(10.0 * np.log10(e_s / e_z))


def fit_length(signal: np.ndarray, length: int) -> np.ndarray:
    """Loop or trim a signal to `length` samples"""
    x = np.asarray(signal, dtype=np.float64)
    if len(x) == 0:
        raise ContractViolation("cannot fit an empty signal")
    return np.resize(x, length)


def mix(
    speech: np.ndarray,
    noises: Sequence[np.ndarray],
    snr_db: float,
    sample_rate: int = 48000,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Mix speech with the sum of up to 5 noises at a given SNR

    Noises are looped or trimmed to the speech length, summed, then scaled as
    a whole so that the SNR over active speech equals snr_db.

    Returns:
        (noisy, clean, noise_sum), sample aligned

    Raises:
        SilentSignalError: If the speech is silent
        ContractViolation: If no noise is given or the noise sum is silent
    """
    clean = np.asarray(speech, dtype=np.float64)
    if not np.any(clean):
        raise SilentSignalError("speech is silent, draw another sample")
    if not noises:
        raise ContractViolation("mix needs at least one noise")

    noise_sum = np.sum([fit_length(z, len(clean)) for z in noises], axis=0)
    e_s, e_z = _energies(clean, noise_sum, sample_rate)
    if e_z == 0.0:
        raise ContractViolation("noise is silent over the active speech")

    noise_sum = noise_sum * np.sqrt(e_s / (e_z * 10.0 ** (snr_db / 10.0)))
    return clean + noise_sum, clean, noise_sum


def random_biquad(rng: np.random.Generator, sample_rate: int = 48000) -> BiquadParams:
    """
    Random second-order section with coefficients in [-3/8, 3/8]

    Poles and zeros stay inside the unit circle; the filter is scaled to unit
    gain at a random anchor frequency.
    """
    b1, b2, a1, a2 = rng.uniform(-BIQUAD_COEF_RANGE, BIQUAD_COEF_RANGE, size=4)
    b, a = np.array([1.0, b1, b2]), np.array([1.0, a1, a2])
    anchor = rng.uniform(0.0, sample_rate / 2.0)
    _, h = scipy.signal.freqz(b, a, worN=[anchor], fs=sample_rate)
    b = b / abs(h[0])
    return BiquadParams(b=tuple(b.tolist()), a=tuple(a.tolist()))


def apply_biquad(signal: np.ndarray, params: BiquadParams) -> np.ndarray:
    return scipy.signal.lfilter(params.b, params.a, np.asarray(signal, dtype=np.float64))


def biquad_augment(signal: np.ndarray, seed: int, sample_rate: int = 48000) -> np.ndarray:
    """Filter with one random biquad drawn from `seed`"""
    return apply_biquad(signal, random_biquad(np.random.default_rng(seed), sample_rate))


def peaking_sos(band: EqBand, sample_rate: int) -> np.ndarray:
    """Peaking EQ section (audio EQ cookbook) as one sos row"""
    amp = 10.0 ** (band.gain_db / 40.0)
    w0 = 2.0 * np.pi * band.freq_hz / sample_rate
    alpha = np.sin(w0) / (2.0 * band.q)
    b = np.array([1.0 + alpha * amp, -2.0 * np.cos(w0), 1.0 - alpha * amp])
    a = np.array([1.0 + alpha / amp, -2.0 * np.cos(w0), 1.0 - alpha / amp])
    return np.concatenate([b / a[0], a / a[0]])


def random_eq(rng: np.random.Generator, sample_rate: int = 48000) -> List[EqBand]:
    """1 to 3 peaking bands within +-6 dB"""
    top = min(8000.0, 0.45 * sample_rate)
    return [
        EqBand(
            freq_hz=float(np.exp(rng.uniform(np.log(100.0), np.log(top)))),
            gain_db=float(rng.uniform(-6.0, 6.0)),
            q=float(rng.uniform(0.5, 2.0)),
        )
        for _ in range(int(rng.integers(1, 4)))
    ]


def apply_eq(signal: np.ndarray, bands: Sequence[EqBand], sample_rate: int = 48000) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if not bands:
        return x
    return scipy.signal.sosfilt(np.stack([peaking_sos(b, sample_rate) for b in bands]), x)


def resample_ratio(ratio: float) -> Fraction:
    return Fraction(ratio).limit_denominator(100)


def resample(signal: np.ndarray, ratio: float) -> np.ndarray:
    """Polyphase resampling by `ratio` (output length ~ ratio * input length)"""
    frac = resample_ratio(ratio)
    if frac == 1:
        return np.asarray(signal, dtype=np.float64)
    return scipy.signal.resample_poly(np.asarray(signal, dtype=np.float64), frac.numerator, frac.denominator)


def to_rate(signal: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    if rate == target_rate:
        return np.asarray(signal, dtype=np.float64)
    g = np.gcd(rate, target_rate)
    return scipy.signal.resample_poly(signal, target_rate // g, rate // g)


def convolve_rir(speech: np.ndarray, rir: np.ndarray) -> np.ndarray:
    """
    Convolve speech with a peak-normalized RIR, truncated to the speech length

    Raises:
        ContractViolation: If the RIR is empty or all zeros
    """
    h = np.asarray(rir, dtype=np.float64)
    if h.size == 0 or not np.any(h):
        raise ContractViolation("RIR is empty")
    h = h / np.max(np.abs(h))
    x = np.asarray(speech, dtype=np.float64)
    return scipy.signal.fftconvolve(x, h)[:len(x)]


def lowpass_match(noise: np.ndarray, speech_bandwidth: float, model_rate: int = 48000) -> np.ndarray:
    """
    Remove noise content above the speech bandwidth (>= 60 dB stopband)

    Full-band speech (bandwidth at Nyquist) leaves the noise unchanged.

    Raises:
        ContractViolation: If the bandwidth exceeds Nyquist
    """
    x = np.asarray(noise, dtype=np.float64)
    nyquist = model_rate / 2.0
    if speech_bandwidth > nyquist or speech_bandwidth <= 0:
        raise ContractViolation(f"speech bandwidth must lie in (0, {nyquist}] Hz, got {speech_bandwidth}")
    if speech_bandwidth == nyquist:
        return x.copy()
    sos = scipy.signal.cheby2(
        LOWPASS_ORDER, LOWPASS_STOP_DB, speech_bandwidth, btype="low", fs=model_rate, output="sos"
    )
    return scipy.signal.sosfilt(sos, x)


def attenuation_target(
    clean: np.ndarray,
    noise_sum: np.ndarray,
    snr_db: float,
    extra_db: float,
    sample_rate: int = 48000,
) -> np.ndarray:
    """Target with the noise rescaled to snr_db + extra_db; extra_db = inf gives the clean signal"""
    clean = np.asarray(clean, dtype=np.float64)
    noise_sum = np.asarray(noise_sum, dtype=np.float64)
    if np.isinf(extra_db):
        return clean.copy()
    e_s, e_z = _energies(clean, noise_sum, sample_rate)
    if e_z == 0.0:
        return clean.copy()
    scale = np.sqrt(e_s / (e_z * 10.0 ** ((snr_db + extra_db) / 10.0)))
    return clean + noise_sum * scale


def draw_spec(
    entry: ManifestEntry,
    index: int,
    seed: int,
    sample_rate: int = 48000,
    snr_set: Sequence[float] = SNR_SET_DB,
    atten_limit: bool = False,
    speech_rate: Optional[int] = None,
) -> AugmentSpec:
    """Draw every random parameter of one manifest row"""
    row_seed = entry.seed if entry.seed is not None else seed
    rng = np.random.default_rng([row_seed, index])

    snr_db = float(rng.choice(snr_set))
    speech_gain = float(rng.choice(GAIN_SET_DB))
    noise_gains = [float(rng.choice(GAIN_SET_DB)) for _ in entry.noises]
    speech_filter = random_biquad(rng, sample_rate) if rng.random() < 0.5 else None
    noise_filters = [random_biquad(rng, sample_rate) if rng.random() < 0.5 else None for _ in entry.noises]
    speech_eq = random_eq(rng, sample_rate) if rng.random() < 0.5 else []
    ratio = float(resample_ratio(rng.uniform(0.9, 1.1))) if rng.random() < 0.3 else 1.0
    extra = float(rng.uniform(*ATTEN_EXTRA_RANGE_DB)) if atten_limit else None

    bandwidth = speech_rate / 2.0 if speech_rate is not None and speech_rate < sample_rate else None
    return AugmentSpec(
        index=index,
        seed=row_seed,
        sample_rate=sample_rate,
        speech=entry.speech,
        noises=list(entry.noises),
        snr_db=snr_db,
        speech_gain_db=speech_gain,
        noise_gains_db=noise_gains,
        speech_filter=speech_filter,
        noise_filters=noise_filters,
        speech_eq=speech_eq,
        resample_ratio=ratio,
        rir=entry.rir,
        speech_bandwidth_hz=bandwidth,
        atten_extra_db=extra,
    )


def render(
    spec: AugmentSpec,
    speech: np.ndarray,
    noises: Sequence[np.ndarray],
    rir: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Build (noisy, clean, target) from signals already at the model rate

    Speech: gain, biquad, EQ, resampling, RIR. Noises: gain, biquad, low-pass
    to the speech bandwidth. Then mix and, optionally, the attenuation target.
    """
    sr = spec.sample_rate
    s = np.asarray(speech, dtype=np.float64) * 10.0 ** (spec.speech_gain_db / 20.0)
    if spec.speech_filter is not None:
        s = apply_biquad(s, spec.speech_filter)
    s = resample(apply_eq(s, spec.speech_eq, sr), spec.resample_ratio)
    if rir is not None:
        s = convolve_rir(s, rir)

    processed = []
    for z, gain, filt in zip(noises, spec.noise_gains_db, spec.noise_filters):
        z = np.asarray(z, dtype=np.float64) * 10.0 ** (gain / 20.0)
        if filt is not None:
            z = apply_biquad(z, filt)
        if spec.speech_bandwidth_hz is not None:
            z = lowpass_match(z, spec.speech_bandwidth_hz, sr)
        processed.append(z)

    noisy, clean, noise_sum = mix(s, processed, spec.snr_db, sr)
    if spec.atten_extra_db is None:
        target = clean
    else:
        target = attenuation_target(clean, noise_sum, spec.snr_db, spec.atten_extra_db, sr)
    return noisy, clean, target


def read_manifest(path: PathLike) -> List[Tuple[int, Union[ManifestEntry, str]]]:
    """Parse JSON lines; invalid rows come back as error strings"""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise AudioIOError(f"Failed to read manifest {path}: {e}") from e

    rows = []
    for number, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rows.append((number, ManifestEntry.model_validate_json(line)))
        except ValueError as e:
            rows.append((number, f"row {number}: invalid manifest entry: {e}"))
    return rows


def _resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def _synthesize_row(
    index: int,
    entry: ManifestEntry,
    base: Path,
    out_dir: Path,
    seed: int,
    sample_rate: int,
    snr_set: Sequence[float],
    atten_limit: bool,
) -> Union[AugmentSpec, str]:
    try:
        speech, speech_rate = read_wav(_resolve(base, entry.speech))
        noises = []
        for name in entry.noises:
            z, rate = read_wav(_resolve(base, name))
            noises.append(to_rate(z, rate, sample_rate))
        rir = None
        if entry.rir is not None:
            h, rate = read_wav(_resolve(base, entry.rir))
            rir = to_rate(h, rate, sample_rate)

        spec = draw_spec(entry, index, seed, sample_rate, snr_set, atten_limit, speech_rate)
        noisy, clean, target = render(spec, to_rate(speech, speech_rate, sample_rate), noises, rir)

        name = f"{index:06d}.wav"
        files = {}
        for kind, signal in (("noisy", noisy), ("clean", clean), ("target", target)):
            write_wav(out_dir / kind / name, signal, sample_rate)
            files[f"{kind}_file"] = f"{kind}/{name}"
        return spec.model_copy(update=files)
    except DeepFilterError as e:
        return f"row {index}: {e}"


def synthesize_dataset(
    manifest: PathLike,
    out_dir: PathLike,
    seed: int = 42,
    snr_set: Sequence[float] = SNR_SET_DB,
    sample_rate: int = 48000,
    atten_limit: bool = False,
    workers: int = 1,
) -> SynthesisReport:
    """
    Write noisy/clean/target triples for every manifest row

    Outputs land in <out>/noisy, <out>/clean and <out>/target, one JSON line
    per written row in <out>/index.jsonl (the full AugmentSpec) and failed
    rows in <out>/failures.txt. A failing row never stops the run.
    """
    manifest = Path(manifest)
    out_dir = Path(out_dir)
    for snr in snr_set:
        if snr not in SNR_SET_DB:
            logger.warning(f"⚠️ SNR {snr} dB is outside the reference set {SNR_SET_DB}")

    rows = read_manifest(manifest)
    entries = [(i, e) for i, e in rows if isinstance(e, ManifestEntry)]
    failures = [e for _, e in rows if isinstance(e, str)]

    def work(item):
        index, entry = item
        return _synthesize_row(index, entry, manifest.parent, out_dir, seed, sample_rate, snr_set, atten_limit)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(work, entries))

    specs = [o for o in outcomes if isinstance(o, AugmentSpec)]
    failures += [o for o in outcomes if isinstance(o, str)]
    for reason in failures:
        logger.warning(f"⚠️ Skipped manifest {reason}")

    index_file = write_text(out_dir / "index.jsonl", "".join(s.model_dump_json() + "\n" for s in specs))
    failure_file = None
    if failures:
        failure_file = write_text(out_dir / "failures.txt", "\n".join(failures) + "\n")
    logger.info(f"✓ Wrote {len(specs)} triples to {out_dir} ({len(failures)} failures)")

    return SynthesisReport(
        written=len(specs),
        failures=failures,
        index_file=str(index_file),
        failure_file=None if failure_file is None else str(failure_file),
    )
