"""
Ground-truth oracles: least-squares deep filters and complex ratio masks

Both estimators see the clean spectrogram S and solve, per bin and frame, a
least-squares fit over a centered context of frames. With one tap and no
lookahead the deep filter reduces to the ratio mask, so the FFT-size sweep
compares the two on equal terms.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.ndimage
import scipy.signal

from .augment import mix
from .enhance import DfCoefficients, df_filter
from .erb import ErbFilterBank, apply_fb
from .errors import ContractViolation
from .metrics import si_sdr
from .models import OracleMethod, OracleReport, OracleRow
from .spectral import StftConfig, istft, stft

logger = logging.getLogger(__name__)

DEFAULT_DF_CONTEXT = 9
RIDGE = 1e-6
MASK_EPS = 1e-20
PINK_B = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
PINK_A = [1.0, -2.494956002, 2.017265875, -0.522189400]


def _check_pair(noisy: np.ndarray, clean: np.ndarray, context_frames: int) -> Tuple[np.ndarray, np.ndarray]:
    x, s = np.asarray(noisy), np.asarray(clean)
    if x.shape != s.shape or x.ndim != 2:
        raise ContractViolation(f"noisy and clean spectrograms must share a frames x bins shape, got {x.shape} and {s.shape}")
    if context_frames < 1 or context_frames % 2 == 0:
        raise ContractViolation(f"context_frames must be a positive odd number, got {context_frames}")
    return x, s


def _context_sum(values: np.ndarray, context_frames: int) -> np.ndarray:
    """Sum over a centered window of frames (axis 0), zeros outside the signal"""
    if context_frames == 1:
        return values
    ones = np.ones(context_frames)
    if np.iscomplexobj(values):
        return (
            scipy.ndimage.convolve1d(values.real, ones, axis=0, mode="constant")
            + 1j * scipy.ndimage.convolve1d(values.imag, ones, axis=0, mode="constant")
        )
    return scipy.ndimage.convolve1d(values, ones, axis=0, mode="constant")


def oracle_crm(
    noisy: np.ndarray,
    clean: np.ndarray,
    mag_cap: float = np.inf,
    context_frames: int = 1,
) -> np.ndarray:
    """
    Complex ratio mask S/X per bin, magnitude clipped to mag_cap

    With context_frames > 1 the mask is the least-squares ratio over the
    centered context: sum(S X*) / sum(|X|^2). Bins where X vanishes get 0.

    Raises:
        ContractViolation: On shape mismatch or mag_cap <= 0
    """
    x, s = _check_pair(noisy, clean, context_frames)
    if not mag_cap > 0:
        raise ContractViolation(f"mag_cap must be > 0, got {mag_cap}")

    num = _context_sum(s * np.conj(x), context_frames)
    den = _context_sum(np.abs(x) ** 2, context_frames)
    mask = np.zeros(x.shape, dtype=np.complex128)
    np.divide(num, den, out=mask, where=den > MASK_EPS)

    if np.isfinite(mag_cap):
        mag = np.abs(mask)
        over = mag > mag_cap
        mask[over] *= mag_cap / mag[over]
    return mask


def _regressors(x_bin: np.ndarray, order: int, lookahead: int, context_frames: int) -> np.ndarray:
    """frames x context x order matrix with A[k, c, i] = X(k - half + c - i + l)"""
    n_frames, half = len(x_bin), context_frames // 2
    front = order - 1 - lookahead + half
    padded = np.concatenate([np.zeros(front, x_bin.dtype), x_bin, np.zeros(lookahead + half, x_bin.dtype)])
    k = np.arange(n_frames)[:, None, None]
    c = np.arange(context_frames)[None, :, None]
    i = np.arange(order)[None, None, :]
    return padded[k + c + order - 1 - i]


def _targets(s_bin: np.ndarray, context_frames: int) -> np.ndarray:
    half = context_frames // 2
    padded = np.pad(s_bin, (half, half))
    return padded[np.arange(len(s_bin))[:, None] + np.arange(context_frames)[None, :]]


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal-norm least squares per frame; ridge-regularized when the SVD fails"""
    try:
        return np.einsum("kic,kc->ki", np.linalg.pinv(a), b)
    except np.linalg.LinAlgError:
        ah = np.conj(np.swapaxes(a, -1, -2))
        gram = ah @ a
        ridge = RIDGE * np.trace(gram, axis1=-2, axis2=-1).real + np.finfo(np.float64).tiny
        gram = gram + ridge[:, None, None] * np.eye(a.shape[-1])
        logger.warning("⚠️ Oracle least squares fell back to ridge regularization")
        return np.linalg.solve(gram, (ah @ b[..., None]))[..., 0]


def oracle_df(
    noisy: np.ndarray,
    clean: np.ndarray,
    order: int,
    lookahead: int,
    context_frames: int = DEFAULT_DF_CONTEXT,
) -> DfCoefficients:
    """
    Least-squares deep filter coefficients per frame and bin

    For frame k and bin f the taps minimize
    sum over the context frames j of |sum_i C(k, i, f) X(j - i + l, f) - S(j, f)|^2.
    Frames outside the signal count as zeros. All bins are solved.

    Raises:
        ContractViolation: On shape mismatch or invalid order/lookahead
    """
    x, s = _check_pair(noisy, clean, context_frames)
    if order < 1 or not 0 <= lookahead < order:
        raise ContractViolation(f"need order >= 1 and 0 <= lookahead < order, got N={order}, l={lookahead}")

    n_frames, n_bins = x.shape
    coefs = np.empty((n_frames, order, n_bins), dtype=np.complex128)
    for f in range(n_bins):
        a = _regressors(x[:, f].astype(np.complex128), order, lookahead, context_frames)
        b = _targets(s[:, f].astype(np.complex128), context_frames)
        coefs[:, :, f] = _solve(a, b)
    return DfCoefficients(coefs=coefs, lookahead=lookahead)


def df_residual(
    noisy: np.ndarray,
    clean: np.ndarray,
    coefs: DfCoefficients,
    context_frames: int = DEFAULT_DF_CONTEXT,
) -> float:
    """
    Mean squared context error of a set of deep filter coefficients

    With context_frames = 1 this is the plain error of the filtered frames.
    """
    x, s = _check_pair(noisy, clean, context_frames)
    total = 0.0
    for f in range(x.shape[1]):
        a = _regressors(x[:, f].astype(np.complex128), coefs.order, coefs.lookahead, context_frames)
        b = _targets(s[:, f].astype(np.complex128), context_frames)
        err = np.einsum("kci,ki->kc", a, coefs.coefs[:, :, f]) - b
        total += float(np.sum(np.abs(err) ** 2))
    return total / x.size


def ideal_erb_gains(noisy: np.ndarray, clean: np.ndarray, fb: ErbFilterBank) -> np.ndarray:
    """Per-frame band gains min(1, sqrt(E_S / E_X)); bands where X vanishes get 0"""
    x, s = np.asarray(noisy), np.asarray(clean)
    if x.shape != s.shape:
        raise ContractViolation(f"noisy and clean shapes differ: {x.shape} vs {s.shape}")
    e_x = apply_fb(np.abs(x) ** 2, fb, normalize=True)
    e_s = apply_fb(np.abs(s) ** 2, fb, normalize=True)
    ratio = np.zeros_like(e_x)
    np.divide(e_s, e_x, out=ratio, where=e_x > MASK_EPS)
    return np.minimum(1.0, np.sqrt(ratio))


def intonation_contour(rng: np.random.Generator, t: np.ndarray, rate: float) -> np.ndarray:
    """Pitch track in Hz: a sinusoidal swing of 5 to 12 % at `rate` Hz, kept inside [80, 300] Hz"""
    depth = rng.uniform(0.05, 0.12)
    f0 = rng.uniform(80.0 * (1.0 + depth), 300.0 * (1.0 - depth))
    return f0 * (1.0 + depth * np.sin(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi)))


def harmonic_fixture(
    rng: np.random.Generator,
    snr_db: float,
    sample_rate: int = 48000,
    duration_s: float = 1.0,
    noise: str = "white",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Harmonic complex in noise: returns (noisy, clean)

    f0 in [80, 300] Hz, 10 to 40 partials below Nyquist with 1/k amplitudes
    and random phases, a 2 to 4 Hz syllable-rate envelope, white or pink noise.
    The pitch follows an intonation contour at the syllable rate with a 5 to
    12 % swing; the whole contour stays inside [80, 300] Hz.
    """
    if noise not in ("white", "pink"):
        raise ContractViolation(f"noise must be 'white' or 'pink', got '{noise}'")
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    rate = rng.uniform(2.0, 4.0)
    contour = intonation_contour(rng, t, rate)
    n_partials = min(int(rng.integers(10, 41)), int((sample_rate / 2.0 - 1.0) // contour.max()))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_partials)
    k = np.arange(1, n_partials + 1)
    base_phase = 2.0 * np.pi * np.cumsum(contour) / sample_rate
    clean = np.sum(np.sin(k[:, None] * base_phase[None, :] + phases[:, None]) / k[:, None], axis=0)

    envelope = 0.55 - 0.45 * np.cos(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi))
    clean = 0.1 * clean * envelope / np.max(np.abs(clean))

    z = rng.standard_normal(len(t))
    if noise == "pink":
        z = scipy.signal.lfilter(PINK_B, PINK_A, z)
    noisy, clean, _ = mix(clean, [z], snr_db, sample_rate)
    return noisy, clean


def _enhance_with(method: OracleMethod, spec_x, spec_s, context_frames: int, crm_mag_cap: float) -> np.ndarray:
    if method.name == "CRM":
        mask = oracle_crm(spec_x.data, spec_s.data, crm_mag_cap, context_frames)
        return istft(spec_x.with_data(mask * spec_x.data))
    coefs = oracle_df(spec_x.data, spec_s.data, method.order, method.lookahead, context_frames)
    return istft(spec_x.with_data(df_filter(spec_x.data, coefs)))


def run_fft_sweep(
    seed: int = 42,
    fft_sizes: Sequence[int] = (240, 480, 960),
    input_snrs: Sequence[float] = (0.0, 5.0, 10.0),
    methods: Optional[Sequence[Union[str, OracleMethod]]] = None,
    n_fixtures: int = 20,
    context_frames: int = DEFAULT_DF_CONTEXT,
    crm_mag_cap: Optional[float] = None,
    overlap: int = 50,
    sample_rate: int = 48000,
    duration_s: float = 1.0,
    noise: str = "white",
    workers: int = 1,
) -> OracleReport:
    """
    Mean SI-SDR of oracle-enhanced harmonic fixtures per (fft_size, method, SNR)

    The same fixtures are used for every FFT size. Rows are ordered by FFT
    size, then method, then input SNR, and depend only on the arguments.

    Inputs are always synthetic `harmonic_fixture` signals; no audio files
    are read, so the sweep itself raises no I/O errors. File errors only
    appear when the caller writes `OracleReport.to_csv()` out with
    `audio_io.write_text`, which raises AudioIOError.
    """
    methods = [m if isinstance(m, OracleMethod) else OracleMethod.parse(m) for m in (methods or ("DF(5,1)", "CRM"))]
    cap = np.inf if crm_mag_cap is None else crm_mag_cap
    configs = [StftConfig.from_overlap(sample_rate, fft, overlap) for fft in fft_sizes]

    fixtures = {
        snr: [
            harmonic_fixture(np.random.default_rng([seed, n, j]), snr, sample_rate, duration_s, noise)
            for n in range(n_fixtures)
        ]
        for j, snr in enumerate(input_snrs)
    }

    def cell(item) -> List[OracleRow]:
        cfg, snr = item
        scores = {m.label: [] for m in methods}
        for noisy, clean in fixtures[snr]:
            spec_x, spec_s = stft(noisy, cfg, pad=True), stft(clean, cfg, pad=True)
            for m in methods:
                scores[m.label].append(si_sdr(_enhance_with(m, spec_x, spec_s, context_frames, cap), clean))
        return [
            OracleRow(
                fft_size=cfg.fft_size, method=m.label, order=m.order, lookahead=m.lookahead,
                snr_in=snr, si_sdr=float(np.mean(scores[m.label])),
            )
            for m in methods
        ]

    cells = [(cfg, snr) for cfg in configs for snr in input_snrs]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(cell, cells))

    by_cell = dict(zip(((c.fft_size, snr) for c, snr in cells), results))
    rows = [by_cell[(cfg.fft_size, snr)][i] for cfg in configs for i in range(len(methods)) for snr in input_snrs]
    logger.info(f"✓ Oracle sweep: {len(rows)} rows over {len(fft_sizes)} FFT sizes")
    return OracleReport(seed=seed, n_fixtures=n_fixtures, rows=rows)
