"""
Training objective: compressed spectral loss, LSNR-gated alpha loss and their combination

Spectral loss over complex spectrograms Y (estimate) and S (target):
    sum (|Y|^c - |S|^c)^2 + sum | |Y|^c e^{j phi_Y} - |S|^c e^{j phi_S} |^2
Sums are not normalized per frame.
"""

import logging
from typing import Tuple

import numpy as np
import scipy.ndimage

from .errors import ContractViolation
from .models import GradCheckReport, LossConfig, nb_df_bins
from .spectral import StftConfig

logger = logging.getLogger(__name__)

HARDEN_EPS = 1e-12
LSNR_CLAMP_DB = 35.0
FD_STEP = 1e-5
GRAD_MIN_MAGNITUDE = 1e-3
GRAD_REL_FLOOR = 1e-6


def _check_shapes(y: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    y, s = np.asarray(y, dtype=np.complex128), np.asarray(s, dtype=np.complex128)
    if y.shape != s.shape:
        raise ContractViolation(f"estimate and target shapes differ: {y.shape} vs {s.shape}")
    return y, s


def compress(spec: np.ndarray, c: float) -> np.ndarray:
    """|X|^c e^{j phi_X}, zero where X is zero"""
    mag = np.abs(spec)
    out = np.zeros_like(spec, dtype=np.complex128)
    np.multiply(mag ** (c - 1.0), spec, out=out, where=mag > 0)
    return out


def _elementwise_loss(y: np.ndarray, s: np.ndarray, c: float) -> np.ndarray:
    mag_term = (np.abs(y) ** c - np.abs(s) ** c) ** 2
    cplx_term = np.abs(compress(y, c) - compress(s, c)) ** 2
    return mag_term + cplx_term


def spectral_loss(estimate: np.ndarray, target: np.ndarray, c: float = 0.6) -> float:
    """Compressed magnitude plus compressed complex loss, summed over all bins"""
    y, s = _check_shapes(estimate, target)
    return float(np.sum(_elementwise_loss(y, s, c)))


def spectral_loss_grad(estimate: np.ndarray, target: np.ndarray, c: float = 0.6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic gradient of `spectral_loss` w.r.t. Re(Y) and Im(Y)

    Every derivative of |Y| and phi_Y uses the hardened magnitude
    |Y_h|^2 = max(|Y|^2, 1e-12), so the gradient stays finite at Y = 0.

    Returns:
        (d/dRe, d/dIm), each shaped like Y
    """
    y, s = _check_shapes(estimate, target)
    a, b = y.real, y.imag
    r2_h = np.maximum(a * a + b * b, HARDEN_EPS)
    r_h = np.sqrt(r2_h)
    cos_phi, sin_phi = a / r_h, b / r_h

    u = np.abs(y) ** c
    s_c = compress(s, c)
    p, q = s_c.real, s_c.imag

    d_u = 2.0 * (u - np.abs(s) ** c) + 2.0 * (u - (p * cos_phi + q * sin_phi))
    d_phi = 2.0 * u * (p * sin_phi - q * cos_phi)
    d_r = d_u * c * r_h ** (c - 1.0)

    grad_re = d_r * a / r_h - d_phi * b / r2_h
    grad_im = d_r * b / r_h + d_phi * a / r2_h
    return grad_re, grad_im


def finite_difference_grad(
    estimate: np.ndarray, target: np.ndarray, c: float = 0.6, step: float = FD_STEP
) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences of the per-bin loss terms (each bin only depends on itself)"""
    y, s = _check_shapes(estimate, target)
    grads = []
    for direction in (1.0, 1j):
        plus = _elementwise_loss(y + step * direction, s, c)
        minus = _elementwise_loss(y - step * direction, s, c)
        grads.append((plus - minus) / (2.0 * step))
    return grads[0], grads[1]


def lsnr(
    clean: np.ndarray,
    noise: np.ndarray,
    stft_config: StftConfig,
    window_ms: float = 20.0,
    f_df: float = 5000.0,
) -> np.ndarray:
    """
    Local SNR per frame in dB, clamped to [-35, 35]

    Energies of S and Z over bins up to f_df are averaged over a centered
    window of window_ms before taking the ratio. The window is rounded to an
    odd number of frames so it has as many frames before the current one as
    after it.
    """
    s, z = _check_shapes(clean, noise)
    nb = nb_df_bins(f_df, stft_config.fft_size, stft_config.sample_rate)
    frames = max(1, int(round(window_ms / stft_config.hop_ms)))
    if frames % 2 == 0:
        frames += 1

    e_s = scipy.ndimage.uniform_filter1d(np.sum(np.abs(s[:, :nb]) ** 2, axis=-1), frames, mode="constant")
    e_z = scipy.ndimage.uniform_filter1d(np.sum(np.abs(z[:, :nb]) ** 2, axis=-1), frames, mode="constant")

    out = np.full(e_s.shape, -LSNR_CLAMP_DB)
    out[e_z <= 0] = LSNR_CLAMP_DB
    both = (e_s > 0) & (e_z > 0)
    out[both] = 10.0 * np.log10(e_s[both] / e_z[both])
    return np.clip(out, -LSNR_CLAMP_DB, LSNR_CLAMP_DB)


def alpha_loss(alpha: np.ndarray, lsnr_db: np.ndarray, lo: float = -10.0, hi: float = -5.0) -> float:
    """
    Push alpha to 0 below `lo` dB LSNR and to 1 above `hi` dB; no penalty in between
    """
    alpha, lsnr_db = np.asarray(alpha, dtype=np.float64), np.asarray(lsnr_db, dtype=np.float64)
    if alpha.shape != lsnr_db.shape:
        raise ContractViolation(f"alpha and LSNR lengths differ: {alpha.shape} vs {lsnr_db.shape}")
    low = (lsnr_db < lo).astype(np.float64)
    high = (lsnr_db > hi).astype(np.float64)
    return float(np.sum((alpha * low) ** 2) + np.sum(((1.0 - alpha) * high) ** 2))


def combined_loss(
    estimate: np.ndarray,
    target: np.ndarray,
    alpha: np.ndarray,
    lsnr_db: np.ndarray,
    config: LossConfig = LossConfig(),
) -> float:
    """lambda_spec * spectral_loss + lambda_alpha * alpha_loss"""
    spec = spectral_loss(estimate, target, config.c)
    gate = alpha_loss(alpha, lsnr_db, config.lsnr_lo, config.lsnr_hi)
    return config.lambda_spec * spec + config.lambda_alpha * gate


def run_gradcheck(
    seed: int = 0,
    c: float = 0.6,
    trials: int = 100,
    tolerance: float = 1e-4,
    shape: Tuple[int, int] = (8, 16),
) -> GradCheckReport:
    """
    Compare `spectral_loss_grad` with central finite differences on random spectrograms

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-6),
    taken over bins with |Y| > 1e-3. Every trial also checks that the
    gradient is finite with some bins of Y exactly zero.
    """
    LossConfig(c=c)
    rng = np.random.default_rng(seed)
    max_err = 0.0
    finite = True

    for _ in range(trials):
        y = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        s = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

        analytic = spectral_loss_grad(y, s, c)
        numeric = finite_difference_grad(y, s, c)
        valid = np.abs(y) > GRAD_MIN_MAGNITUDE
        for g_an, g_fd in zip(analytic, numeric):
            scale = np.maximum(np.maximum(np.abs(g_an), np.abs(g_fd)), GRAD_REL_FLOOR)
            err = np.abs(g_an - g_fd) / scale
            if valid.any():
                max_err = max(max_err, float(np.max(err[valid])))

        y_zero = np.where(rng.random(shape) < 0.25, 0.0, y)
        finite &= all(np.all(np.isfinite(g)) for g in spectral_loss_grad(y_zero, s, c))

    report = GradCheckReport(
        seed=seed, c=c, trials=trials, max_rel_error=max_err, finite_at_zero=bool(finite), tolerance=tolerance
    )
    status = "✓" if report.passed else "❌"
    logger.info(f"{status} Gradient check c={c}: max relative error {max_err:.3e} over {trials} trials")
    return report
