"""
Rectangular ERB-scaled filterbank

Bands partition the FFT bins into contiguous groups whose centers are spaced
uniformly on the ERB-rate scale. Features use the power domain (`apply_fb`);
gains come back in the amplitude domain (`apply_inverse_fb`).
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

ERB_Q = 9.265
ERB_MIN_BW = 24.7


def erb_scale(freq_hz: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Frequency in Hz to ERB-rate"""
    return ERB_Q * np.log1p(np.asarray(freq_hz, dtype=np.float64) / (ERB_MIN_BW * ERB_Q))


def inverse_erb_scale(erb: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """ERB-rate to frequency in Hz"""
    return ERB_MIN_BW * ERB_Q * np.expm1(np.asarray(erb, dtype=np.float64) / ERB_Q)


@dataclass(frozen=True)
class ErbFilterBank:
    """Immutable partition of FFT bins into ERB bands"""

    band_edges: np.ndarray
    sample_rate: int
    fft_size: int

    @property
    def n_bands(self) -> int:
        return len(self.band_edges) - 1

    @property
    def n_bins(self) -> int:
        return int(self.band_edges[-1])

    @property
    def band_widths(self) -> np.ndarray:
        return np.diff(self.band_edges)

    @property
    def center_frequencies(self) -> np.ndarray:
        """Band centers in Hz (midpoint of the member bins)"""
        bin_hz = self.sample_rate / self.fft_size
        return (self.band_edges[:-1] + self.band_edges[1:] - 1) / 2.0 * bin_hz

    def band_of_bin(self, bin_index: int) -> int:
        return int(np.searchsorted(self.band_edges, bin_index, side="right") - 1)


def build_erb_fb(sample_rate: int, fft_size: int, n_erb: int = 32, min_bins_per_band: int = 2) -> ErbFilterBank:
    """
    Partition the one-sided spectrum into n_erb rectangular ERB bands

    Edges are placed uniformly in ERB-rate between 0 Hz and Nyquist, rounded
    to whole bins, then pushed apart so every band holds at least
    min_bins_per_band bins. The DC bin belongs to band 0 and the top band
    absorbs whatever bins remain up to Nyquist.

    Args:
        sample_rate: Sample rate in Hz
        fft_size: FFT size in samples
        n_erb: Number of bands
        min_bins_per_band: Minimum band width in bins

    Returns:
        ErbFilterBank covering fft_size/2 + 1 bins

    Raises:
        ConfigurationError: If the bands cannot fit the bin count
    """
    n_bins = fft_size // 2 + 1
    if n_erb < 1 or min_bins_per_band < 1:
        raise ConfigurationError(f"n_erb and min_bins_per_band must be >= 1, got {n_erb}, {min_bins_per_band}")
    if n_erb * min_bins_per_band > n_bins:
        raise ConfigurationError(
            f"{n_erb} bands of at least {min_bins_per_band} bins do not fit in {n_bins} bins"
        )

    bin_hz = sample_rate / fft_size
    erb_points = np.linspace(0.0, erb_scale(sample_rate / 2.0), n_erb + 1)
    edges = np.rint(inverse_erb_scale(erb_points) / bin_hz).astype(np.int64)
    edges[0], edges[-1] = 0, n_bins

    for i in range(1, n_erb + 1):
        edges[i] = max(edges[i], edges[i - 1] + min_bins_per_band)
    edges[-1] = n_bins
    for i in range(n_erb - 1, 0, -1):
        edges[i] = min(edges[i], edges[i + 1] - min_bins_per_band)

    fb = ErbFilterBank(band_edges=edges, sample_rate=sample_rate, fft_size=fft_size)
    logger.debug(f"ERB filterbank: {n_erb} bands, widths {fb.band_widths.tolist()}")
    return fb


def apply_fb(power_spectrum: np.ndarray, fb: ErbFilterBank, normalize: bool = True) -> np.ndarray:
    """
    Compress per-bin values (power domain) to per-band values

    Works on the last axis, so frames x bins matrices are accepted.
    Band value is the mean (normalize=True) or the sum of its member bins.

    Raises:
        ContractViolation: If the last axis does not match the bin count
    """
    x = np.asarray(power_spectrum)
    if x.shape[-1] != fb.n_bins:
        raise ContractViolation(f"apply_fb expects {fb.n_bins} bins, got {x.shape[-1]}")

    starts = fb.band_edges[:-1]
    if not normalize:
        return np.add.reduceat(x, starts, axis=-1)

    # mean taken as offset from the band's first bin: constant bands come back bit-exact
    first = np.take(x, starts, axis=-1)
    spread = np.add.reduceat(x - np.repeat(first, fb.band_widths, axis=-1), starts, axis=-1)
    return first + spread / fb.band_widths


def apply_inverse_fb(band_gains: np.ndarray, fb: ErbFilterBank) -> np.ndarray:
    """
    Widen band gains (amplitude domain) back to per-bin gains, piecewise constant

    Raises:
        ContractViolation: If the last axis does not match the band count
    """
    g = np.asarray(band_gains)
    if g.shape[-1] != fb.n_bands:
        raise ContractViolation(f"apply_inverse_fb expects {fb.n_bands} bands, got {g.shape[-1]}")
    return np.repeat(g, fb.band_widths, axis=-1)


def export_band_edges_csv(fb: ErbFilterBank, path: Union[str, Path]) -> Path:
    """Write the band-edge table (band, first_bin, last_bin, width, low_hz, high_hz, center_hz)"""
    path = Path(path)
    bin_hz = fb.sample_rate / fb.fft_size
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["band", "first_bin", "last_bin", "width", "low_hz", "high_hz", "center_hz"])
        for b in range(fb.n_bands):
            first, stop = int(fb.band_edges[b]), int(fb.band_edges[b + 1])
            writer.writerow([
                b, first, stop - 1, stop - first,
                f"{first * bin_hz:.2f}", f"{(stop - 1) * bin_hz:.2f}", f"{fb.center_frequencies[b]:.2f}",
            ])
    return path
