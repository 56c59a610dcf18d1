"""
Network input features

ERB features: log-power band energies with exponential mean normalization.
DF features: complex low-frequency bins with exponential unit normalization.
Both normalizers run per stream with the same decay; the first frame seeds
the running statistics so there is no warm-up transient.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .erb import ErbFilterBank, apply_fb
from .errors import ContractViolation
from .spectral import Spectrogram

EPS = 1e-10


def smoothing_coef(decay: float, hop: int, sample_rate: int) -> float:
    """
    Per-hop smoothing coefficient for an exponential decay of `decay` seconds

    alpha = exp(-hop / (decay * sample_rate)); an infinite decay gives 1.
    """
    if decay <= 0:
        raise ContractViolation(f"decay must be > 0, got {decay}")
    if math.isinf(decay):
        return 1.0
    return math.exp(-hop / (decay * sample_rate))


@dataclass
class NormState:
    """
    Running statistics for one stream: per-band means and per-bin magnitudes

    alpha = 1 is the infinite-decay limit: the statistics stay at the first
    frame forever.
    """

    alpha: float
    mean_state: Optional[np.ndarray] = None
    unit_state: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ContractViolation(f"alpha must lie in (0, 1], got {self.alpha}")


def erb_feat(spectrum_frame: np.ndarray, fb: ErbFilterBank, state: NormState) -> np.ndarray:
    """
    Mean-normalized log-power ERB feature for one frame

    value = 10*log10(band power + eps); output = value - running mean,
    with the mean updated first as m <- alpha*m + (1-alpha)*value.
    """
    power = np.abs(np.asarray(spectrum_frame)) ** 2
    value = 10.0 * np.log10(apply_fb(power, fb, normalize=True) + EPS)

    if state.mean_state is None:
        state.mean_state = value.copy()
    else:
        state.mean_state = state.alpha * state.mean_state + (1.0 - state.alpha) * value
    return value - state.mean_state


def df_feat(spectrum_frame: np.ndarray, state: NormState) -> np.ndarray:
    """
    Unit-normalized complex DF feature for one frame (phase preserved)

    u <- alpha*u + (1-alpha)*|X|; output = X / sqrt(u^2 + eps).
    """
    x = np.asarray(spectrum_frame)
    mag = np.abs(x)

    if state.unit_state is None:
        state.unit_state = mag.copy()
    else:
        if state.unit_state.shape != mag.shape:
            raise ContractViolation(
                f"df_feat expects {state.unit_state.shape[0]} bins, got {mag.shape[0]}"
            )
        state.unit_state = state.alpha * state.unit_state + (1.0 - state.alpha) * mag
    return x / np.sqrt(state.unit_state ** 2 + EPS)


def erb_features(spec: Spectrogram, fb: ErbFilterBank, alpha: float) -> np.ndarray:
    """Run `erb_feat` over every frame; returns frames x n_bands"""
    state = NormState(alpha=alpha)
    return np.stack([erb_feat(frame, fb, state) for frame in spec.data])


def df_features(spec: Spectrogram, nb_df: int, alpha: float) -> np.ndarray:
    """Run `df_feat` over the first nb_df bins of every frame; returns frames x nb_df complex"""
    state = NormState(alpha=alpha)
    return np.stack([df_feat(frame[:nb_df], state) for frame in spec.data])
