"""
Layer primitives of the reference network, numpy only

Conv tensors are laid out channels x freq x time. Every conv is causal except
for its declared lookahead: output frame t reads input frames t-1+l .. t+l.
"""

from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from services.errors import ContractViolation


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def separable_conv_forward(
    x: np.ndarray,
    depthwise: np.ndarray,
    pointwise: np.ndarray,
    bias: Optional[np.ndarray] = None,
    lookahead: int = 0,
    fstride: int = 1,
) -> np.ndarray:
    """
    Depthwise (freq x time) conv followed by a 1x1 pointwise conv

    Args:
        x: C_in x F x T input
        depthwise: C_in x kf x kt per-channel kernels
        pointwise: C_out x C_in mixing matrix
        bias: Optional C_out bias
        lookahead: Future frames read (time padding moves to the end)
        fstride: Frequency stride

    Returns:
        C_out x ceil(F / fstride) x T
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ContractViolation(f"conv input must be channels x freq x time, got shape {x.shape}")
    c_in, n_freq, n_time = x.shape
    if depthwise.shape[0] != c_in or pointwise.shape[1] != c_in:
        raise ContractViolation(
            f"conv expects {depthwise.shape[0]} input channels, got {c_in}"
        )
    kf, kt = depthwise.shape[1:]
    pad_f = kf // 2
    f_out = (n_freq + 2 * pad_f - kf) // fstride + 1

    xp = np.pad(x, ((0, 0), (pad_f, pad_f), (kt - 1, lookahead)))
    out = np.zeros((c_in, f_out, n_time))
    for a in range(kf):
        for b in range(kt):
            tap = xp[:, a:a + fstride * (f_out - 1) + 1:fstride, lookahead + b:lookahead + b + n_time]
            out += depthwise[:, a, b][:, None, None] * tap

    y = np.einsum("oc,cft->oft", pointwise, out)
    if bias is not None:
        y += bias[:, None, None]
    return y


def pathway_conv(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """1x1 conv: C_out x C_in over every (freq, time) cell"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != weight.shape[1]:
        raise ContractViolation(f"1x1 conv expects {weight.shape[1]} channels, got {x.shape[0]}")
    y = np.einsum("oc,cft->oft", weight, x)
    if bias is not None:
        y += bias[:, None, None]
    return y


def upsample_freq(x: np.ndarray, factor: int, n_freq: int) -> np.ndarray:
    """Repeat every frequency row `factor` times and cut to n_freq rows"""
    return np.repeat(x, factor, axis=1)[:, :n_freq]


def channel_shuffle(x: np.ndarray, groups: int) -> np.ndarray:
    """
    Interleave group outputs along the last axis

    Feature j of group p moves to position j * groups + p.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n % groups:
        raise ContractViolation(f"{n} features cannot be split into {groups} groups")
    lead = x.shape[:-1]
    return np.swapaxes(x.reshape(*lead, groups, n // groups), -1, -2).reshape(*lead, n)


def channel_unshuffle(x: np.ndarray, groups: int) -> np.ndarray:
    """Inverse of `channel_shuffle`"""
    x = np.asarray(x)
    n = x.shape[-1]
    lead = x.shape[:-1]
    return np.swapaxes(x.reshape(*lead, n // groups, groups), -1, -2).reshape(*lead, n)


def grouped_linear_forward(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Block-diagonal linear layer followed by channel shuffle

    Args:
        x: ... x in_features
        weight: groups x in/groups x out/groups
        bias: Optional out_features bias, added after the shuffle

    Returns:
        ... x out_features
    """
    x = np.asarray(x, dtype=np.float64)
    groups, gi, go = weight.shape
    if x.shape[-1] != groups * gi:
        raise ContractViolation(f"grouped linear expects {groups * gi} features, got {x.shape[-1]}")

    lead = x.shape[:-1]
    y = np.einsum("...pi,pio->...po", x.reshape(*lead, groups, gi), weight).reshape(*lead, groups * go)
    if groups > 1:
        y = channel_shuffle(y, groups)
    if bias is not None:
        y = y + bias
    return y


def grouped_gru_step(
    x: np.ndarray,
    hidden: np.ndarray,
    weight_ih: np.ndarray,
    weight_hh: np.ndarray,
    bias_ih: Optional[np.ndarray] = None,
    bias_hh: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One step of a grouped GRU (independent GRUs per feature group)

    Gates per group: r, z, n with h' = (1 - z) * n + z * h.

    Args:
        x: in_features input
        hidden: groups x hidden/groups state
        weight_ih: groups x 3 x in/groups x hidden/groups
        weight_hh: groups x 3 x hidden/groups x hidden/groups
        bias_ih, bias_hh: Optional groups x 3 x hidden/groups

    Returns:
        (channel-shuffled hidden_features output, new groups x hidden/groups state)
    """
    groups, _, gi, gh = weight_ih.shape
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (groups * gi,):
        raise ContractViolation(f"grouped GRU expects {groups * gi} features, got shape {x.shape}")
    if hidden.shape != (groups, gh):
        raise ContractViolation(f"grouped GRU state must be {(groups, gh)}, got {hidden.shape}")

    gates_x = np.einsum("pi,pgio->pgo", x.reshape(groups, gi), weight_ih)
    gates_h = np.einsum("pi,pgio->pgo", hidden, weight_hh)
    if bias_ih is not None:
        gates_x = gates_x + bias_ih
    if bias_hh is not None:
        gates_h = gates_h + bias_hh

    r = expit(gates_x[:, 0] + gates_h[:, 0])
    z = expit(gates_x[:, 1] + gates_h[:, 1])
    n = np.tanh(gates_x[:, 2] + r * gates_h[:, 2])
    new_hidden = (1.0 - z) * n + z * hidden
    return channel_shuffle(new_hidden.reshape(-1), groups), new_hidden


def grouped_gru_forward(
    x: np.ndarray,
    hidden: Optional[np.ndarray],
    weight_ih: np.ndarray,
    weight_hh: np.ndarray,
    bias_ih: Optional[np.ndarray] = None,
    bias_hh: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Run `grouped_gru_step` over T x in_features; a None state starts at zeros"""
    groups, _, _, gh = weight_ih.shape
    h = np.zeros((groups, gh)) if hidden is None else np.asarray(hidden, dtype=np.float64)
    out = np.empty((len(x), groups * gh))
    for t, frame in enumerate(x):
        out[t], h = grouped_gru_step(frame, h, weight_ih, weight_hh, bias_ih, bias_hh)
    return out, h
