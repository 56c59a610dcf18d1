"""
Reference enhancement network: descriptor, weight container and forward pass
"""

from .layers import channel_shuffle, grouped_gru_step, grouped_linear_forward, separable_conv_forward
from .model import complexity_report, forward, layer_complexity
from .models import ComplexityReport, LayerSpec, NetDescriptor, NetOutputs, NetState
from .weights import NetworkWeights, fold_batch_norm, load_weights, save_weights

__all__ = [
    "ComplexityReport",
    "LayerSpec",
    "NetDescriptor",
    "NetOutputs",
    "NetState",
    "NetworkWeights",
    "channel_shuffle",
    "complexity_report",
    "fold_batch_norm",
    "forward",
    "grouped_gru_step",
    "grouped_linear_forward",
    "layer_complexity",
    "load_weights",
    "save_weights",
    "separable_conv_forward",
]
