"""
Pydantic models describing the reference network and its outputs
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

LayerKind = Literal["sepconv", "upconv", "pconv", "glinear", "ggru"]


class LayerSpec(BaseModel):
    """One layer of the network as declared in the weight file"""

    name: str
    kind: LayerKind
    in_dim: int = Field(..., gt=0, description="Input channels (conv) or features (linear/GRU)")
    out_dim: int = Field(..., gt=0, description="Output channels (conv) or features (linear/GRU)")
    groups: int = Field(1, ge=1)
    bias: bool = True
    lookahead: int = Field(0, ge=0, le=2, description="Future frames read by a conv layer")
    fstride: int = Field(1, ge=1, description="Frequency downsampling (sepconv) or upsampling (upconv)")
    freq_bins: int = Field(1, ge=1, description="Output frequency bins of a conv layer")
    batch_norm: bool = False

    @model_validator(mode="after")
    def check_layer(self):
        if self.kind in ("glinear", "ggru") and (self.in_dim % self.groups or self.out_dim % self.groups):
            raise ValueError(
                f"{self.name}: dims {self.in_dim}->{self.out_dim} not divisible by {self.groups} groups"
            )
        if self.batch_norm and not self.bias:
            raise ValueError(f"{self.name}: batch_norm folding needs a bias")
        return self


class NetDescriptor(BaseModel):
    """
    Architecture descriptor stored at the head of every weight file

    The topology parameters (strides, lookaheads, sizes) determine the layer
    list; the stored list must match it so fixtures stay self-describing.
    Kernel is (freq, time).
    """

    n_erb: int = Field(32, gt=0)
    nb_df: int = Field(101, gt=0)
    df_order: int = Field(5, ge=1)
    conv_ch: int = Field(64, gt=0, description="Channels C of every conv block")
    groups: int = Field(8, ge=1, description="Groups P of grouped linear/GRU layers")
    emb_dim: int = Field(512, gt=0, description="Embedding / GRU hidden size")
    kernel: Tuple[int, int] = Field((3, 2), description="Depthwise kernel (freq, time)")
    erb_strides: List[int] = Field(default_factory=lambda: [1, 2, 2, 1])
    erb_lookahead: List[int] = Field(default_factory=lambda: [1, 1, 0, 0])
    df_strides: List[int] = Field(default_factory=lambda: [1, 2])
    df_lookahead: List[int] = Field(default_factory=lambda: [1, 1])
    grouped_bias: bool = Field(False, description="Bias on grouped linear/GRU layers")
    batch_norm: bool = False
    l_dnn: Optional[int] = Field(None, description="Total network lookahead in frames")
    layers: List[LayerSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_topology(self):
        if self.kernel != (3, 2):
            raise ValueError(f"only (freq=3, time=2) kernels are supported, got {self.kernel}")
        if len(self.erb_strides) != len(self.erb_lookahead) or not self.erb_strides:
            raise ValueError("erb_strides and erb_lookahead must be non-empty and of equal length")
        if len(self.df_strides) != len(self.df_lookahead) or not self.df_strides:
            raise ValueError("df_strides and df_lookahead must be non-empty and of equal length")
        if self.conv_ch % self.groups or self.emb_dim % self.groups:
            raise ValueError(f"conv_ch and emb_dim must be divisible by {self.groups} groups")

        lookahead = max(sum(self.erb_lookahead), sum(self.df_lookahead))
        if self.l_dnn is None:
            self.l_dnn = lookahead
        elif self.l_dnn != lookahead:
            raise ValueError(f"l_dnn {self.l_dnn} does not match the conv lookaheads (total {lookahead})")

        expected = self.build_layers()
        if not self.layers:
            self.layers = expected
        elif [l.model_dump() for l in self.layers] != [l.model_dump() for l in expected]:
            raise ValueError("declared layer list does not match the topology parameters")
        return self

    @classmethod
    def for_run(cls, n_erb: int, nb_df: int, df_order: int, l_dnn: int = 2, **kwargs) -> "NetDescriptor":
        """
        Default topology sized for a run: lookahead frames go to the leading
        conv layers of both encoders, one per layer, then a second round
        """
        n_erb_layers = len(kwargs.get("erb_strides", [1, 2, 2, 1]))
        n_df_layers = len(kwargs.get("df_strides", [1, 2]))

        def spread(n_layers: int) -> List[int]:
            if l_dnn > 2 * n_layers:
                raise ValueError(f"l_dnn {l_dnn} exceeds what {n_layers} conv layers can look ahead")
            return [int(l_dnn > i) + int(l_dnn > n_layers + i) for i in range(n_layers)]

        kwargs.setdefault("erb_lookahead", spread(n_erb_layers))
        kwargs.setdefault("df_lookahead", spread(n_df_layers))
        return cls(n_erb=n_erb, nb_df=nb_df, df_order=df_order, **kwargs)

    def erb_freqs(self) -> List[int]:
        """Frequency size at the input of each ERB encoder layer plus the final size"""
        sizes = [self.n_erb]
        for s in self.erb_strides:
            sizes.append(math.ceil(sizes[-1] / s))
        return sizes

    def df_freqs(self) -> List[int]:
        sizes = [self.nb_df]
        for s in self.df_strides:
            sizes.append(math.ceil(sizes[-1] / s))
        return sizes

    def build_layers(self) -> List[LayerSpec]:
        C, P, E = self.conv_ch, self.groups, self.emb_dim
        ef, dff = self.erb_freqs(), self.df_freqs()
        bn, gb = self.batch_norm, self.grouped_bias
        layers = []

        for i, (s, la) in enumerate(zip(self.erb_strides, self.erb_lookahead)):
            layers.append(LayerSpec(
                name=f"enc.erb_conv{i}", kind="sepconv", in_dim=1 if i == 0 else C, out_dim=C,
                lookahead=la, fstride=s, freq_bins=ef[i + 1], batch_norm=bn,
            ))
        for j, (s, la) in enumerate(zip(self.df_strides, self.df_lookahead)):
            layers.append(LayerSpec(
                name=f"enc.df_conv{j}", kind="sepconv", in_dim=2 if j == 0 else C, out_dim=C,
                lookahead=la, fstride=s, freq_bins=dff[j + 1], batch_norm=bn,
            ))
        layers += [
            LayerSpec(name="enc.erb_fc_emb", kind="glinear", in_dim=C * ef[-1], out_dim=E, groups=P, bias=gb),
            LayerSpec(name="enc.df_fc_emb", kind="glinear", in_dim=C * dff[-1], out_dim=E, groups=P, bias=gb),
            LayerSpec(name="enc.emb_gru", kind="ggru", in_dim=E, out_dim=E, groups=P, bias=gb),
            LayerSpec(name="erb_dec.fc_emb", kind="glinear", in_dim=E, out_dim=C * ef[-1], groups=P, bias=gb),
        ]
        for i in reversed(range(len(self.erb_strides))):
            layers.append(LayerSpec(
                name=f"erb_dec.pconv{i}", kind="pconv", in_dim=C, out_dim=C, freq_bins=ef[i + 1],
            ))
            layers.append(LayerSpec(
                name=f"erb_dec.conv{i}", kind="upconv", in_dim=C, out_dim=C if i > 0 else 1,
                fstride=self.erb_strides[i], freq_bins=ef[i], batch_norm=bn and i > 0,
            ))
        layers += [
            LayerSpec(name="df_dec.df_gru", kind="ggru", in_dim=E, out_dim=E, groups=P, bias=gb),
            LayerSpec(name="df_dec.df_out", kind="glinear", in_dim=E, out_dim=self.df_order * self.nb_df * 2),
            LayerSpec(name="df_dec.df_convp", kind="pconv", in_dim=2, out_dim=2 * self.df_order, freq_bins=self.nb_df),
            LayerSpec(name="df_dec.alpha", kind="glinear", in_dim=E, out_dim=1),
        ]
        return layers

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def tensor_specs(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """(name, shape) of every stored tensor in file order"""
        kf, kt = self.kernel
        specs = []
        for l in self.layers:
            if l.kind in ("sepconv", "upconv"):
                specs.append((f"{l.name}.depthwise", (l.in_dim, kf, kt)))
                specs.append((f"{l.name}.pointwise", (l.out_dim, l.in_dim)))
            elif l.kind == "pconv":
                specs.append((f"{l.name}.weight", (l.out_dim, l.in_dim)))
            elif l.kind == "glinear":
                specs.append((f"{l.name}.weight", (l.groups, l.in_dim // l.groups, l.out_dim // l.groups)))
            elif l.kind == "ggru":
                gi, gh = l.in_dim // l.groups, l.out_dim // l.groups
                specs.append((f"{l.name}.weight_ih", (l.groups, 3, gi, gh)))
                specs.append((f"{l.name}.weight_hh", (l.groups, 3, gh, gh)))

            if l.bias and l.kind == "ggru":
                specs.append((f"{l.name}.bias_ih", (l.groups, 3, l.out_dim // l.groups)))
                specs.append((f"{l.name}.bias_hh", (l.groups, 3, l.out_dim // l.groups)))
            elif l.bias:
                specs.append((f"{l.name}.bias", (l.out_dim,)))
            if l.batch_norm:
                for stat in ("gamma", "beta", "mean", "var"):
                    specs.append((f"{l.name}.bn_{stat}", (l.out_dim,)))
        return specs


@dataclass
class NetState:
    """Recurrent hidden states per GRU layer, shape groups x hidden/groups"""

    hidden: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class NetOutputs:
    """Per-frame network outputs: G (frames x n_erb), C^N (frames x N x nb_df), alpha (frames)"""

    band_gains: np.ndarray
    df_coefs: np.ndarray
    alpha: np.ndarray
    state: NetState = field(default_factory=NetState)


class LayerComplexity(BaseModel):
    name: str
    kind: str
    params: int
    dense_params: int = Field(..., description="Parameters of the ungrouped / non-separable equivalent")
    macs_per_frame: int


class ComplexityReport(BaseModel):
    """Exact parameter count and multiply-accumulates per second"""

    param_count: int
    macs_per_frame: int
    frames_per_second: float
    macs_per_second: float
    layers: List[LayerComplexity] = Field(default_factory=list)
