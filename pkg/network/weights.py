"""
Weight container and the DFNW file codec

File layout (little endian):
    magic b"DFNW" | u32 version | u32 header length | JSON header | f32 tensors

The JSON header holds the architecture descriptor and the (name, shape) list
of the tensors that follow, in descriptor order.
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Union

import numpy as np

from services.errors import ConfigurationError

from .models import NetDescriptor

logger = logging.getLogger(__name__)

MAGIC = b"DFNW"
VERSION = 1
BN_EPS = 1e-5
_PREAMBLE = struct.Struct("<4sII")


@dataclass
class NetworkWeights:
    """Named f32 tensors plus the descriptor they were built for; read-only once created"""

    descriptor: NetDescriptor
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()
        for name, t in self.tensors.items():
            t = np.array(t, dtype=np.float32)
            t.flags.writeable = False
            self.tensors[name] = t

    def validate(self) -> None:
        """
        Check every tensor against the descriptor

        Raises:
            ConfigurationError: On missing, unexpected, misshaped or non-finite tensors
        """
        expected = dict(self.descriptor.tensor_specs())
        missing = sorted(set(expected) - set(self.tensors))
        unexpected = sorted(set(self.tensors) - set(expected))
        if missing or unexpected:
            raise ConfigurationError(f"Weight tensors do not match the descriptor (missing {missing}, unexpected {unexpected})")
        for name, shape in expected.items():
            t = np.asarray(self.tensors[name])
            if t.shape != tuple(shape):
                raise ConfigurationError(f"Tensor {name} has shape {t.shape}, descriptor says {tuple(shape)}")
            if not np.all(np.isfinite(t)):
                raise ConfigurationError(f"Tensor {name} holds non-finite values")

    def get(self, name: str) -> np.ndarray:
        return self.tensors[name].astype(np.float64)

    def optional(self, name: str):
        t = self.tensors.get(name)
        return None if t is None else t.astype(np.float64)

    @classmethod
    def zeros(cls, descriptor: NetDescriptor) -> "NetworkWeights":
        """All-zero weights; batch-norm statistics are neutral (gamma 1, variance 1)"""
        tensors = {}
        for name, shape in descriptor.tensor_specs():
            fill = 1.0 if name.endswith((".bn_gamma", ".bn_var")) else 0.0
            tensors[name] = np.full(shape, fill, dtype=np.float32)
        return cls(descriptor, tensors)

    @classmethod
    def init_random(cls, descriptor: NetDescriptor, seed: int = 42) -> "NetworkWeights":
        """Seeded random weights scaled by fan-in; biases zero, batch norm neutral"""
        rng = np.random.default_rng(seed)
        tensors = cls.zeros(descriptor).tensors
        tensors = {k: np.array(v) for k, v in tensors.items()}
        for name, shape in descriptor.tensor_specs():
            suffix = name.rsplit(".", 1)[1]
            if suffix == "depthwise":
                fan_in = shape[1] * shape[2]
            elif suffix in ("pointwise", "weight"):
                fan_in = shape[1]
            elif suffix in ("weight_ih", "weight_hh"):
                fan_in = shape[2]
            else:
                continue
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(np.float32)
        return cls(descriptor, tensors)

    @classmethod
    def identity(cls, descriptor: NetDescriptor, df_lookahead: int = 1) -> "NetworkWeights":
        """
        Pass-through fixture: gains 1, alpha 0.5 and a single unit DF tap on the current frame

        With zero weights every head reduces to its bias, so the final ERB
        decoder bias saturates the sigmoid and the DF bias sets tap df_lookahead,
        which multiplies X(t) when the filter runs with that lookahead.
        """
        if not 0 <= df_lookahead < descriptor.df_order:
            raise ConfigurationError(f"df_lookahead must lie in [0, {descriptor.df_order}), got {df_lookahead}")
        tensors = {k: np.array(v) for k, v in cls.zeros(descriptor).tensors.items()}
        tensors["erb_dec.conv0.bias"][:] = 40.0
        df_bias = tensors["df_dec.df_out.bias"].reshape(descriptor.df_order, descriptor.nb_df, 2)
        df_bias[df_lookahead, :, 0] = 1.0
        return cls(descriptor, tensors)


def fold_batch_norm(weights: NetworkWeights) -> NetworkWeights:
    """
    Fold inference-mode batch norm into the preceding pointwise conv

    Returns the weights unchanged when the descriptor has no batch norm.
    """
    d = weights.descriptor
    if not d.batch_norm:
        return weights

    tensors = {k: np.array(v, dtype=np.float64) for k, v in weights.tensors.items()}
    for layer in d.layers:
        if not layer.batch_norm:
            continue
        n = layer.name
        gamma, beta = tensors.pop(f"{n}.bn_gamma"), tensors.pop(f"{n}.bn_beta")
        mean, var = tensors.pop(f"{n}.bn_mean"), tensors.pop(f"{n}.bn_var")
        scale = gamma / np.sqrt(var + BN_EPS)
        tensors[f"{n}.pointwise"] = tensors[f"{n}.pointwise"] * scale[:, None]
        tensors[f"{n}.bias"] = (tensors[f"{n}.bias"] - mean) * scale + beta

    folded = NetDescriptor(**{**d.model_dump(exclude={"layers"}), "batch_norm": False})
    logger.debug(f"Folded batch norm into {sum(l.batch_norm for l in d.layers)} conv layers")
    return NetworkWeights(folded, tensors)


def save_weights(weights: NetworkWeights, path: Union[str, Path]) -> Path:
    """Write a DFNW file atomically (temp file in the target directory, then rename)"""
    path = Path(path)
    specs = weights.descriptor.tensor_specs()
    header = json.dumps({
        "descriptor": weights.descriptor.model_dump(mode="json"),
        "tensors": [{"name": name, "shape": list(shape)} for name, shape in specs],
    }).encode("utf-8")

    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
            f.write(header)
            for name, _ in specs:
                f.write(np.ascontiguousarray(weights.tensors[name], dtype="<f4").tobytes())
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"✓ Saved weights to {path}")
    return path


def load_weights(path: Union[str, Path], fold_bn: bool = True) -> NetworkWeights:
    """
    Read and validate a DFNW file

    Args:
        path: Weight file
        fold_bn: Fold batch-norm statistics into the conv weights

    Returns:
        Validated NetworkWeights

    Raises:
        ConfigurationError: If the file is unreadable or does not describe a valid network
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigurationError(f"Cannot read weights {path}: {e}") from e

    if len(raw) < _PREAMBLE.size:
        raise ConfigurationError(f"{path} is too short to be a weight file")
    magic, version, header_len = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise ConfigurationError(f"{path} is not a weight file (magic {magic!r})")
    if version != VERSION:
        raise ConfigurationError(f"{path} has unsupported weight format version {version}")

    try:
        header = json.loads(raw[_PREAMBLE.size:_PREAMBLE.size + header_len].decode("utf-8"))
        descriptor = NetDescriptor.model_validate(header["descriptor"])
        declared = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigurationError(f"{path} has a malformed descriptor: {e}") from e

    if declared != descriptor.tensor_specs():
        raise ConfigurationError(f"{path} tensor list does not match its descriptor")

    offset = _PREAMBLE.size + header_len
    expected_bytes = offset + 4 * sum(int(np.prod(shape)) for _, shape in declared)
    if len(raw) != expected_bytes:
        raise ConfigurationError(f"{path} holds {len(raw)} bytes, descriptor needs {expected_bytes}")

    tensors = {}
    for name, shape in declared:
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count

    weights = NetworkWeights(descriptor, tensors)
    logger.debug(f"Loaded {len(tensors)} tensors from {path}")
    return fold_batch_norm(weights) if fold_bn else weights
