"""
WAV ingestion and emission
Mono PCM 16-bit or 32-bit float; multichannel input is downmixed by averaging.
Writes go through a temporary file and a rename so readers never see partial files.
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import soundfile as sf

from .errors import AudioIOError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SUBTYPES = {
    "pcm16": "PCM_16",
    "float": "FLOAT",
}


def read_wav(path: PathLike) -> Tuple[np.ndarray, int]:
    """
    Read a WAV file as mono float64

    Args:
        path: File to read

    Returns:
        (samples, sample_rate); samples in [-1, 1] for PCM input

    Raises:
        AudioIOError: If the file is missing or not decodable
    """
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except Exception as e:
        raise AudioIOError(f"Failed to read {path}: {e}") from e

    if data.shape[1] > 1:
        logger.debug(f"Downmixing {data.shape[1]} channels of {path}")
    return data.mean(axis=1), int(sample_rate)


def write_wav(path: PathLike, samples: np.ndarray, sample_rate: int, subtype: str = "float") -> Path:
    """
    Write mono samples atomically (temp file + rename)

    Args:
        path: Destination file
        samples: 1-D signal
        sample_rate: Sample rate in Hz
        subtype: "pcm16" or "float"

    Returns:
        The written path

    Raises:
        AudioIOError: If the file cannot be written
    """
    path = Path(path)
    if subtype not in SUBTYPES:
        raise AudioIOError(f"Unsupported WAV subtype '{subtype}' for {path}")

    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise AudioIOError(f"Expected mono samples for {path}, got shape {samples.shape}")
    if subtype == "pcm16":
        samples = np.clip(samples, -1.0, 1.0)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=".tmp", dir=path.parent)
        os.close(fd)
        try:
            sf.write(tmp_name, samples, sample_rate, subtype=SUBTYPES[subtype], format="WAV")
            os.replace(tmp_name, path)
        finally:
            if os.path.exists(tmp_name):
                os.remove(tmp_name)
    except AudioIOError:
        raise
    except Exception as e:
        raise AudioIOError(f"Failed to write {path}: {e}") from e

    return path


def write_text(path: PathLike, text: str) -> Path:
    """Write a text file (CSV, JSON lines, reports) atomically"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "w", newline="") as f:
                f.write(text)
            os.replace(tmp_name, path)
        finally:
            if os.path.exists(tmp_name):
                os.remove(tmp_name)
    except OSError as e:
        raise AudioIOError(f"Failed to write {path}: {e}") from e
    return path
