"""
Objective evaluation: scale-invariant SDR over single signals and WAV pair sets
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .audio_io import read_wav
from .errors import AudioIOError, ContractViolation, DeepFilterError, SilentSignalError
from .models import EvalResult, EvalRow

logger = logging.getLogger(__name__)

SI_SDR_CAP_DB = 100.0

PathLike = Union[str, Path]
PairSource = Union[PathLike, Sequence[Tuple[PathLike, PathLike]]]


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """
    Scale-invariant SDR in dB, clipped to +-100 dB

    alpha = <est, ref> / ||ref||^2; SI-SDR = 10*log10(||alpha ref||^2 / ||est - alpha ref||^2).
    A silent estimate scores -100 dB.

    Raises:
        ContractViolation: If the lengths differ
        SilentSignalError: If the reference is silent
    """
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ContractViolation(f"si_sdr needs equal lengths, got {est.shape} and {ref.shape}")

    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise SilentSignalError("si_sdr reference is silent")
    if not np.any(est):
        return -SI_SDR_CAP_DB

    target = (np.dot(est, ref) / ref_energy) * ref
    signal = float(np.dot(target, target))
    distortion = float(np.sum((est - target) ** 2))
    if distortion <= signal * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    if signal <= distortion * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return -SI_SDR_CAP_DB
    return float(10.0 * np.log10(signal / distortion))


def read_pairs(source: PairSource) -> List[Tuple[Path, Path]]:
    """
    Resolve (estimate, reference) pairs

    Accepts a directory holding `enhanced/` and `clean/` with matching file
    names, a text file with one `estimate reference` pair per line (comma or
    whitespace separated, '#' comments, paths relative to the file), or a
    sequence of path pairs.

    Raises:
        AudioIOError: If a pairs file cannot be read
    """
    if not isinstance(source, (str, Path)):
        return [(Path(e), Path(r)) for e, r in source]

    source = Path(source)
    if source.is_dir():
        enhanced = sorted((source / "enhanced").glob("*.wav"))
        return [(e, source / "clean" / e.name) for e in enhanced]

    try:
        lines = source.read_text().splitlines()
    except OSError as e:
        raise AudioIOError(f"Failed to read pair list {source}: {e}") from e

    pairs = []
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ContractViolation(f"{source}:{number}: expected 'estimate reference', got '{line}'")
        pairs.append(tuple(p if Path(p).is_absolute() else source.parent / p for p in map(Path, parts)))
    return pairs


def _evaluate_pair(pair: Tuple[Path, Path]) -> Union[EvalRow, str]:
    est_path, ref_path = pair
    try:
        est, est_sr = read_wav(est_path)
        ref, ref_sr = read_wav(ref_path)
        if est_sr != ref_sr:
            return f"{est_path}: sample rate {est_sr} Hz vs reference {ref_sr} Hz"
        if len(est) != len(ref):
            return f"{est_path}: {len(est)} samples vs reference {len(ref)}"
        return EvalRow(pair_id=est_path.stem, si_sdr_db=si_sdr(est, ref))
    except DeepFilterError as e:
        return f"{est_path}: {e}"


def evaluate_pairs(source: PairSource, workers: int = 1) -> EvalResult:
    """
    Per-pair and mean SI-SDR

    Pairs whose lengths or sample rates differ, or that cannot be read, are
    skipped and listed in `skipped`. Rows keep the input order.
    """
    pairs = read_pairs(source)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(_evaluate_pair, pairs))

    rows = [o for o in outcomes if isinstance(o, EvalRow)]
    skipped = [o for o in outcomes if isinstance(o, str)]
    for reason in skipped:
        logger.warning(f"⚠️ Skipped pair {reason}")

    mean = float(np.mean([r.si_sdr_db for r in rows])) if rows else None
    if mean is None:
        logger.warning("⚠️ No pair evaluated; mean SI-SDR undefined")
    else:
        logger.info(f"✓ Evaluated {len(rows)} pairs, mean SI-SDR {mean:.2f} dB")

    return EvalResult(
        si_sdr_db=mean,
        pairs_evaluated=len(rows),
        rows=rows,
        skipped=skipped,
        config={"source": str(source) if isinstance(source, (str, Path)) else "pairs", "workers": workers},
    )
