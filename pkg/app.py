"""
Command-line entrypoint: streaming enhancement and the experiment harness

Subcommands: enhance, oracle-sweep, synth, eval, gradcheck, describe-weights,
init-weights. Run parameters come from flags, then a --config key=value file,
then DFN_* environment variables, then the defaults.

Exit codes: 0 ok, 1 contract/validation/usage failure, 2 I/O failure.
"""

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from network import NetDescriptor, NetworkWeights, complexity_report, load_weights, save_weights
from services.audio_io import write_text
from services.augment import synthesize_dataset
from services.enhance import enhance_file
from services.errors import AudioIOError, ConfigurationError, ContractViolation
from services.loss import run_gradcheck
from services.metrics import evaluate_pairs
from services.models import SNR_SET_DB, RunConfig
from services.oracle import DEFAULT_DF_CONTEXT, run_fft_sweep

load_dotenv()

logger = logging.getLogger("app")

ENV_PREFIX = "DFN_"
EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_IO = 2
NEGATIVE_LIST = re.compile(r"^-\d+(\.\d+)?(,\s*-?\d+(\.\d+)?)*$")

RUN_FLAGS = {
    "sample_rate": (int, "Model sample rate in Hz"),
    "fft_size": (int, "STFT window in samples"),
    "overlap": (int, "STFT overlap in percent, 50 or 75"),
    "n_erb": (int, "Number of ERB bands"),
    "f_df": (float, "Upper deep-filtering frequency in Hz"),
    "df_order": (int, "Deep filter order N"),
    "l_df": (int, "Deep filter lookahead in frames"),
    "l_dnn": (int, "Network lookahead in frames"),
    "atten_limit": (str, "Attenuation limit in dB, or 'off'"),
    "seed": (int, "Seed for every random draw"),
    "min_bins_per_band": (int, "Minimum ERB band width in bins"),
    "norm_decay": (float, "Feature normalization decay in seconds"),
}


class UsageError(Exception):
    """Bad command line; exits with the contract failure code"""


class CliParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting; comma lists of negative numbers are values, not flags"""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = NEGATIVE_LIST

    def error(self, message):
        raise UsageError(message)


# ============================================================================
# Configuration
# ============================================================================

def _split_list(text: str, cast=float) -> List:
    try:
        return [cast(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise UsageError(f"cannot parse list '{text}': {e}") from e


def _split_methods(text: str) -> List[str]:
    methods = re.findall(r"DF\(\s*\d+\s*,\s*\d+\s*\)|DF|CRM", text, flags=re.IGNORECASE)
    if not methods:
        raise UsageError(f"no oracle method in '{text}' (use CRM, DF or DF(N,l))")
    return methods


def _normalize_key(key: str) -> str:
    key = key.strip()
    if key.upper().startswith(ENV_PREFIX):
        key = key[len(ENV_PREFIX):]
    return key.lower().replace("-", "_")


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge run parameters: flags > --config file > DFN_* environment > defaults

    Raises:
        ConfigurationError: On unknown keys in the config file
        OSError: If the config file does not exist
    """
    values: Dict[str, Any] = {}
    for name in RUN_FLAGS:
        env = os.getenv(f"{ENV_PREFIX}{name.upper()}")
        if env is not None:
            values[name] = env

    config_file = getattr(args, "config", None)
    if config_file:
        if not Path(config_file).is_file():
            raise FileNotFoundError(f"Config file {config_file} not found")
        for key, value in dotenv_values(config_file).items():
            name = _normalize_key(key)
            if name not in RUN_FLAGS:
                raise ConfigurationError(f"Unknown key '{key}' in {config_file}")
            values[name] = value

    for name in RUN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value

    return RunConfig(**values)


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else os.getenv(f"{ENV_PREFIX}LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ============================================================================
# Subcommands
# ============================================================================

def cmd_enhance(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    result = enhance_file(args.input, args.output, args.weights, config, compensate_delay=args.compensate_delay)
    print(f"✓ Wrote {args.output} (latency {result.latency_ms:.1f} ms, delay {result.delay_samples} samples)")
    return EXIT_OK


def cmd_oracle_sweep(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    report = run_fft_sweep(
        seed=config.seed,
        fft_sizes=_split_list(args.fft, int),
        input_snrs=_split_list(args.snr),
        methods=_split_methods(args.methods),
        n_fixtures=args.fixtures,
        context_frames=args.context,
        crm_mag_cap=args.crm_cap,
        overlap=config.overlap,
        sample_rate=config.sample_rate,
        duration_s=args.duration,
        noise=args.noise,
        workers=args.workers,
    )
    write_text(args.out, report.to_csv())
    print(f"✓ Wrote {len(report.rows)} rows to {args.out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    report = synthesize_dataset(
        args.manifest,
        args.out,
        seed=config.seed,
        snr_set=_split_list(args.snr_set),
        sample_rate=config.sample_rate,
        atten_limit=args.atten_target,
        workers=args.workers,
    )
    print(f"✓ Wrote {report.written} triples, index {report.index_file}")
    if report.failures:
        print(f"⚠️ {len(report.failures)} rows failed, see {report.failure_file}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    result = evaluate_pairs(args.pairs, workers=args.workers)
    write_text(args.out, result.to_csv())
    mean = "undefined" if result.si_sdr_db is None else f"{result.si_sdr_db:.3f} dB"
    print(f"✓ Evaluated {result.pairs_evaluated} pairs ({len(result.skipped)} skipped), mean SI-SDR {mean}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    report = run_gradcheck(seed=config.seed, c=args.c, trials=args.trials, tolerance=args.tolerance)
    print(f"max relative error: {report.max_rel_error:.3e}")
    if not report.passed:
        print(f"❌ gradient check failed (tolerance {report.tolerance:g}, finite at zero: {report.finite_at_zero})")
        return EXIT_CONTRACT
    print("✓ gradient check passed")
    return EXIT_OK


def cmd_describe_weights(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    weights = load_weights(args.weights)
    report = complexity_report(weights, config.stft_config())
    print(json.dumps({
        "descriptor": weights.descriptor.model_dump(mode="json", exclude={"layers"}),
        "layers": [l.model_dump(mode="json") for l in report.layers],
        "param_count": report.param_count,
        "macs_per_second": report.macs_per_second,
    }, indent=2))
    return EXIT_OK


def cmd_init_weights(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    descriptor = NetDescriptor.for_run(
        n_erb=config.n_erb,
        nb_df=config.nb_df,
        df_order=config.df_order,
        l_dnn=config.l_dnn,
        conv_ch=args.conv_ch,
        groups=args.groups,
        emb_dim=args.emb_dim,
    )
    if args.kind == "random":
        weights = NetworkWeights.init_random(descriptor, seed=config.seed)
    elif args.kind == "identity":
        weights = NetworkWeights.identity(descriptor, df_lookahead=config.l_df)
    else:
        weights = NetworkWeights.zeros(descriptor)
    save_weights(weights, args.output)
    print(f"✓ Wrote {args.kind} weights to {args.output} ({complexity_report(descriptor).param_count} params)")
    return EXIT_OK


# ============================================================================
# Parser
# ============================================================================

def _run_options() -> argparse.ArgumentParser:
    parent = CliParser(add_help=False)
    group = parent.add_argument_group("run configuration")
    for name, (cast, text) in RUN_FLAGS.items():
        default = RunConfig.model_fields[name].default
        group.add_argument(
            f"--{name.replace('_', '-')}",
            dest=name,
            type=cast,
            default=None,
            help=f"{text} (default: {'off' if default is None else default})",
        )
    group.add_argument("--config", default=None, help="key=value file merged under the flags (default: none)")
    group.add_argument("--verbose", action="store_true", help="Debug logging (default: off)")
    return parent


def build_parser() -> CliParser:
    parser = CliParser(prog="app.py", description="Two-stage speech enhancement and experiment harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    run = _run_options()

    p = sub.add_parser("enhance", parents=[run], help="Enhance a WAV file")
    p.add_argument("--input", required=True, help="Noisy WAV")
    p.add_argument("--output", required=True, help="Enhanced WAV")
    p.add_argument("--weights", required=True, help="Network weight file (.dfnw)")
    p.add_argument("--compensate-delay", action="store_true", help="Remove the algorithmic delay (default: off)")
    p.set_defaults(handler=cmd_enhance)

    p = sub.add_parser("oracle-sweep", parents=[run], help="Oracle DF vs CRM over FFT sizes")
    p.add_argument("--fft", default="240,480,960", help="FFT sizes (default: 240,480,960)")
    p.add_argument("--snr", default="0,5,10", help="Input SNRs in dB (default: 0,5,10)")
    p.add_argument("--methods", default="DF(5,1),CRM", help="Methods: CRM, DF or DF(N,l) (default: DF(5,1),CRM)")
    p.add_argument("--fixtures", type=int, default=20, help="Fixtures per SNR (default: 20)")
    p.add_argument("--context", type=int, default=DEFAULT_DF_CONTEXT, help=f"LS context frames (default: {DEFAULT_DF_CONTEXT})")
    p.add_argument("--crm-cap", type=float, default=None, help="CRM magnitude cap (default: none)")
    p.add_argument("--duration", type=float, default=1.0, help="Fixture length in seconds (default: 1.0)")
    p.add_argument("--noise", choices=("white", "pink"), default="white", help="Fixture noise (default: white)")
    p.add_argument("--workers", type=int, default=1, help="Parallel cells (default: 1)")
    p.add_argument("--out", default="oracle_report.csv", help="CSV report (default: oracle_report.csv)")
    p.set_defaults(handler=cmd_oracle_sweep)

    p = sub.add_parser("synth", parents=[run], help="Synthesize a training set from a manifest")
    p.add_argument("--manifest", required=True, help="JSON-lines manifest")
    p.add_argument("--out", required=True, help="Output directory")
    default_snrs = ",".join(f"{s:g}" for s in SNR_SET_DB)
    p.add_argument("--snr-set", default=default_snrs, help=f"SNR set in dB (default: {default_snrs})")
    p.add_argument("--atten-target", action="store_true", help="Write attenuation-limited targets (default: off)")
    p.add_argument("--workers", type=int, default=1, help="Parallel rows (default: 1)")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("eval", parents=[run], help="SI-SDR over WAV pairs")
    p.add_argument("--pairs", required=True, help="Pair list file or directory with enhanced/ and clean/")
    p.add_argument("--out", default="eval.csv", help="CSV report (default: eval.csv)")
    p.add_argument("--workers", type=int, default=1, help="Parallel pairs (default: 1)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[run], help="Verify the spectral loss gradient")
    p.add_argument("--c", type=float, default=0.6, help="Compression exponent (default: 0.6)")
    p.add_argument("--trials", type=int, default=100, help="Random trials (default: 100)")
    p.add_argument("--tolerance", type=float, default=1e-4, help="Max relative error (default: 1e-4)")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("describe-weights", parents=[run], help="Print a weight file's descriptor and complexity")
    p.add_argument("--weights", required=True, help="Network weight file (.dfnw)")
    p.set_defaults(handler=cmd_describe_weights)

    p = sub.add_parser("init-weights", parents=[run], help="Write a fixture weight file")
    p.add_argument("--output", required=True, help="Weight file to write")
    p.add_argument("--kind", choices=("random", "identity", "zeros"), default="random", help="Weights (default: random)")
    p.add_argument("--conv-ch", type=int, default=64, help="Conv channels C (default: 64)")
    p.add_argument("--groups", type=int, default=8, help="Groups P (default: 8)")
    p.add_argument("--emb-dim", type=int, default=512, help="Embedding size (default: 512)")
    p.set_defaults(handler=cmd_init_weights)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.verbose)
        return args.handler(args)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"❌ usage: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except (AudioIOError, OSError) as e:
        logger.error(f"❌ {e}")
        return EXIT_IO
    except (ContractViolation, ConfigurationError, ValidationError, ValueError) as e:
        logger.error(f"❌ {e}")
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
