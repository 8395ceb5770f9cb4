"""Command-line interface.

    tscnpp enhance --in noisy.wav --out clean.wav (--weights F | --seed N)
                   [--stage 1|2] [--pp on|off] [--oracle-gain clean.wav]
                   [--dump-spectra F] [--report-latency] [--config F]
    tscnpp mix --clean F --noise F --snr DB --out F
    tscnpp micro-overfit --out-csv F [--png F] [--steps N] [--seed N]

Exit codes: 0 success, 2 usage error, 3 input-format error, 4 weight-file
error, 5 numerical failure (non-finite values while processing).

A --config file holds key=value lines mirroring the engine and
post-processor fields; explicit flags override file values.
"""

import argparse
import sys

from .engine import EngineConfig, run_enhance
from .errors import NumericalError, WavFormatError, WeightFileError
from .postproc import PpConfig

_ENGINE_KEYS = {
    "weights": str, "seed": int, "stage": int, "pp": str,
    "oracle_gain": str, "precision": str,
}
_PP_KEYS = {
    "alpha_d": float, "beta_dd": float, "xi_min": float, "gain_min": float,
    "quefrency_min": int, "quefrency_max": int, "notch_halfwidth": int,
    "peak_threshold": float,
}


def _parse_config_file(path) -> dict:
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key in _ENGINE_KEYS:
                values[key] = _ENGINE_KEYS[key](val)
            elif key in _PP_KEYS:
                values[key] = _PP_KEYS[key](val)
            else:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def _parse_onoff(value: str, what: str) -> bool:
    if value not in ("on", "off"):
        raise ValueError(f"{what} must be 'on' or 'off', got {value!r}")
    return value == "on"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tscnpp")
    sub = parser.add_subparsers(dest="command", required=True)

    enh = sub.add_parser("enhance", help="denoise a 16 kHz mono PCM16 WAV file")
    enh.add_argument("--in", dest="in_path", required=True, metavar="F")
    enh.add_argument("--out", dest="out_path", required=True, metavar="F")
    enh.add_argument("--weights", metavar="F")
    enh.add_argument("--seed", type=int)
    enh.add_argument("--stage", type=int, choices=(1, 2))
    enh.add_argument("--pp", choices=("on", "off"))
    enh.add_argument("--oracle-gain", dest="oracle_gain", metavar="F")
    enh.add_argument("--dump-spectra", dest="dump_spectra", metavar="F")
    enh.add_argument("--report-latency", action="store_true")
    enh.add_argument("--config", metavar="F")
    enh.add_argument("--precision", choices=("single", "double"))

    mix = sub.add_parser("mix", help="mix clean speech with noise at a target SNR")
    mix.add_argument("--clean", required=True, metavar="F")
    mix.add_argument("--noise", required=True, metavar="F")
    mix.add_argument("--snr", type=float, required=True, metavar="DB")
    mix.add_argument("--out", required=True, metavar="F")

    ovf = sub.add_parser("micro-overfit",
                         help="run the micro overfit curriculum, emit CSV + figure")
    ovf.add_argument("--out-csv", dest="out_csv", required=True, metavar="F")
    ovf.add_argument("--png", metavar="F")
    ovf.add_argument("--steps", type=int, default=200)
    ovf.add_argument("--seed", type=int, default=0)
    return parser


def _engine_config(args) -> EngineConfig:
    values = _parse_config_file(args.config) if args.config else {}
    if args.weights is not None:
        values["weights"] = args.weights
    if args.seed is not None:
        values["seed"] = args.seed
    if args.stage is not None:
        values["stage"] = args.stage
    if args.pp is not None:
        values["pp"] = args.pp
    if args.oracle_gain is not None:
        values["oracle_gain"] = args.oracle_gain
    if args.precision is not None:
        values["precision"] = args.precision

    pp_kwargs = {k: values[k] for k in _PP_KEYS if k in values}
    pp_value = values.get("pp", "on")
    if isinstance(pp_value, str):
        pp_value = _parse_onoff(pp_value, "pp")
    return EngineConfig(
        weights_path=values.get("weights"),
        seed=values.get("seed"),
        stage=values.get("stage", 2),
        pp=pp_value,
        oracle_gain=values.get("oracle_gain"),
        precision=values.get("precision", "single"),
        pp_cfg=PpConfig(**pp_kwargs),
    )


def _cmd_enhance(args) -> int:
    try:
        cfg = _engine_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_enhance(cfg, args.in_path, args.out_path,
                             dump_spectra_path=args.dump_spectra)
    except WeightFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (WavFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if args.report_latency:
        print(report.to_json())
    return 0


def _cmd_mix(args) -> int:
    from .wavio import mix_at_snr, read_wav, write_wav
    try:
        clean = read_wav(args.clean)
        noise = read_wav(args.noise)
        write_wav(args.out, mix_at_snr(clean, noise, args.snr))
    except (WavFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def _cmd_micro_overfit(args) -> int:
    from .errors import DivergenceError
    from .figures import save_loss_curves_png
    from .microtrain import micro_overfit, write_trajectory_csv
    try:
        records, _ = micro_overfit(steps=args.steps, seed=args.seed)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    write_trajectory_csv(args.out_csv, records)
    png = args.png
    if png is None:
        base = str(args.out_csv)
        png = (base[: base.rfind(".")] if "." in base else base) + ".png"
    save_loss_curves_png(png, records)
    print(f"final/initial joint loss: {records[-1].l_total / records[0].l_total:.3f} "
          f"over {records[-1].step} steps")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if args.command == "enhance":
        return _cmd_enhance(args)
    if args.command == "mix":
        return _cmd_mix(args)
    return _cmd_micro_overfit(args)


if __name__ == "__main__":
    sys.exit(main())
