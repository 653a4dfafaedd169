"""``tfc`` command line: degrade, train, enhance, evaluate.

Exit codes: 0 success, 1 partial data failure, 2 usage or configuration error.
Set ``TFC_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from . import audio, degrade, metrics
from .conformer import VARIANTS
from .errors import AudioFormatError, ConfigError, InvalidInput, TfcError
from .generator import GeneratorConfig
from .inference import enhance_waveform
from .spectral import StftConfig
from .train import TrainConfig, fit, load_model

log = logging.getLogger("tfcmusic")

SECTIONS = {
    "degrade": degrade.DegradationSpec,
    "generator": GeneratorConfig,
    "train": TrainConfig,
    "stft": StftConfig,
}


def load_config(path):
    """Read a YAML/JSON config; unknown sections or keys raise ConfigError."""
    if not path:
        return {name: {} for name in SECTIONS}
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    out = {}
    for name, cls in SECTIONS.items():
        section = raw.get(name) or {}
        bad = set(section) - set(cls.__dataclass_fields__)
        if bad:
            raise ConfigError(f"{path}: unknown keys in [{name}]: {sorted(bad)}")
        out[name] = dict(section)
    return out


def overrides(args, mapping):
    """Command-line values (when given) keyed by config field name."""
    return {field: getattr(args, attr) for attr, field in mapping.items() if getattr(args, attr, None) is not None}


def echo(title, payload):
    print(f"# effective {title}")
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


# -- commands -------------------------------------------------------------


def cmd_degrade(args):
    cfg = load_config(args.config)
    spec = degrade.DegradationSpec(**{**cfg["degrade"], **overrides(args, {"seed": "seed"})})
    echo("degradation spec", spec.to_dict())
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    if not in_dir.is_dir():
        raise ConfigError(f"{in_dir} is not a directory")
    files = sorted(in_dir.glob("*.wav"))
    if not files:
        raise ConfigError(f"no WAV files in {in_dir}")
    banks = degrade.load_banks(spec)
    entries, failures = [], []
    for index, path in enumerate(files):
        try:
            clean = audio.read_wav(path)
            example = degrade.degrade(clean, spec, index=index, banks=banks)
        except (AudioFormatError, InvalidInput) as exc:
            failures.append((path.name, str(exc)))
            continue
        entries.append(degrade.write_pair(out_dir, path.stem, example, spec))
    manifest_path = out_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    manifest.setdefault("train", [])
    manifest.setdefault("valid", [])
    manifest[args.section] = entries
    manifest.setdefault("spec", {})[args.section] = spec.to_dict()
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(entries)} pairs to {out_dir / 'pairs'} ({args.section} section of {manifest_path})")
    for name, err in failures:
        print(f"skipped {name}: {err}", file=sys.stderr)
    return 1 if failures else 0


def cmd_train(args):
    cfg = load_config(args.config)
    train_over = overrides(
        args,
        {
            "manifest": "manifest",
            "variant": "variant",
            "out": "out",
            "epochs": "epochs",
            "lr": "lr",
            "batch_size": "batch_size",
            "seed": "seed",
            "max_steps": "max_steps",
            "stop_loss_ratio": "stop_loss_ratio",
            "log_path": "log_path",
        },
    )
    tcfg = TrainConfig.from_dict({**cfg["train"], **train_over})
    gen_over = overrides(args, {"base_channels": "base_channels"})
    gcfg = GeneratorConfig(**{**cfg["generator"], **gen_over, "variant": tcfg.variant})
    scfg = StftConfig(**cfg["stft"])
    echo("configuration", {"train": tcfg.to_dict(), "generator": gcfg.to_dict(), "stft": asdict(scfg)})
    path = fit(tcfg, gcfg, scfg, resume=args.resume)
    print(f"checkpoint: {path}")
    return 0


def _enhance_file(model, stft_cfg, src, dst):
    x = audio.read_wav(src)
    audio.write_wav(dst, enhance_waveform(model, x, stft_cfg))


def cmd_enhance(args):
    model, stft_cfg, config, _ = load_model(args.ckpt)
    if args.variant and args.variant != model.config.variant:
        raise ConfigError(f"checkpoint holds variant {model.config.variant}, not {args.variant}")
    echo("model configuration", config)
    src, dst = Path(args.in_path), Path(args.out_path)
    if src.is_dir():
        files = sorted(src.glob("*.wav"))
        if not files:
            raise ConfigError(f"no WAV files in {src}")
        failures = []
        for f in files:
            try:
                _enhance_file(model, stft_cfg, f, dst / f.name)
            except (AudioFormatError, InvalidInput) as exc:
                failures.append((f.name, str(exc)))
        for name, err in failures:
            print(f"skipped {name}: {err}", file=sys.stderr)
        print(f"enhanced {len(files) - len(failures)} files into {dst}")
        return 1 if failures else 0
    _enhance_file(model, stft_cfg, src, dst)
    print(f"enhanced {src} -> {dst}")
    return 0


def format_table(report):
    lines = [f"{'metric':<10} {'mean':>12} {'ci95':>10} {'n':>5}"]
    for name, agg in report.aggregates.items():
        ci = "-" if agg["ci95"] is None else f"{agg['ci95']:.4f}"
        lines.append(f"{name:<10} {agg['mean']:>12.4f} {ci:>10} {agg['n']:>5}")
    return "\n".join(lines)


def cmd_evaluate(args):
    report = metrics.evaluate(args.ref, args.est, args.ref_suffix, args.est_suffix)
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(format_table(report))
    for err in report.errors:
        print(f"excluded {err['id']}: {err['error']}", file=sys.stderr)
    return 0 if report.ok else 1


# -- parser ---------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="tfc", description="TF-Conformer music enhancement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="simulate degraded/clean training pairs")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of clean 16 kHz mono WAVs")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--section", choices=("train", "valid"), default="train", help="manifest section to write")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train a generator")
    p.add_argument("--manifest")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--stop-loss-ratio", dest="stop_loss_ratio", type=float)
    p.add_argument("--log", dest="log_path")
    p.add_argument("--resume", help="resume from a <checkpoint>.state file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a WAV file or directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--variant", choices=VARIANTS, help="fail unless the checkpoint holds this variant")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score estimates against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--ref-suffix", dest="ref_suffix", default="")
    p.add_argument("--est-suffix", dest="est_suffix", default="")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("TFC_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TypeError) as exc:
        print(f"tfc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TfcError as exc:
        print(f"tfc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
