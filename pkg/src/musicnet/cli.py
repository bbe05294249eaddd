"""Command line entry point: ``train``, ``eval``, ``corr-dump`` and ``synth``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import ConfigError, ParseError, SynthSpec, synth_generate, write_csv, write_labels
from .pipeline import DataError, DivergenceError, RunConfig, corr_dump, evaluate_checkpoint, json_safe, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("musicnet")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    state = train(cfg, out_dir=args.out)
    rep = state.report
    summary = {"n_scales": rep.n_scales, "metrics": json_safe(rep.metrics), "out": str(args.out)}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.out) / "checkpoint.npz"
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    cfg = _load_config(args) if args.config else None
    metrics = json_safe(evaluate_checkpoint(ckpt, cfg, which=args.split))
    print(json.dumps(metrics, indent=2))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"eval_{args.split}.json").write_text(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_corr_dump(args) -> int:
    cfg = _load_config(args)
    mats = corr_dump(cfg, args.out)
    for name, cm in mats.items():
        print(f"{name}: {cm.n_channels} channels written to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if cfg.synth is None:
        raise ConfigError("synth needs a 'synth' generator spec in the config")
    data = synth_generate(SynthSpec.from_dict(cfg.synth), cfg.effective_data_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(data, out / "observations.csv")
    write_labels(data, out / "labels.csv")
    print(f"wrote {len(data)} instances to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="musicnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True, out_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", required=out_required, help="output directory")

    common(sub.add_parser("train", help="train a model and write report, losses and checkpoint"))
    ev = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(ev, config_required=False, out_required=False)
    ev.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.npz)")
    ev.add_argument("--split", choices=("train", "validation", "test"), default="test")
    common(sub.add_parser("corr-dump", help="write LSP-DTW and I-DTW matrices as CSV"))
    common(sub.add_parser("synth", help="write a synthetic corpus as CSV"))
    return p


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "corr-dump": cmd_corr_dump, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not (args.checkpoint or args.out):
        print("error: eval needs --checkpoint or --out", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
