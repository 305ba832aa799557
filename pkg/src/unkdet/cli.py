"""Command-line front end.

Subcommands cover the full pipeline::

    unkdet gen-data  --config cfg.json --out data/
    unkdet pretrain  --config cfg.json --data data/ --out ckpt-src/
    unkdet adapt     --config cfg.json --init ckpt-src/ --data data/ --out ckpt-tgt/
    unkdet eval      --ckpt ckpt-tgt/ --data data/ --report report.csv
    unkdet ablate    --config cfg.json --grid method --report ablation.csv

``eval`` needs no config: checkpoints embed the detector architecture, and
the training-state sidecar records which method produced the weights, which
decides whether evaluation decodes with the collaborative layers.  ``ablate``
renders a fresh dataset from the config unless ``--data`` points at an
existing one.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from collections import Counter

from .adapt import adapt_target, method_uses_collab
from .checkpoint import (TrainingState, load_checkpoint, rng_state_of,
                         save_checkpoint)
from .config import load_config
from .errors import ConfigError, UsageError
from .experiment import (ABLATION_GRIDS, ablate, format_row,
                         pretrain_from_config, write_report)
from .metrics import EvalConfig, evaluate
from .scenes import load_dataset, render_dataset


def _cmd_gen_data(args) -> int:
    config = load_config(args.config)
    manifest = render_dataset(config.data, args.out)
    counts = Counter(rec["split"] for rec in manifest["records"])
    print(f"wrote {sum(counts.values())} scenes to {args.out} "
          f"({', '.join(f'{k}={v}' for k, v in counts.items())})")
    return 0


def _cmd_pretrain(args) -> int:
    config = load_config(args.config)
    capture: dict = {}
    params = pretrain_from_config(config, args.data, capture=capture)
    schedule = config.pretrain
    state = TrainingState(step=schedule.steps, method="source",
                          seed=schedule.seed, alpha=schedule.alpha,
                          optimizer=capture["optimizer"],
                          rng_state=rng_state_of(capture["rng"]))
    save_checkpoint(args.out, params, config.detector, state)
    print(f"pretrained {schedule.steps} steps; checkpoint at {args.out}")
    return 0


def _cmd_adapt(args) -> int:
    config = load_config(args.config)
    source_params, _, _ = load_checkpoint(args.init)
    scenes = load_dataset(args.data, "target_train")
    capture: dict = {}
    ts = adapt_target(scenes, source_params, config.adapt, config.detector,
                      config.labels, capture=capture)
    state = TrainingState(step=config.adapt.steps, method=config.adapt.method,
                          seed=config.adapt.seed, alpha=config.adapt.alpha,
                          optimizer=capture["optimizer"],
                          rng_state=rng_state_of(capture["rng"]))
    save_checkpoint(args.out, ts.student, config.detector, state)
    print(f"adapted {config.adapt.steps} steps with method "
          f"{config.adapt.method}; checkpoint at {args.out}")
    return 0


def _cmd_eval(args) -> int:
    params, detector, state = load_checkpoint(args.ckpt)
    method = state.method if state is not None else "source"
    seed = state.seed if state is not None else 0
    scenes = load_dataset(args.data, "target_eval")
    eval_config = EvalConfig(use_collab=method_uses_collab(method))
    report = evaluate(params, scenes, detector, eval_config)
    write_report(args.report, [format_row(method, seed, report)])
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"known mAP {report.known_map:.2f}  U-Recall {report.u_recall:.2f}"
          f"  H-Score {report.h_score:.2f}  ({report.images} images); "
          f"report at {args.report}")
    return 0


def _cmd_ablate(args) -> int:
    config = load_config(args.config)
    if args.data is not None:
        ablate(config, args.grid, args.data, args.report)
    else:
        with tempfile.TemporaryDirectory(prefix="unkdet-ablate-") as tmp:
            render_dataset(config.data, tmp)
            ablate(config, args.grid, tmp, args.report)
    print(f"ablation over '{args.grid}' "
          f"({len(ABLATION_GRIDS[args.grid])} rows) at {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unkdet",
        description=("toy set-prediction detector with mean-teacher domain "
                     "adaptation, collaborative decoding, and "
                     "principal-axis unknown labeling"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render source/target scene splits")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="supervised training on source data")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("adapt",
                       help="mean-teacher adaptation on unlabeled target data")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--init", required=True, help="source checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("eval", help="score a checkpoint on the eval split")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--report", required=True, help="CSV report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="sweep one knob and report every entry")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--grid", required=True, choices=sorted(ABLATION_GRIDS),
                   help="which knob to sweep")
    p.add_argument("--report", required=True, help="CSV report path")
    p.add_argument("--data", default=None,
                   help="reuse an existing dataset directory instead of "
                        "rendering one from the config")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
