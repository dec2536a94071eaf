"""Command-line entry points.

Subcommands: gen-data, train-coarse, train-fine, eval, ablate, gradcheck.
Configuration is resolved as flags > config file (--config, JSON) >
built-in defaults; the CITYLOC_SEED environment variable overrides the
master seed last of all. Exit codes: 0 success, 2 config error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import RunConfig, build_config, load_config_file
from .errors import ConfigError, DataError, NumericError
from .scenes import load_corpus
from .training import (
    ABLATION_CELLS,
    ablate,
    checkpoint_meta,
    evaluate,
    load_coarse_model,
    load_fine_model,
    load_checkpoint,
    save_checkpoint,
    train_coarse,
    train_fine,
)

_CONFIG_FLAGS: dict[str, type] = {
    "seed": int,
    "feat_dim": int, "edge_dim": int, "geo_dim": int, "branch_dim": int,
    "global_dim": int, "proj_dim": int, "fuse_dim": int, "head_hidden": int,
    "gamma": float, "bezier_iterations": int,
    "coarse_epochs": int, "coarse_batch": int, "coarse_lr": float,
    "fine_epochs": int, "fine_batch": int, "fine_lr": float,
    "n_submaps": int, "n_queries": int, "ns_min": int, "ns_max": int,
    "nq_min": int, "nq_max": int, "extent": float,
}

_BOOL_FLAGS = ("use_bezier", "use_frequency", "loss_spatial", "loss_object",
               "loss_global", "lambda_head")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file; flags take precedence")
    for name, typ in _CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ,
                            default=None)
    for name in _BOOL_FLAGS:
        flag = name.replace("_", "-")
        parser.add_argument(f"--{flag}", dest=name, action="store_true",
                            default=None)
        parser.add_argument(f"--no-{flag}", dest=name, action="store_false",
                            default=None)
    parser.add_argument("--align-mode", dest="align_mode",
                        choices=("corrected", "literal"), default=None)
    parser.add_argument("--aggregation", dest="aggregation",
                        choices=("gaussian", "maxpool"), default=None)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else None
    overrides = {name: getattr(args, name, None)
                 for name in (*_CONFIG_FLAGS, *_BOOL_FLAGS,
                              "align_mode", "aggregation")}
    env_seed = os.environ.get("CITYLOC_SEED")
    if env_seed is not None:
        try:
            overrides["seed"] = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"CITYLOC_SEED must be an integer, got {env_seed!r}") from e
    return build_config(file_values, **overrides)


def _load_split(data_dir: Path, split: str):
    return load_corpus(Path(data_dir) / split)


def cmd_gen_data(args) -> int:
    from .scenes import generate_splits

    config = _resolve_config(args)
    manifests = generate_splits(config.seed, config.generation_config(), args.out)
    for split, manifest in manifests.items():
        print(f"{split}: {manifest.n_submaps} submaps, "
              f"{manifest.n_queries} queries, checksum {manifest.checksum[:12]}")
    return 0


def cmd_train_coarse(args) -> int:
    config = _resolve_config(args)
    corpus = _load_split(args.data, "train")
    model, report = train_coarse(config, corpus, log=print)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "coarse.npz", model.store,
                    checkpoint_meta(config, "coarse", report.corpus_checksum))
    from .reports import write_report_files

    write_report_files(out, report)
    print(f"saved {out / 'coarse.npz'} (config {config.config_hash()})")
    return 0


def cmd_train_fine(args) -> int:
    config = _resolve_config(args)
    corpus = _load_split(args.data, "train")
    coarse_state = None
    if args.coarse is not None:
        coarse_state, meta = load_checkpoint(args.coarse)
        if meta.get("stage") != "coarse":
            raise DataError(f"--coarse expects a coarse checkpoint, "
                            f"got {meta.get('stage')!r}")
    model, report = train_fine(config, corpus, coarse_state, log=print)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "fine.npz", model.store,
                    checkpoint_meta(config, "fine", report.corpus_checksum))
    from .reports import write_report_files

    write_report_files(out, report)
    print(f"saved {out / 'fine.npz'} (config {config.config_hash()})")
    return 0


def cmd_eval(args) -> int:
    corpus = _load_split(args.data, args.split)
    coarse_model = load_coarse_model(args.coarse)
    fine_model = load_fine_model(args.fine) if args.fine else None
    report = evaluate(coarse_model, corpus, fine_model=fine_model,
                      out_dir=args.out, svg=args.svg)
    print(json.dumps(report.canonical_dict()["retrieval_recall"], indent=1))
    if report.localization_recall:
        print(json.dumps(report.localization_recall, indent=1))
    elif args.fine is None:
        print("localization: absent (coarse-only evaluation)")
    return 0


def cmd_ablate(args) -> int:
    config = _resolve_config(args)
    cells = args.cells.split(",") if args.cells else list(ABLATION_CELLS)
    seeds = [int(s) for s in args.seeds.split(",")]
    train_c = _load_split(args.data, "train")
    eval_c = _load_split(args.data, args.split)
    result = ablate(config, cells, seeds, train_c, eval_c,
                    out_dir=args.out, log=print)
    for cell, info in result["cells"].items():
        print(f"{cell:>24}: " + ", ".join(
            f"{m}={v:.3f}" for m, v in info["median"].items()))
    return 0


def cmd_gradcheck(args) -> int:
    from .audit import gradient_fidelity_report

    report_text, passed = gradient_fidelity_report(tol_ops=args.tol,
                                                   tol_losses=args.loss_tol)
    print(report_text)
    if not passed:
        raise NumericError("gradient check failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cityloc",
        description="coarse-to-fine text-to-point-cloud localization "
                    "on synthetic city scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate train/val/test corpora")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-coarse", help="train the retrieval stage")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_coarse)

    p = sub.add_parser("train-fine", help="train the localization stage")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--coarse", type=Path, default=None,
                   help="coarse checkpoint to warm-start the frontends")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_fine)

    p = sub.add_parser("eval", help="evaluate checkpoints on a split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--coarse", type=Path, required=True)
    p.add_argument("--fine", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation matrix")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--cells", default=None,
                   help=f"comma list from {sorted(ABLATION_CELLS)}")
    p.add_argument("--seeds", default="0,1,2")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--tol", type=float, default=1e-5,
                   help="tolerance for primitive operations")
    p.add_argument("--loss-tol", type=float, default=1e-3,
                   help="tolerance for full-loss micro-batch checks")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
