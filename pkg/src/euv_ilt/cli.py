"""Command line entry point.

Exit codes: 0 success, 1 usage/config error, 2 numerical abort, 3 IO error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, optimizer, patterns
from .errors import ConfigError, LithoError, NumericalAbort

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; CLI flags override its keys")
    sub.add_argument("--seed", type=int, help="base RNG seed")
    sub.add_argument("--out", default=None, help="run directory (default: runs/<command>)")


def _add_train_like(sub: argparse.ArgumentParser) -> None:
    _add_common(sub)
    sub.add_argument("--kind", help="pattern kind")
    sub.add_argument("--epochs", type=int, help="training epochs")
    sub.add_argument("--mode", choices=("pixel_direct", "mini_cnn"),
                     help="generator mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="euv-ilt",
        description="Joint photomask and optics-parameter optimization at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-patterns", help="render the pattern catalog")
    _add_common(p)
    p.add_argument("--kind", action="append", dest="kinds", default=None,
                   help="pattern kind (repeatable; default: all 18)")

    p = sub.add_parser("train", help="train one pattern kind")
    _add_train_like(p)

    p = sub.add_parser("ablate", help="six-row physics ablation for one kind")
    _add_train_like(p)
    p.add_argument("--dataset-size", type=int, dest="dataset_size",
                   help="samples per epoch")

    p = sub.add_parser("sweep", help="train many kinds and aggregate")
    _add_train_like(p)
    p.add_argument("--kinds", nargs="*", default=None,
                   help="pattern kinds (default: the 12 standard kinds)")

    p = sub.add_parser("render", help="figure panels for a finished train run")
    p.add_argument("run_dir", help="train run directory")
    return parser


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _resolve_train_config(args: argparse.Namespace,
                          defaults: optimizer.TrainConfig | None = None,
                          ) -> tuple[optimizer.TrainConfig, tuple[str, ...] | None]:
    """Defaults, then config-file keys, then CLI flags; returns (config, kinds)."""
    data = harness.train_config_to_dict(defaults or optimizer.TrainConfig())
    file_data = _load_config_file(args.config)
    kinds = file_data.pop("kinds", None)  # sweep configs may carry a kind list
    data.update(file_data)
    if getattr(args, "kind", None):
        data["kind"] = args.kind
    if getattr(args, "epochs", None) is not None:
        data["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "mode", None):
        data["generator_mode"] = args.mode
    if getattr(args, "dataset_size", None) is not None:
        data["dataset_size"] = args.dataset_size
    cfg = harness.train_config_from_dict(data)
    return cfg, (tuple(kinds) if kinds is not None else None)


def _out_dir(args: argparse.Namespace, command: str) -> str:
    return args.out or f"runs/{command}"


def _cmd_generate_patterns(args: argparse.Namespace) -> int:
    kinds = tuple(args.kinds) if args.kinds else None
    ctx = harness.run_generate_patterns(_out_dir(args, "generate-patterns"), kinds)
    print(f"wrote {len(ctx.files)} files to {ctx.out_dir}")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    cfg, _ = _resolve_train_config(args)
    ctx, result = harness.run_train(cfg, _out_dir(args, "train"))
    summary = harness._train_summary(result)
    print(f"{cfg.kind} {summary['final_epe_nm']:.4f} {summary['best_epe_nm']:.4f} "
          f"{summary['improvement_pct']:.2f}")
    if result.aborted:
        print(f"aborted: {result.abort_reason}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    kind = args.kind or "dram_arrays"
    defaults = optimizer.ablation_config(kind, seed=args.seed or 0)
    args.kind = kind
    cfg, _ = _resolve_train_config(args, defaults=defaults)
    ctx, result = harness.run_ablate(cfg, _out_dir(args, "ablate"))
    for row in result.rows:
        print(f"{row.stage} {row.epe_nm:.4f} {row.improvement_pct_vs_no_physics:.2f}")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg, kinds = _resolve_train_config(args)
    if args.kinds is not None:
        kinds = tuple(args.kinds)
    if kinds is None:
        kinds = patterns.STANDARD_KINDS
    if not kinds:
        raise ConfigError("sweep requires at least one pattern kind")
    ctx, rows = harness.run_sweep(cfg, tuple(kinds), _out_dir(args, "sweep"))
    for row in rows:
        print(f"{row['kind']} {row['final_epe_nm']:.4f} {row['best_epe_nm']:.4f} "
              f"{row['improvement_pct']:.2f}")
    return EXIT_OK


def _cmd_render(args: argparse.Namespace) -> int:
    ctx = harness.run_render(args.run_dir)
    print(f"wrote {len(ctx.files)} files to {ctx.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "generate-patterns": _cmd_generate_patterns,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "render": _cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc} (param={exc.param})", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FileNotFoundError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LithoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
