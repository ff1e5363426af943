"""Command-line interface.

Subcommands: gen-data, train, eval, sweep, curve, compare. Reports are
JSON (default) or CSV on stdout; --out redirects them to a file. Exit
codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

Everything is seeded: repeating an invocation reproduces the report
byte for byte, so timings go to stderr rather than into the report.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import (
    DataError,
    Dataset,
    SyntheticConfig,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    subsample_list,
)
from .diffkernel import DomainError
from .harness import approximation_curve, compare, evaluate_ndcg, rows_to_csv
from .losses import LossKind
from .metrics import GAIN_MODES, ZeroGainError
from .scorer import load_checkpoint, save_checkpoint
from .sorting import SinkhornConvergenceError
from .trainer import (
    DEFAULT_POLICY_LR,
    TrainConfig,
    TrainingDivergenceError,
    default_scorer,
    sweep,
    train,
)

__all__ = ["main"]

_LOSS_KEYS = ("kind", "k", "tau", "alpha", "gain_mode", "sinkhorn")
_DEFAULT_CURVE_PARAMS = {"neural": (0.1, 1.0, 10.0), "approx": (1.0, 10.0, 100.0)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; we need 1."""

    def error(self, message):
        raise UsageError(message)


def _read_structured(path) -> dict:
    """A JSON or TOML mapping from disk (TOML when the suffix says so)."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    try:
        if str(path).endswith(".toml"):
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a mapping at top level")
    return data


def _load_dataset(path) -> Dataset:
    try:
        return load_jsonl(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _load_scorer(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _resized(dataset: Dataset, list_size: int | None, seed: int) -> Dataset:
    if list_size is None:
        return dataset
    return Dataset(
        tuple(
            subsample_list(rl, min(list_size, rl.size), seed + i)
            for i, rl in enumerate(dataset)
        )
    )


def _build_train_config(args, mode: str | None = None) -> TrainConfig:
    """Defaults, then config file, then flags; policy mode bumps the
    default learning rate when nothing set one."""
    raw = _read_structured(args.config) if args.config else {}
    loss = dict(raw.pop("loss", {}))
    for key in _LOSS_KEYS:
        if key in raw:
            loss[key] = raw.pop(key)
    flag_loss = {
        "kind": args.loss,
        "k": args.k,
        "tau": args.tau,
        "alpha": args.alpha,
        "gain_mode": args.gain_mode,
        "sinkhorn": None if args.sinkhorn is None else args.sinkhorn == "on",
    }
    loss.update({k: v for k, v in flag_loss.items() if v is not None})
    flag_train = {
        "beta": args.beta,
        "learning_rate": args.learning_rate,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "warmup_ratio": args.warmup_ratio,
        "weight_decay": args.weight_decay,
        "seed": args.seed,
    }
    raw.update({k: v for k, v in flag_train.items() if v is not None})
    if mode == "policy" and "learning_rate" not in raw:
        raw["learning_rate"] = DEFAULT_POLICY_LR
    if loss:
        raw["loss"] = loss
    return TrainConfig.from_dict(raw)


def _emit(text: str, out) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(
        num_lists=args.num_lists,
        list_size=args.list_size,
        feature_dim=args.feature_dim,
        label_noise_sd=args.noise_sd,
        mode=args.mode,
        seed=args.seed,
        direction_seed=args.direction_seed,
        utility_scale=args.utility_scale,
        vocab_size=args.vocab_size,
        max_len=args.max_len,
        prefix_len=args.prefix_len,
    )
    dataset = generate_synthetic(cfg)
    save_jsonl(dataset, args.out)
    print(f"wrote {len(dataset)} lists to {args.out}")
    return 0


def _cmd_train(args) -> int:
    dataset = _load_dataset(args.data)
    if len(dataset) == 0:
        raise DataError(f"{args.data}: dataset is empty")
    config = _build_train_config(args, dataset.mode)
    dataset = _resized(dataset, args.list_size, config.seed)
    eval_dataset = _load_dataset(args.eval_data) if args.eval_data else None
    scorer = default_scorer(dataset, seed=config.seed, hidden=args.hidden)
    scorer, history = train(config, dataset, scorer, eval_dataset, eval_k=args.k)
    if args.save:
        save_checkpoint(scorer, args.save)
    if args.format == "csv":
        text = rows_to_csv(
            [
                {
                    "step": r.step,
                    "epoch": r.epoch,
                    "loss": r.loss,
                    "grad_norm": r.grad_norm,
                    "lr": r.lr,
                }
                for r in history.steps
            ]
        )
    else:
        text = json.dumps(
            {
                "mode": dataset.mode,
                "num_lists": len(dataset),
                "steps": len(history.steps),
                "final_loss": history.final_loss,
                "final_grad_norm": history.steps[-1].grad_norm,
                "epoch_eval": history.epoch_eval,
                "checkpoint": args.save,
                "config": config.to_dict(),
            },
            indent=2,
        )
    _emit(text, args.out)
    return 0


def _cmd_eval(args) -> int:
    dataset = _load_dataset(args.data)
    if len(dataset) == 0:
        raise DataError(f"{args.data}: dataset is empty")
    dataset = _resized(dataset, args.list_size, args.seed if args.seed is not None else 0)
    scorer = _load_scorer(args.checkpoint)
    reference = None
    if dataset.mode == "policy":
        if not args.reference:
            raise UsageError("policy datasets need --reference <checkpoint>")
        reference = _load_scorer(args.reference)
    k = args.k if args.k is not None else min(rl.size for rl in dataset)
    result = evaluate_ndcg(
        scorer,
        dataset,
        k,
        reference=reference,
        beta=args.beta if args.beta is not None else 0.1,
        gain_mode=args.gain_mode or "power",
    )
    row = {
        "k": k,
        "ndcg_mean": result.mean,
        "ndcg_sd": result.sd,
        "evaluated": result.evaluated,
        "skipped": result.skipped,
    }
    _emit(rows_to_csv([row]) if args.format == "csv" else json.dumps(row, indent=2), args.out)
    return 0


def _parse_grid(spec: str) -> dict:
    if os.path.exists(spec):
        grid = _read_structured(spec)
    else:
        try:
            grid = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--grid is neither a file nor valid JSON: {exc}") from exc
    if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
        raise UsageError("--grid must map parameter names to lists of values")
    return grid


def _cmd_sweep(args) -> int:
    dataset = _load_dataset(args.data)
    if len(dataset) == 0:
        raise DataError(f"{args.data}: dataset is empty")
    config = _build_train_config(args, dataset.mode)
    eval_dataset = _load_dataset(args.eval_data) if args.eval_data else None
    grid = _parse_grid(args.grid)
    rows = sweep(grid, config, dataset, eval_dataset, eval_k=args.k)
    if args.format == "csv":
        text = rows_to_csv(rows)
    else:
        text = json.dumps({"grid": grid, "config": config.to_dict(), "rows": rows}, indent=2)
    _emit(text, args.out)
    return 0


def _cmd_curve(args) -> int:
    if args.params:
        params = [float(tok) for tok in args.params.split(",") if tok.strip()]
        if not params:
            raise UsageError("--params needs at least one value")
    else:
        params = list(_DEFAULT_CURVE_PARAMS[args.kind])
    if args.points < 2:
        raise UsageError("--points must be at least 2")
    grid = np.linspace(args.x_min, args.x_max, args.points)
    rows = approximation_curve(args.kind, params, grid)
    _emit(rows_to_csv(rows) if args.format == "csv" else json.dumps(rows, indent=2), args.out)
    return 0


def _cmd_compare(args) -> int:
    train_ds = _load_dataset(args.data)
    if len(train_ds) == 0:
        raise DataError(f"{args.data}: dataset is empty")
    config = _build_train_config(args, train_ds.mode)
    train_ds = _resized(train_ds, args.list_size, config.seed)
    eval_ds = (
        _resized(_load_dataset(args.eval_data), args.list_size, config.seed)
        if args.eval_data
        else train_ds
    )
    report = compare(config, train_ds, eval_ds, k=args.k, hidden=args.hidden)
    _emit(report.to_csv() if args.format == "csv" else report.to_json(), args.out)
    print(f"compare: trained 8 objectives in {report.runtime_seconds:.2f}s", file=sys.stderr)
    return 0


def _add_report_flags(p) -> None:
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _add_loss_flags(p) -> None:
    p.add_argument("--loss", choices=[kind.value for kind in LossKind], help="objective kind")
    p.add_argument("--k", type=int, help="truncation depth (loss and evaluation)")
    p.add_argument("--tau", type=float, help="relaxed-sort temperature")
    p.add_argument("--alpha", type=float, help="sigmoid rank sharpness")
    p.add_argument("--gain-mode", choices=GAIN_MODES)
    p.add_argument("--sinkhorn", choices=("on", "off"), help="rescale the relaxed permutation")


def _add_train_flags(p) -> None:
    p.add_argument("--config", help="JSON or TOML file of TrainConfig/LossSpec fields")
    p.add_argument("--beta", type=float, help="reward scale on the policy log-ratio")
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--warmup-ratio", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int, default=0, help="hidden units (0 = linear scorer)")
    p.add_argument("--list-size", type=int, help="subsample every list to this size")


def build_parser() -> _Parser:
    parser = _Parser(prog="rankalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic JSONL dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-lists", type=int, required=True)
    p.add_argument("--mode", choices=("feature", "policy"), default="feature")
    p.add_argument("--list-size", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--noise-sd", type=float, default=0.05)
    p.add_argument("--utility-scale", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--direction-seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--prefix-len", type=int, default=2)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one scorer and report its history")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="held-out JSONL scored after every epoch")
    p.add_argument("--save", help="checkpoint path for the trained scorer")
    _add_train_flags(p)
    _add_loss_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="NDCG@k of a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", help="reference checkpoint (policy mode)")
    p.add_argument("--k", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--gain-mode", choices=GAIN_MODES)
    p.add_argument("--list-size", type=int)
    p.add_argument("--seed", type=int)
    _add_report_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="train/eval once per grid point")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--grid", required=True, help='JSON mapping or file, e.g. \'{"tau": [0.1, 1.0]}\'')
    _add_train_flags(p)
    _add_loss_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("curve", help="surrogate-vs-exact NDCG approximation table")
    p.add_argument("--kind", choices=("neural", "approx"), default="neural")
    p.add_argument("--params", help="comma-separated tau (neural) or alpha (approx) values")
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=101)
    _add_report_flags(p)
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("compare", help="train every objective and tabulate NDCG/win rate")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="held-out JSONL (defaults to --data)")
    _add_train_flags(p)
    _add_loss_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (
        DomainError,
        SinkhornConvergenceError,
        TrainingDivergenceError,
        ZeroGainError,
        OverflowError,
    ) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
