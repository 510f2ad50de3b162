"""Command-line entry points for every pipeline stage.

Every subcommand takes a JSON config file plus ``--set key=value`` overrides
(dotted keys reach nested fields; values are parsed as JSON when possible).
Commands that need a checkpoint fall back to $FACECLONE_CHECKPOINT.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

CHECKPOINT_ENV = "FACECLONE_CHECKPOINT"

from .checkpoint import load_checkpoint
from .data import DatasetConfig, build_dataset, load_dataset, save_dataset
from .evaluation import (
    compare_ablations,
    eval_inverse_rig,
    eval_self_retarget,
    format_table,
    fresh_expression_samples,
    write_report,
)
from .mesh import load_mesh, save_mesh
from .rig import make_toy_rig
from .spectral import OperatorCache
from .training import TrainConfig, ablation_config, ABLATION_VARIANTS, train


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_overrides(config: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(raw)
    return config


def _load_config(path: str | None, overrides: list[str]) -> dict:
    config = json.loads(Path(path).read_text()) if path else {}
    return _apply_overrides(config, overrides or [])


def _cmd_gen_data(args) -> int:
    config = _load_config(args.config, args.set)
    rig_cfg = {
        "seed": config.get("seed", 1),
        "subdivision": config.get("subdivision", 3),
        "J": config.get("J", 100),
        "K": config.get("K", 53),
        "L": config.get("L", 20),
    }
    rig, seg = make_toy_rig(**rig_cfg)
    dataset_cfg = DatasetConfig.from_dict(config.get("dataset", {}))
    dataset = build_dataset(rig, seg, dataset_cfg)
    out = Path(args.out)
    save_dataset(dataset, out)
    print(f"dataset written to {out} (digest {dataset.digest()[:16]}, "
          f"{len(dataset.samples)} samples, {dataset.identity_coeffs.shape[0]} identities)")
    return 0


def _cmd_train(args) -> int:
    config_dict = _load_config(args.config, args.set)
    dataset_dir = args.dataset or config_dict.pop("dataset_dir", None)
    if dataset_dir is None:
        raise ValueError("train needs --dataset or a dataset_dir config entry")
    dataset = load_dataset(dataset_dir)
    if args.out:
        config_dict["out_dir"] = args.out
    config = TrainConfig.from_dict(config_dict)
    result = train(config, dataset, resume_from=args.resume)
    print(f"trained {result.steps} steps -> {result.checkpoint_path} "
          f"(digest {result.final_digest[:16]})")
    return 0


def _eval_samples(dataset, split: str, fresh: int, seed: int):
    if fresh:
        return fresh_expression_samples(dataset, split, fresh, seed)
    return split


def _cmd_eval(args) -> int:
    config = _load_config(args.config, args.set)
    dataset = load_dataset(args.dataset or config["dataset_dir"])
    model, manifest = load_checkpoint(_require_checkpoint(args))
    cache = OperatorCache(config.get("operator_cache_dir"))
    split = args.split
    samples = _eval_samples(dataset, split, args.fresh_expressions, config.get("eval_seed", 7))
    rows: list[dict]
    if args.protocol == "self-retarget":
        result = eval_self_retarget(model, dataset, samples, cache=cache, limit=args.limit)
        rows = result["rows"]
        summary = {k: v for k, v in result.items() if k != "rows"}
    else:
        report = eval_inverse_rig(model, dataset, samples, cache=cache, limit=args.limit)
        rows = report.rows
        summary = {k: v for k, v in report.to_dict().items() if k != "rows"}
    write_report(args.out, args.protocol, manifest["digest"], split, rows, summary)
    print(f"{args.protocol} on {split}: " + json.dumps(summary, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    config_dict = _load_config(args.config, args.set)
    dataset_dir = args.dataset or config_dict.pop("dataset_dir", None)
    if dataset_dir is None:
        raise ValueError("ablate needs --dataset or a dataset_dir config entry")
    dataset = load_dataset(dataset_dir)
    if args.out:
        config_dict["out_dir"] = args.out
    config = TrainConfig.from_dict(config_dict)
    checkpoints = {}
    for variant in ABLATION_VARIANTS:
        result = train(ablation_config(config, variant), dataset)
        checkpoints[variant] = result.checkpoint_path
        print(f"{variant}: {result.checkpoint_path}")
    cache = OperatorCache(config.operator_cache_dir)
    retarget_samples = dataset.samples_in("train")[: args.limit]
    invrig_samples = fresh_expression_samples(dataset, "train", 4, seed=config.seed + 1)
    table = compare_ablations(checkpoints, dataset, retarget_samples, invrig_samples, cache)
    out_dir = Path(config.out_dir)
    (out_dir / "ablation_table.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    text = format_table(table, ["self_retarget_mse", "segment_mean_mse", "invrig_mse"])
    (out_dir / "ablation_table.txt").write_text(text + "\n")
    print(text)
    return 0


def _cmd_retarget(args) -> int:
    model, _ = load_checkpoint(_require_checkpoint(args))
    source = load_mesh(args.source)
    target = load_mesh(args.target)
    cache = OperatorCache(args.operator_cache)
    deformed = model.retarget(source, target, cache)
    save_mesh(deformed, args.out)
    print(f"retargeted {args.source} onto {args.target} -> {args.out}")
    return 0


def _cmd_invrig(args) -> int:
    model, _ = load_checkpoint(_require_checkpoint(args))
    source = load_mesh(args.source)
    cache = OperatorCache(args.operator_cache)
    code = model.encode_source(source, cache)
    values = [float(v) for v in code.values.double().numpy()]
    payload = {
        "semantic": values[: model.config.semantic_exp],
        "extra": values[model.config.semantic_exp:],
        "code": values,
    }
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"expression code for {args.source} -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint_path=_require_checkpoint(args), cache_dir=args.operator_cache,
                     torch_threads=args.threads)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _add_checkpoint_arg(parser) -> None:
    parser.add_argument(
        "--checkpoint",
        default=os.environ.get(CHECKPOINT_ENV),
        help=f"checkpoint path (defaults to ${CHECKPOINT_ENV})",
    )


def _require_checkpoint(args) -> str:
    if not args.checkpoint:
        raise ValueError(f"no checkpoint given and ${CHECKPOINT_ENV} is not set")
    return args.checkpoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faceclone",
                                     description="expression cloning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the toy rig and a dataset")
    p.add_argument("--config", help="JSON config path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="TrainConfig JSON path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", help="JSON config path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    _add_checkpoint_arg(p)
    p.add_argument("--dataset")
    p.add_argument("--split", default="test")
    p.add_argument("--protocol", choices=["self-retarget", "invrig"], default="self-retarget")
    p.add_argument("--fresh-expressions", type=int, default=0,
                   help="evaluate on this many fresh expression draws per identity instead of stored samples")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", default="eval-report.json")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the four ablation variants")
    p.add_argument("--config", help="TrainConfig JSON path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--limit", type=int, default=32)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("retarget", help="clone an expression onto a target mesh")
    _add_checkpoint_arg(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--operator-cache", default=None)
    p.set_defaults(func=_cmd_retarget)

    p = sub.add_parser("invrig", help="predict expression coefficients for a mesh")
    _add_checkpoint_arg(p)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--operator-cache", default=None)
    p.set_defaults(func=_cmd_invrig)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    _add_checkpoint_arg(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8423)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--operator-cache", default=None)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
