"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (NaN/Inf detected).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .answer_head import vqa_score
from .autodiff import NumericError
from .checkpoint import CheckpointError, load_model
from .config import ConfigError, ModelConfig
from .conllu import ParseError
from .data import DataError, load_dataset
from .embeddings import TableFormatError
from .synth import SynthSpec, generate, write_dataset
from .train import (ablate, evaluate, export_attention, gradcheck, round_sig,
                    sweep_t, train)

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(args) -> ModelConfig:
    config = ModelConfig.load_json(args.config) if args.config else ModelConfig()
    if getattr(args, "seed", None) is not None:
        config = config.with_overrides(seed=args.seed)
    return config.validate()


def _add_common(p: argparse.ArgumentParser, data=True, out=True) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    if data:
        p.add_argument("--data", required=True, help="dataset directory")
    if out:
        p.add_argument("--out", required=True, help="output path")
    p.add_argument("--threads", type=int, default=1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="treevqa",
                     description="Syntax-tree-guided VQA: train, evaluate, probe.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-min", type=int, default=4)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--answers", type=int, default=8)
    p.add_argument("--entity-dim", type=int, default=32)
    p.add_argument("--templates", default=None,
                   help="comma-separated template subset")

    p = sub.add_parser("train", help="train and write the best checkpoint")
    _add_common(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="all",
                   choices=["all", "train", "val", "test"])
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("ablate", help="train the full model and each ablation")
    _add_common(p)

    p = sub.add_parser("sweep-t", help="train once per message-passing step count")
    _add_common(p)
    p.add_argument("--t-values", default="0,1,2,4,6")

    p = sub.add_parser("export-attention", help="dump one instance's attention trace")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--question-id", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--module", default=None,
                   help="restrict to one module's parameter groups")

    p = sub.add_parser("predict", help="write per-question predictions as JSONL")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_gen_synth(args) -> int:
    templates = tuple(args.templates.split(",")) if args.templates else None
    kwargs = dict(num_instances=args.num, k_range=(args.k_min, args.k_max),
                  answer_space_size=args.answers, entity_dim=args.entity_dim,
                  seed=args.seed)
    if templates:
        kwargs["templates"] = templates
    spec = SynthSpec(**kwargs)
    instances = generate(spec)
    write_dataset(instances, args.out)
    print(f"wrote {len(instances)} instances to {args.out}")
    return 0


def _cmd_train(args) -> int:
    report = train(_load_config(args), args.data, args.out)
    print(f"best epoch {report['best_epoch']} metric {report['best_metric']:.4f} "
          f"-> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    result = evaluate(args.ckpt, args.data, args.split, threads=args.threads)
    print(json.dumps(result, sort_keys=True, indent=1))
    return 0


def _cmd_ablate(args) -> int:
    rows = ablate(_load_config(args), args.data, args.out)
    for row in rows:
        print(f"{row['variant']}: val={row['val_score']:.4f} "
              f"relational={row['relational_val_score']:.4f}")
    return 0


def _cmd_sweep_t(args) -> int:
    try:
        t_values = [int(v) for v in args.t_values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --t-values {args.t_values!r}") from None
    rows = sweep_t(_load_config(args), args.data, t_values, args.out)
    for row in rows:
        print(f"T={row['T']}: overall={row['overall']:.4f}")
    return 0


def _cmd_export_attention(args) -> int:
    export_attention(args.ckpt, args.data, args.question_id, args.out)
    print(f"wrote trace for {args.question_id} to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    config = ModelConfig.load_json(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    report = gradcheck(config, module_filter=args.module)
    for name, entry in sorted(report["groups"].items()):
        if "status" in entry:
            print(f"{name}: {entry['status']}")
        else:
            print(f"{name}: max_rel_err={entry['max_rel_err']:.3e}")
    print(f"overall max_rel_err={report['max_rel_err']:.3e} "
          f"(tolerance {report['tolerance']:.0e}) -> "
          f"{'ok' if report['ok'] else 'FAIL'}")
    return 0 if report["ok"] else 3


def _cmd_predict(args) -> int:
    model = load_model(args.ckpt)
    instances = load_dataset(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    total = 0.0
    with open(out, "w", encoding="utf-8") as fh:
        for inst in instances:
            result = model.forward(inst.tree, inst.scene)
            pred = result.prediction
            total += vqa_score(pred.argmax_label, inst.counts)
            fh.write(json.dumps({
                "scene_id": inst.scene_id,
                "question_id": inst.question_id,
                "answer": pred.argmax_label,
                "p_top5": [[label, round_sig(p)]
                           for label, p in pred.top_k(model.space, 5)],
                "beta": [round_sig(b) for b in pred.beta],
            }, sort_keys=True) + "\n")
    print(f"wrote {len(instances)} predictions "
          f"(mean score {total / len(instances):.4f}) to {out}")
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep-t": _cmd_sweep_t,
    "export-attention": _cmd_export_attention,
    "gradcheck": _cmd_gradcheck,
    "predict": _cmd_predict,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except (DataError, ParseError, CheckpointError, TableFormatError,
            FileNotFoundError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
