"""Training loop, evaluation, ablations, step-count sweeps, attention
export, and finite-difference gradient checking.

Training minimizes the soft binary cross-entropy with Adamax under a
warmup-then-plateau-decay learning-rate schedule, writes the best
validation checkpoint atomically, and logs a timestamp-free JSON report so
two single-threaded runs with the same seed produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .answer_head import AnswerSpace, vqa_score
from .checkpoint import load_model, save_model
from .config import ModelConfig
from .conllu import parse_conllu
from .data import (DataError, QaInstance, answer_labels_from, load_dataset,
                   word_vocab_from)
from .embeddings import load_glove_text
from .message_passing import VisualScene
from .model import Model
from .synth import split

__all__ = [
    "build_model",
    "train",
    "evaluate",
    "evaluate_model",
    "ablate",
    "sweep_t",
    "export_attention",
    "gradcheck",
    "round_sig",
]

ABLATION_VARIANTS = ("full", "no_tree_conv", "no_message_passing",
                     "no_fused_attention")

_MODULE_PREFIXES = {
    "embeddings": ("embed.",),
    "tree-encoder": ("enc.", "tok."),
    "message-passing": ("mp.",),
    "answer-head": ("head.",),
}


def round_sig(x: float, digits: int = 6) -> float:
    return float(f"{float(x):.{digits}g}")


def build_model(config: ModelConfig, instances: list[QaInstance]) -> Model:
    """Model over the dataset's vocabulary and answer labels.

    With a GloVe path configured the word table is loaded from file and
    frozen; otherwise it is a trainable random table over the dataset
    vocabulary. The answer space is always dataset-derived.
    """
    space = AnswerSpace(answer_labels_from(instances))
    config = config.with_overrides(n_ans=space.size)
    if config.glove_path:
        table = load_glove_text(config.glove_path, config.d_x)
        vocab = table.tokens_in_order()[1:]
        return Model(config, vocab, space,
                     word_rows=table.rows.value.array, word_trainable=False)
    return Model(config, word_vocab_from(instances), space)


def _check_scenes(model: Model, instances: list[QaInstance]) -> None:
    for inst in instances:
        try:
            model.check_scene(inst.scene)
        except ValueError as err:
            raise DataError(str(err)) from None


def evaluate_model(model: Model, instances: list[QaInstance],
                   threads: int = 1) -> dict:
    """Mean annotator-agreement score plus a per-template breakdown."""
    if not instances:
        raise DataError("no instances to evaluate")

    def score_one(inst: QaInstance) -> tuple[str, float]:
        result = model.forward(inst.tree, inst.scene)
        return inst.template, vqa_score(result.prediction.argmax_label, inst.counts)

    if threads > 1:
        # Forward passes are pure over a read-only store; results are
        # collected in instance order so the report stays deterministic.
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score_one, instances))
    else:
        scored = [score_one(inst) for inst in instances]

    per_template: dict[str, list[float]] = {}
    for template, score in scored:
        per_template.setdefault(template, []).append(score)
    return {
        "mean_score": float(np.mean([s for _, s in scored])),
        "n": len(scored),
        "per_template": {t: {"score": float(np.mean(v)), "n": len(v)}
                         for t, v in sorted(per_template.items())},
    }


def _split_instances(config: ModelConfig, instances: list[QaInstance]):
    fractions = (1.0 - config.val_fraction - config.test_fraction,
                 config.val_fraction, config.test_fraction)
    return split(instances, fractions)


def train(config: ModelConfig, dataset_dir, out_path, quiet: bool = False) -> dict:
    """Train on the dataset directory and write the best checkpoint.

    Returns the report dict that is also written (sorted, timestamp-free)
    next to the checkpoint as ``<out>.report.json``.
    """
    config.validate()
    instances = load_dataset(dataset_dir)
    train_set, val_set, _ = _split_instances(config, instances)
    if not train_set:
        raise DataError("training split is empty")
    model = build_model(config, instances)
    _check_scenes(model, instances)
    optimizer = ad.Adamax(model.store)
    out_path = Path(out_path)

    post_warmup_lr = config.peak_lr
    best_metric = -np.inf
    best_epoch = -1
    since_improve = 0
    epochs_log: list[dict] = []

    for epoch in range(config.epochs):
        if epoch < config.warmup_epochs:
            frac = epoch / max(config.warmup_epochs - 1, 1)
            lr = config.base_lr + (config.peak_lr - config.base_lr) * frac
        else:
            lr = post_warmup_lr

        rng = np.random.default_rng([config.seed, 7919, epoch])
        order = rng.permutation(len(train_set))
        losses: list[float] = []
        scores: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.store.zero_grad()
            for idx in batch:
                inst = train_set[idx]
                result = model.forward(inst.tree, inst.scene)
                loss = model.loss(result, inst.counts)
                ad.backward(loss)
                losses.append(float(loss.value.array))
                # Running train score from the same forwards that produced
                # the gradients (pre-update, as usual for an epoch metric).
                scores.append(vqa_score(result.prediction.argmax_label,
                                        inst.counts))
            model.store.scale_gradients(1.0 / len(batch))
            optimizer.step(lr)

        train_score = float(np.mean(scores))
        val_eval = evaluate_model(model, val_set) if val_set else None
        metric = val_eval["mean_score"] if val_eval else train_score

        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            since_improve = 0
            save_model(model, out_path)
        else:
            since_improve += 1
            if epoch >= config.warmup_epochs and since_improve >= config.plateau_patience:
                post_warmup_lr *= config.lr_decay
                since_improve = 0

        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "train_score": train_score,
            "val_score": val_eval["mean_score"] if val_eval else None,
        }
        epochs_log.append(record)
        if not quiet:
            val_txt = f" val={record['val_score']:.4f}" if val_eval else ""
            print(f"epoch {epoch:3d} lr={lr:.2e} loss={record['train_loss']:.5f} "
                  f"train={record['train_score']:.4f}{val_txt}")

    final_train = evaluate_model(model, train_set)
    report = {
        "epochs": epochs_log,
        "best_epoch": best_epoch,
        "best_metric": best_metric,
        "final_train_score": final_train["mean_score"],
        "checkpoint": out_path.name,
        "n_train": len(train_set),
        "n_val": len(val_set),
        "seed": config.seed,
    }
    report_path = Path(str(out_path) + ".report.json")
    report_path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n",
                           encoding="utf-8")
    return report


def _select_split(config: ModelConfig, instances: list[QaInstance],
                  split_name: str) -> list[QaInstance]:
    if split_name == "all":
        return instances
    train_set, val_set, test_set = _split_instances(config, instances)
    try:
        chosen = {"train": train_set, "val": val_set, "test": test_set}[split_name]
    except KeyError:
        raise DataError(f"unknown split {split_name!r}") from None
    if not chosen:
        raise DataError(f"split {split_name!r} is empty")
    return chosen


def evaluate(ckpt_path, dataset_dir, split_name: str = "all",
             threads: int = 1) -> dict:
    """Score a checkpoint on (a split of) a dataset directory."""
    model = load_model(ckpt_path)
    instances = load_dataset(dataset_dir)
    chosen = _select_split(model.config, instances, split_name)
    _check_scenes(model, chosen)
    result = evaluate_model(model, chosen, threads=threads)
    result["split"] = split_name
    return result


def _relational_subset(instances: list[QaInstance]) -> list[QaInstance]:
    return [inst for inst in instances if inst.template.startswith("relational")]


def ablate(config: ModelConfig, dataset_dir, out_csv, quiet: bool = True) -> list[dict]:
    """Train the full model and each single-ablation variant with a shared
    seed; write a CSV of final validation scores.

    The expected ordering (full at least as good as each ablation on the
    relational templates) is reported as a note, not enforced.
    """
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for variant in ABLATION_VARIANTS:
        overrides = {flag: (flag == variant) for flag in ABLATION_VARIANTS[1:]}
        variant_cfg = config.with_overrides(**overrides)
        ckpt = out_csv.parent / f"{out_csv.stem}_{variant}.ckpt"
        train(variant_cfg, dataset_dir, ckpt, quiet=quiet)
        model = load_model(ckpt)
        instances = load_dataset(dataset_dir)
        val_set = _select_split(model.config, instances, "val")
        overall = evaluate_model(model, val_set)["mean_score"]
        relational = _relational_subset(val_set)
        rel_score = (evaluate_model(model, relational)["mean_score"]
                     if relational else float("nan"))
        rows.append({"variant": variant, "val_score": overall,
                     "relational_val_score": rel_score})
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["variant", "val_score", "relational_val_score"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    full_rel = rows[0]["relational_val_score"]
    for row in rows[1:]:
        if row["relational_val_score"] > full_rel:
            print(f"note: variant {row['variant']} beat the full model on "
                  f"relational templates ({row['relational_val_score']:.4f} "
                  f"> {full_rel:.4f})")
    return rows


def sweep_t(config: ModelConfig, dataset_dir, t_values, out_csv,
            quiet: bool = True) -> list[dict]:
    """One training run per message-passing step count, shared seed."""
    t_values = list(t_values)
    if not t_values or any(t < 0 for t in t_values):
        raise ValueError("t_values must be non-empty and non-negative")
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    templates: set[str] = set()
    for t in t_values:
        cfg = config.with_overrides(num_steps=int(t), no_message_passing=False)
        ckpt = out_csv.parent / f"{out_csv.stem}_T{t}.ckpt"
        train(cfg, dataset_dir, ckpt, quiet=quiet)
        model = load_model(ckpt)
        instances = load_dataset(dataset_dir)
        val_set = _select_split(model.config, instances, "val")
        result = evaluate_model(model, val_set)
        row = {"T": int(t), "overall": result["mean_score"]}
        for template, entry in result["per_template"].items():
            row[template] = entry["score"]
            templates.add(template)
        rows.append(row)
    fieldnames = ["T", "overall"] + sorted(templates)
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return rows


def export_attention(ckpt_path, dataset_dir, question_id: str, out_path) -> dict:
    """Write the attention trace of one instance as JSON (6 significant
    digits), with token and phrase strings for axis labels."""
    model = load_model(ckpt_path)
    instances = load_dataset(dataset_dir)
    matching = [inst for inst in instances if inst.question_id == question_id]
    if not matching:
        raise DataError(f"question {question_id!r} not found in {dataset_dir}")
    inst = matching[0]
    _check_scenes(model, [inst])
    result = model.forward(inst.tree, inst.scene)
    trace = result.trace

    def rounded(arr: np.ndarray) -> list:
        return [rounded(sub) if isinstance(sub, np.ndarray) and sub.ndim
                else round_sig(float(sub)) for sub in arr]

    payload = {
        "question_id": inst.question_id,
        "scene_id": inst.scene_id,
        "template": inst.template,
        "tokens": [t.form for t in inst.tree.tokens],
        "phrases": result.encoding.phrase_labels,
        "instr_attn": rounded(trace.instr_attn),
        "msg_weights": rounded(trace.msg_weights),
        "final_attn": rounded(trace.final_attn),
        "answer": result.prediction.argmax_label,
        "p_top5": [[label, round_sig(p)]
                   for label, p in result.prediction.top_k(model.space, 5)],
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")
    return payload


# Seven tokens, three syntax subtrees (heads 2, 5, 6).
_GRADCHECK_QUESTION = """\
1\twhat\tWDT\t2\tdet
2\tcolor\tNN\t0\troot
3\tis\tVBZ\t2\tcop
4\tthe\tDT\t5\tdet
5\tthing\tNN\t2\tnmod
6\tleft\tJJ\t5\tamod
7\tball\tNN\t6\tobl
"""


def _rel_error(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric))
    if denom < 1e-6:
        # Both effectively zero: require agreement at the noise floor.
        return 0.0 if abs(analytic - numeric) < 1e-8 else 1.0
    return abs(analytic - numeric) / denom


def gradcheck(config: ModelConfig, module_filter: str | None = None,
              seeds=(7,), coords_per_param: int = 4, h: float = 1e-5,
              tol: float = 1e-4) -> dict:
    """Compare analytic gradients against central finite differences.

    Dimensions are forced small regardless of the incoming config (only
    the seed and ablation flags carry over); every trainable parameter is
    probed at a few sampled coordinates. The word table is loaded frozen,
    exercising the skip path that pretrained vectors take.
    """
    small = config.with_overrides(
        d_x=8, d_t=6, d_h=16, num_heads=2, conv_window=3, max_subtree_len=4,
        d_g=None, d_v=12, d_out=10, num_steps=2, n_ans=4, k_min=1, k_max=100,
        glove_path=None)
    tree = parse_conllu(_GRADCHECK_QUESTION)[0]
    space = AnswerSpace(("a", "b", "c", "d"))
    counts = {"a": 5, "b": 3, "c": 2}
    vocab = sorted({t.form for t in tree.tokens})

    groups: dict[str, dict] = {}
    overall = 0.0
    for seed in seeds:
        cfg = small.with_overrides(seed=int(seed))
        rng = np.random.default_rng([int(seed), 11])
        word_rows = rng.normal(0.0, 0.3, size=(len(vocab) + 1, cfg.d_x))
        model = Model(cfg, vocab, space, word_rows=word_rows,
                      word_trainable=False)
        scene = VisualScene(entities=rng.normal(0.0, 1.0, size=(4, cfg.d_v)),
                            scene_id="gradcheck")

        def loss_value() -> float:
            result = model.forward(tree, scene)
            return float(model.loss(result, counts).value.array)

        model.store.zero_grad()
        result = model.forward(tree, scene)
        ad.backward(model.loss(result, counts))
        analytic = {name: node.gradient.copy()
                    for name, node in model.store.items()}

        for p_idx, (name, node) in enumerate(model.store.items()):
            if module_filter is not None:
                prefixes = _MODULE_PREFIXES.get(module_filter, (module_filter,))
                if not name.startswith(tuple(prefixes)):
                    continue
            if not node.trainable:
                groups[name] = {"status": "skipped (frozen)"}
                continue
            arr = node.value.array
            flat = arr.reshape(-1)
            coord_rng = np.random.default_rng([int(seed), 13, p_idx])
            n_coords = min(coords_per_param, flat.size)
            coords = coord_rng.choice(flat.size, size=n_coords, replace=False)
            worst = groups.get(name, {}).get("max_rel_err", 0.0)
            for c in coords:
                original = flat[c]
                flat[c] = original + h
                up = loss_value()
                flat[c] = original - h
                down = loss_value()
                flat[c] = original
                numeric = (up - down) / (2 * h)
                worst = max(worst, _rel_error(analytic[name].reshape(-1)[c], numeric))
            groups[name] = {"max_rel_err": worst}
            overall = max(overall, worst)

    return {"groups": groups, "max_rel_err": overall, "tolerance": tol,
            "ok": overall < tol, "seeds": list(seeds)}
