"""Dataset directory loading: questions.conllu + scenes.jsonl + answers.jsonl."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conllu import SyntaxTree, parse_conllu
from .message_passing import VisualScene
from .synth import split

__all__ = ["DataError", "QaInstance", "load_dataset", "split",
           "answer_labels_from", "word_vocab_from"]


class DataError(ValueError):
    """Missing, inconsistent, or malformed dataset files."""


@dataclass
class QaInstance:
    question_id: str
    scene_id: str
    template: str
    tree: SyntaxTree
    scene: VisualScene
    counts: dict[str, int]

    def top_answer(self) -> str:
        """Count argmax; ties broken alphabetically for determinism."""
        return max(sorted(self.counts), key=lambda a: self.counts[a])


def _question_blocks(text: str) -> list[tuple[dict[str, str], str]]:
    blocks: list[tuple[dict[str, str], str]] = []
    meta: dict[str, str] = {}
    lines: list[str] = []

    def flush() -> None:
        nonlocal meta, lines
        if lines:
            blocks.append((meta, "\n".join(lines)))
        meta, lines = {}, []

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        lines.append(raw)
    flush()
    return blocks


def load_dataset(dataset_dir) -> list[QaInstance]:
    """Load and join the three dataset files, in question order."""
    root = Path(dataset_dir)
    for name in ("questions.conllu", "scenes.jsonl", "answers.jsonl"):
        if not (root / name).is_file():
            raise DataError(f"dataset file missing: {root / name}")

    scenes: dict[str, np.ndarray] = {}
    with open(root / "scenes.jsonl", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                scenes[rec["scene_id"]] = np.asarray(rec["entities"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, ValueError) as err:
                raise DataError(f"scenes.jsonl line {line_no}: {err}") from None

    answers: dict[str, dict] = {}
    with open(root / "answers.jsonl", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                answers[rec["question_id"]] = rec
            except (json.JSONDecodeError, KeyError) as err:
                raise DataError(f"answers.jsonl line {line_no}: {err}") from None

    text = (root / "questions.conllu").read_text(encoding="utf-8")
    instances: list[QaInstance] = []
    for meta, block in _question_blocks(text):
        qid = meta.get("question_id")
        if qid is None:
            raise DataError("question block without a question_id comment")
        trees = parse_conllu(block)
        if len(trees) != 1:
            raise DataError(f"question {qid}: expected one sentence, got {len(trees)}")
        if qid not in answers:
            raise DataError(f"question {qid}: no answers.jsonl record")
        rec = answers[qid]
        sid = meta.get("scene_id", rec.get("scene_id"))
        if sid not in scenes:
            raise DataError(f"question {qid}: scene {sid!r} not in scenes.jsonl")
        counts = {str(a): int(c) for a, c in rec["counts"].items()}
        instances.append(QaInstance(
            question_id=qid, scene_id=sid,
            template=meta.get("template", "unknown"),
            tree=trees[0],
            scene=VisualScene(entities=scenes[sid], scene_id=sid),
            counts=counts))
    if not instances:
        raise DataError(f"no questions found in {root}")
    return instances


def answer_labels_from(instances) -> tuple[str, ...]:
    """Sorted union of all answer strings seen in the counts."""
    labels: set[str] = set()
    for inst in instances:
        labels.update(inst.counts)
    return tuple(sorted(labels))


def word_vocab_from(instances) -> tuple[str, ...]:
    """Sorted unique token forms across all questions."""
    words: set[str] = set()
    for inst in instances:
        words.update(t.form for t in inst.tree.tokens)
    return tuple(sorted(words))
