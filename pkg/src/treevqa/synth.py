"""Deterministic synthetic grounded-QA instances.

Scenes are sets of colored shapes on a grid; questions ask about colors,
either of a named shape (one entity suffices) or relative to another
entity (requires combining at least two entities, which is what the
message-passing stage is for). Entity features carry the shape and color
one-hots plus the grid position in fixed coordinate blocks; the rest of
the feature vector is zero.

Answer counts simulate ten annotators with 80% majority agreement, so
soft targets are non-trivial but the ground truth is always the count
argmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .message_passing import VisualScene

__all__ = [
    "SHAPES",
    "COLORS",
    "TEMPLATES",
    "SynthSpec",
    "Instance",
    "generate",
    "split",
    "write_dataset",
    "entity_feature",
    "feature_blocks",
]

SHAPES = ("ball", "box", "cat", "dog", "car", "tree", "cup", "hat",
          "book", "fish", "lamp", "bird")
COLORS = ("red", "green", "blue", "yellow", "purple", "orange", "black", "white")
TEMPLATES = ("attribute", "relational_left", "relational_right",
             "relational_next", "superlative")

ANNOTATORS = 10
MAJORITY = 8


@dataclass
class SynthSpec:
    num_instances: int = 64
    k_range: tuple[int, int] = (4, 10)
    answer_space_size: int = 8
    entity_dim: int = 32
    seed: int = 0
    templates: tuple[str, ...] = TEMPLATES
    shapes: tuple[str, ...] = SHAPES

    def __post_init__(self) -> None:
        if self.num_instances < 1:
            raise ValueError("num_instances must be positive")
        lo, hi = self.k_range
        if not (1 <= lo <= hi):
            raise ValueError(f"bad k_range {self.k_range}")
        if hi > len(self.shapes):
            raise ValueError(
                f"k_range max {hi} exceeds the {len(self.shapes)} distinct shapes")
        if not (2 <= self.answer_space_size <= len(COLORS)):
            raise ValueError(f"answer_space_size must be in [2, {len(COLORS)}]")
        needed = len(self.shapes) + self.answer_space_size + 6
        if self.entity_dim < needed:
            raise ValueError(f"entity_dim must be >= {needed} for the feature blocks")
        for t in self.templates:
            if t not in TEMPLATES:
                raise ValueError(f"unknown template {t!r}")

    @property
    def colors(self) -> tuple[str, ...]:
        return COLORS[:self.answer_space_size]


@dataclass
class Instance:
    question_id: str
    scene_id: str
    template: str
    question_conllu: str
    scene: VisualScene
    answer_counts: dict[str, int]
    answer: str


def feature_blocks(spec: SynthSpec) -> dict[str, tuple[int, int]]:
    """Coordinate ranges of the shape, color, and position blocks.

    The position block is [x, y, x^2, y^2, x*y, 1]: with the squares and
    the constant present, pairwise squared distance is a bilinear form of
    two entities' features, so proximity relations are expressible by the
    bilinear message-weight scoring.
    """
    ns, nc = len(spec.shapes), spec.answer_space_size
    return {"shape": (0, ns), "color": (ns, ns + nc),
            "position": (ns + nc, ns + nc + 6)}


def entity_feature(spec: SynthSpec, shape_idx: int, color_idx: int,
                   x: float, y: float) -> np.ndarray:
    v = np.zeros(spec.entity_dim)
    ns = len(spec.shapes)
    v[shape_idx] = 1.0
    v[ns + color_idx] = 1.0
    base = ns + spec.answer_space_size
    v[base:base + 6] = (x, y, x * x, y * y, x * y, 1.0)
    return v


def _conllu_attribute(shape: str) -> str:
    return "\n".join([
        "1\twhat\tWDT\t2\tdet",
        "2\tcolor\tNN\t0\troot",
        "3\tis\tVBZ\t2\tcop",
        "4\tthe\tDT\t5\tdet",
        f"5\t{shape}\tNN\t2\tnmod",
    ])


def _conllu_relational(shape: str, side: str) -> str:
    return "\n".join([
        "1\twhat\tWDT\t2\tdet",
        "2\tcolor\tNN\t0\troot",
        "3\tis\tVBZ\t2\tcop",
        "4\tthe\tDT\t5\tdet",
        "5\tthing\tNN\t2\tnmod",
        f"6\t{side}\tJJ\t5\tamod",
        "7\tof\tIN\t9\tcase",
        "8\tthe\tDT\t9\tdet",
        f"9\t{shape}\tNN\t6\tobl",
    ])


def _conllu_next_to(shape: str) -> str:
    return "\n".join([
        "1\twhat\tWDT\t2\tdet",
        "2\tcolor\tNN\t0\troot",
        "3\tis\tVBZ\t2\tcop",
        "4\tthe\tDT\t5\tdet",
        "5\tthing\tNN\t2\tnmod",
        "6\tnext\tJJ\t5\tamod",
        "7\tto\tIN\t9\tcase",
        "8\tthe\tDT\t9\tdet",
        f"9\t{shape}\tNN\t6\tobl",
    ])


def _conllu_superlative(word: str) -> str:
    return "\n".join([
        "1\twhat\tWDT\t2\tdet",
        "2\tcolor\tNN\t0\troot",
        "3\tis\tVBZ\t2\tcop",
        "4\tthe\tDT\t6\tdet",
        f"5\t{word}\tJJ\t6\tamod",
        "6\tthing\tNN\t2\tnmod",
    ])


def _make_counts(answer: str, colors: tuple[str, ...],
                 rng: np.random.Generator) -> dict[str, int]:
    counts = {answer: MAJORITY}
    others = [c for c in colors if c != answer]
    for _ in range(ANNOTATORS - MAJORITY):
        pick = others[int(rng.integers(0, len(others)))]
        counts[pick] = counts.get(pick, 0) + 1
    return counts


def generate(spec: SynthSpec) -> list[Instance]:
    """Deterministic instance list; the same spec and seed reproduce it
    byte for byte."""
    rng = np.random.default_rng(spec.seed)
    colors = spec.colors
    instances: list[Instance] = []
    for i in range(spec.num_instances):
        template = spec.templates[i % len(spec.templates)]
        k = int(rng.integers(spec.k_range[0], spec.k_range[1] + 1))
        shape_ids = rng.choice(len(spec.shapes), size=k, replace=False)
        color_ids = rng.integers(0, len(colors), size=k)
        grid = max(k, 10)

        if template == "relational_next":
            # Anchor with one grid-adjacent target; every other entity is
            # kept clearly farther away, so the nearest neighbor is unique
            # with a wide margin.
            anchor = int(rng.integers(0, k))
            rest = [e for e in range(k) if e != anchor]
            target = rest[int(rng.integers(0, len(rest)))]
            ax = int(rng.integers(1, grid - 1))
            ay = int(rng.integers(1, grid - 1))
            offsets = ((1, 0), (-1, 0), (0, 1), (0, -1))
            dx, dy = offsets[int(rng.integers(0, 4))]
            cells = {anchor: (ax, ay), target: (ax + dx, ay + dy)}
            for e in rest:
                if e == target:
                    continue
                while True:
                    x = int(rng.integers(0, grid))
                    y = int(rng.integers(0, grid))
                    if (x - ax) ** 2 + (y - ay) ** 2 >= 7 \
                            and (x, y) not in cells.values():
                        cells[e] = (x, y)
                        break
            xs = np.array([cells[e][0] for e in range(k)])
            ys = np.array([cells[e][1] for e in range(k)])
            answer = colors[color_ids[target]]
            conllu = _conllu_next_to(spec.shapes[shape_ids[anchor]])
        else:
            xs = rng.permutation(grid)[:k]
            ys = rng.integers(0, grid, size=k)
            if template == "attribute":
                anchor = int(rng.integers(0, k))
                answer = colors[color_ids[anchor]]
                conllu = _conllu_attribute(spec.shapes[shape_ids[anchor]])
            elif template in ("relational_left", "relational_right"):
                side = "left" if template == "relational_left" else "right"
                if side == "left":
                    anchors = [e for e in range(k) if xs[e] > xs.min()]
                else:
                    anchors = [e for e in range(k) if xs[e] < xs.max()]
                anchor = anchors[int(rng.integers(0, len(anchors)))]
                if side == "left":
                    cands = [e for e in range(k) if xs[e] < xs[anchor]]
                    target = max(cands, key=lambda e: xs[e])
                else:
                    cands = [e for e in range(k) if xs[e] > xs[anchor]]
                    target = min(cands, key=lambda e: xs[e])
                answer = colors[color_ids[target]]
                conllu = _conllu_relational(spec.shapes[shape_ids[anchor]], side)
            else:  # superlative
                word = "rightmost" if rng.integers(0, 2) else "leftmost"
                target = int(np.argmax(xs) if word == "rightmost"
                             else np.argmin(xs))
                answer = colors[color_ids[target]]
                conllu = _conllu_superlative(word)

        entities = np.stack([
            entity_feature(spec, int(shape_ids[e]), int(color_ids[e]),
                           xs[e] / grid, ys[e] / grid)
            for e in range(k)])

        qid, sid = f"q{i:05d}", f"s{i:05d}"
        block = (f"# question_id = {qid}\n# scene_id = {sid}\n"
                 f"# template = {template}\n{conllu}")
        instances.append(Instance(
            question_id=qid, scene_id=sid, template=template,
            question_conllu=block,
            scene=VisualScene(entities=entities, scene_id=sid),
            answer_counts=_make_counts(answer, colors, rng),
            answer=answer))
    return instances


def split(items: list, fractions: tuple[float, float, float]) -> tuple[list, list, list]:
    """Deterministic, order-stable (train, val, test) partition.

    Sizes are floor(fraction * n) with the remainder assigned to the
    earliest splits.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be a (train, val, test) triple")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(items)
    sizes = [int(np.floor(f * n)) for f in fractions]
    remainder = n - sum(sizes)
    for j in range(3):
        if remainder == 0:
            break
        if fractions[j] > 0:
            sizes[j] += 1
            remainder -= 1
    # Any leftover (all-zero fractions cannot happen: they sum to 1).
    sizes[0] += remainder
    a, b = sizes[0], sizes[0] + sizes[1]
    return list(items[:a]), list(items[a:b]), list(items[b:])


def _round_f32(value: float) -> float:
    return float(np.float32(value))


def write_dataset(instances: list[Instance], out_dir) -> None:
    """Write questions.conllu, scenes.jsonl, and answers.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    questions = "\n\n".join(inst.question_conllu for inst in instances) + "\n"
    (out / "questions.conllu").write_text(questions, encoding="utf-8")
    with open(out / "scenes.jsonl", "w", encoding="utf-8") as fh:
        for inst in instances:
            rows = [[_round_f32(v) for v in row] for row in inst.scene.entities]
            fh.write(json.dumps({"scene_id": inst.scene_id, "entities": rows},
                                sort_keys=True) + "\n")
    with open(out / "answers.jsonl", "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps({"question_id": inst.question_id,
                                 "scene_id": inst.scene_id,
                                 "counts": inst.answer_counts},
                                sort_keys=True) + "\n")
