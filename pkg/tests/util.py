"""Shared test helpers: finite differences, random trees, tiny fixtures."""

from __future__ import annotations

import numpy as np

from treevqa.answer_head import AnswerSpace
from treevqa.config import ModelConfig
from treevqa.conllu import SyntaxToken, SyntaxTree, parse_conllu
from treevqa.message_passing import VisualScene
from treevqa.model import Model

_TAGS = ("NN", "VBZ", "DT", "JJ", "IN", "WDT")
_RELS = ("nsubj", "det", "amod", "case", "obl", "nmod", "cop")

RELATIONAL_QUESTION = """\
1\twhat\tWDT\t2\tdet
2\tcolor\tNN\t0\troot
3\tis\tVBZ\t2\tcop
4\tthe\tDT\t5\tdet
5\tthing\tNN\t2\tnmod
6\tleft\tJJ\t5\tamod
7\tof\tIN\t9\tcase
8\tthe\tDT\t9\tdet
9\tball\tNN\t6\tobl
"""

TOY_QUESTION = """\
1\twhat\tWDT\t2\tdet
2\tcolor\tNN\t0\troot
3\tis\tVBZ\t2\tcop
4\tball\tNN\t2\tnmod
"""


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d_x=6, d_t=4, d_h=8, num_heads=2, conv_window=3,
                max_subtree_len=4, d_v=12, d_out=7, num_steps=2, n_ans=4,
                seed=0, k_min=1, k_max=100)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(vocab=("what", "color", "is", "the", "thing", "left",
                      "of", "ball"),
               labels=("a", "b", "c", "d"), **overrides) -> Model:
    cfg = tiny_config(**overrides)
    return Model(cfg, tuple(vocab), AnswerSpace(labels))


def make_scene(rng: np.random.Generator, k: int, d_v: int,
               scene_id: str = "sc") -> VisualScene:
    return VisualScene(entities=rng.normal(0.0, 1.0, size=(k, d_v)),
                       scene_id=scene_id)


def relational_tree() -> SyntaxTree:
    return parse_conllu(RELATIONAL_QUESTION)[0]


def toy_tree() -> SyntaxTree:
    return parse_conllu(TOY_QUESTION)[0]


def finite_difference(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f w.r.t. every entry of arr.

    Mutates arr in place during probing and restores it afterwards.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        up = f()
        flat[i] = original - h
        down = f()
        flat[i] = original
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float = 1e-6) -> float:
    """Worst relative disagreement; tiny pairs are compared absolutely."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(abs(a), abs(n))
        if denom < floor:
            if abs(a - n) >= 1e-8:
                worst = max(worst, 1.0)
        else:
            worst = max(worst, abs(a - n) / denom)
    return worst


def random_tree(rng: np.random.Generator, n: int) -> SyntaxTree:
    """Uniform-ish random dependency tree over n tokens."""
    order = rng.permutation(n) + 1
    heads = np.zeros(n + 1, dtype=int)
    for k, node in enumerate(order[1:], start=1):
        heads[node] = order[int(rng.integers(0, k))]
    tokens = [SyntaxToken(index=i, form=f"w{i}",
                          upos=_TAGS[int(rng.integers(0, len(_TAGS)))],
                          head=int(heads[i]),
                          deprel="root" if heads[i] == 0
                          else _RELS[int(rng.integers(0, len(_RELS)))])
              for i in range(1, n + 1)]
    return SyntaxTree(tokens)
