"""Top-down attention fusion, answer scoring, soft-label loss, and the
annotator-count accuracy metric.

The answer logits feed two heads that share every parameter: a softmax for
reporting the answer distribution, and a per-class sigmoid used by the
soft binary cross-entropy loss (the (1-y)*log(1-p) term is only
well-posed per class). Argmax is identical under either monotone map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "PROB_EPS",
    "AnswerSpace",
    "SoftTarget",
    "Prediction",
    "AnswerHeadParams",
    "fuse_and_predict",
    "soft_bce_loss",
    "soft_target_from_counts",
    "vqa_score",
]

PROB_EPS = 1e-7


class AnswerSpace:
    """Ordered, unique candidate answers."""

    def __init__(self, labels) -> None:
        labels = tuple(labels)
        if len(labels) < 2:
            raise ValueError("answer space needs at least two labels")
        if len(set(labels)) != len(labels):
            raise ValueError("answer labels must be unique")
        self.labels = labels
        self._index = {a: i for i, a in enumerate(labels)}

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self._index[label]

    def __eq__(self, other) -> bool:
        return isinstance(other, AnswerSpace) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"AnswerSpace(n={self.size})"


@dataclass
class SoftTarget:
    """Per-answer soft labels y_i = min(count_i / 3, 1)."""

    y: np.ndarray

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 1:
            raise ValueError(f"soft target must be a vector, got {self.y.shape}")
        if np.any(self.y < 0) or np.any(self.y > 1):
            raise ValueError("soft target entries must lie in [0, 1]")


def soft_target_from_counts(counts: dict[str, int], space: AnswerSpace) -> SoftTarget:
    y = np.zeros(space.size)
    for answer, count in counts.items():
        if count < 0:
            raise ValueError(f"negative annotator count for {answer!r}")
        if answer in space._index:
            y[space.index(answer)] = min(count / 3.0, 1.0)
    return SoftTarget(y)


@dataclass
class Prediction:
    """Answer distribution plus the entity attention that produced it."""

    p: np.ndarray            # softmax over answers
    argmax_label: str
    beta: np.ndarray         # [K] entity attention
    logits: ad.GraphNode     # shared by both probability heads
    p_sigmoid: ad.GraphNode  # clamped per-class sigmoid (loss path)

    def top_k(self, space: AnswerSpace, k: int = 5) -> list[tuple[str, float]]:
        order = np.argsort(-self.p)[:k]
        return [(space.labels[i], float(self.p[i])) for i in order]


@dataclass
class AnswerHeadParams:
    W13: ad.GraphNode  # [1, d_f] attention logit
    W14: ad.GraphNode  # [d_f, d_out]
    W15: ad.GraphNode  # [d_f, d_q]
    W16: ad.GraphNode  # [N_ans, d_j]
    W17: ad.GraphNode  # [d_j, d_out + d_q]


def fuse_and_predict(v_out: ad.GraphNode, q: ad.GraphNode,
                     params: AnswerHeadParams, space: AnswerSpace,
                     uniform_attention: bool = False) -> Prediction:
    """Attend over the [K, d_out] entity features with q, fuse, and score.

    ``uniform_attention`` replaces the learned weighting with beta = 1/K
    (the fused-attention ablation).
    """
    if v_out.value.array.ndim != 2 or v_out.value.shape[0] < 1:
        raise ValueError(
            f"fuse_and_predict: need a [K, d_out] matrix, got {v_out.value.shape}")
    k = v_out.value.shape[0]
    if uniform_attention:
        beta = ad.constant(np.full(k, 1.0 / k), name="uniform_beta")
    else:
        scores = ad.tanh(ad.add(ad.matmul(v_out, ad.transpose(params.W14)),
                                ad.stack([ad.matvec(params.W15, q)] * k)))
        beta = ad.softmax(ad.reshape(ad.matmul(scores, ad.transpose(params.W13)),
                                     (k,)))
    fused = ad.matvec(ad.transpose(v_out), beta)
    joint = ad.concat([fused, q], axis=0)
    answer_logits = ad.matvec(params.W16, ad.relu(ad.matvec(params.W17, joint)))
    p = ad.softmax(answer_logits)
    p_sig = ad.clip(ad.sigmoid(answer_logits), PROB_EPS, 1.0 - PROB_EPS)
    arg = int(np.argmax(p.value.array))
    return Prediction(p=p.value.array.copy(), argmax_label=space.labels[arg],
                      beta=beta.value.array.copy(), logits=answer_logits,
                      p_sigmoid=p_sig)


def soft_bce_loss(p_hat: ad.GraphNode, target: SoftTarget) -> ad.GraphNode:
    """Mean per-class binary cross-entropy against soft labels.

    ``p_hat`` must already be clamped away from {0, 1} (the prediction
    path clamps to [1e-7, 1 - 1e-7]).
    """
    n = target.y.shape[0]
    if p_hat.value.shape != (n,):
        raise ad.DimensionError(
            f"loss: probabilities {p_hat.value.shape} vs targets ({n},)")
    y = ad.constant(target.y, name="target_y")
    y_inv = ad.constant(1.0 - target.y, name="target_y_inv")
    one = ad.constant(np.ones(n))
    per_class = ad.add(ad.mul(y, ad.log(p_hat)),
                       ad.mul(y_inv, ad.log(ad.sub(one, p_hat))))
    return ad.mul(ad.sum_all(per_class), -1.0 / n)


def vqa_score(predicted: str, counts: dict[str, int]) -> float:
    """Annotator-agreement accuracy: min(count/3, 1), 0 if never chosen."""
    count = counts.get(predicted, 0)
    if count < 0:
        raise ValueError(f"negative annotator count for {predicted!r}")
    return min(count / 3.0, 1.0)
