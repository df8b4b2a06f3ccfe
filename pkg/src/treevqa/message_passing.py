"""Phrase-guided multi-step message passing over the visual entity graph.

Each step derives an instruction vector from the phrase features, scores
every ordered sender/receiver pair on the complete entity graph, and
accumulates the received messages into a per-entity scene context via a
residual update. Self-messages are excluded; the entity's own features
re-enter through the residual concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tree_encoder import QuestionEncoding

__all__ = [
    "VisualScene",
    "MessagePassingParams",
    "AttentionTrace",
    "instruction_vector",
    "pass_messages",
]


@dataclass
class VisualScene:
    """K entity feature vectors for one image."""

    entities: np.ndarray  # [K, d_v] float64
    scene_id: str

    def __post_init__(self) -> None:
        self.entities = np.asarray(self.entities, dtype=np.float64)
        if self.entities.ndim != 2 or self.entities.shape[0] < 1:
            raise ValueError(
                f"scene {self.scene_id!r}: need at least one entity row, "
                f"got shape {self.entities.shape}")
        if not np.all(np.isfinite(self.entities)):
            raise ValueError(f"scene {self.scene_id!r}: non-finite entity features")

    @property
    def num_entities(self) -> int:
        return self.entities.shape[0]


@dataclass
class MessagePassingParams:
    W0: ad.GraphNode             # [d_ctx, d_v] context init
    W1: ad.GraphNode             # [1, d_c] instruction logit
    W2: list[ad.GraphNode]       # per-step [d_c, d_c]
    W3: ad.GraphNode             # [d_c, d_c]
    W4: ad.GraphNode             # [d_m, d_v]
    W5: ad.GraphNode             # [d_m, d_ctx]
    W6: ad.GraphNode             # [d_a, d_tilde] receiver key
    W7: ad.GraphNode             # [d_a, d_tilde] sender key
    W8: ad.GraphNode             # [d_a, d_c] instruction gate (weights)
    W9: ad.GraphNode             # [d_msg, d_tilde] message content
    W10: ad.GraphNode            # [d_msg, d_c] instruction gate (messages)
    W11: ad.GraphNode            # [d_ctx, d_ctx + d_msg] residual update
    W12: ad.GraphNode            # [d_out, d_v + d_ctx] output projection
    steps: int

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if len(self.W2) < self.steps:
            raise ValueError(
                f"need one instruction matrix per step: have {len(self.W2)}, "
                f"steps {self.steps}")


@dataclass
class AttentionTrace:
    """Per-step attentions exported for analysis.

    ``msg_weights[t][j, i]`` is the weight of the message from sender j to
    receiver i at step t+1; the diagonal is zero by construction. The
    final entity attention is filled in by the answer head.
    """

    instr_attn: np.ndarray   # [T, s]
    msg_weights: np.ndarray  # [T, K, K]
    final_attn: np.ndarray   # [K]


def instruction_vector(enc: QuestionEncoding, t: int,
                       params: MessagePassingParams
                       ) -> tuple[ad.GraphNode, ad.GraphNode]:
    """Step-t instruction: attention over phrase features given q.

    Returns (c_t, alpha_t) with alpha_t the [s] attention over phrases.
    """
    if not (1 <= t <= params.steps):
        raise ValueError(f"step {t} out of range 1..{params.steps}")
    probe = ad.matvec(params.W2[t - 1], ad.relu(ad.matvec(params.W3, enc.q)))
    logits = [ad.element(ad.matvec(params.W1, ad.mul(h_i, probe)), 0)
              for h_i in enc.rows]
    alpha = ad.softmax(ad.stack(logits))
    c_t = ad.matvec(ad.transpose(enc.H), alpha)
    return c_t, alpha


def pass_messages(scene: VisualScene, enc: QuestionEncoding,
                  params: MessagePassingParams
                  ) -> tuple[ad.GraphNode, AttentionTrace]:
    """Run T message-passing steps and project the final entity features.

    Returns the [K, d_out] output matrix and the attention trace (with
    final_attn left zeroed for the answer head to fill). Entities are
    processed as stacked matrices; only the per-receiver softmax over the
    K-1 senders stays a loop.
    """
    k = scene.num_entities
    s = len(enc.rows)
    v_mat = ad.constant(scene.entities, name="entities")
    ctx = ad.matmul(v_mat, ad.transpose(params.W0))

    instr_attn = np.zeros((params.steps, s))
    msg_weights = np.zeros((params.steps, k, k))

    def drop_row(matrix: ad.GraphNode, i: int) -> ad.GraphNode:
        if i == 0:
            return ad.slice_axis(matrix, 0, 1, k)
        if i == k - 1:
            return ad.slice_axis(matrix, 0, 0, k - 1)
        return ad.concat([ad.slice_axis(matrix, 0, 0, i),
                          ad.slice_axis(matrix, 0, i + 1, k)], axis=0)

    def row(matrix: ad.GraphNode, i: int, width: int) -> ad.GraphNode:
        return ad.reshape(ad.slice_axis(matrix, 0, i, i + 1), (width,))

    w4t, w5t = ad.transpose(params.W4), ad.transpose(params.W5)
    w6t, w7t = ad.transpose(params.W6), ad.transpose(params.W7)
    w9t = ad.transpose(params.W9)
    w11t, w12t = ad.transpose(params.W11), ad.transpose(params.W12)
    d_a = params.W6.value.shape[0]
    d_msg = params.W9.value.shape[0]

    for t in range(1, params.steps + 1):
        c_t, alpha = instruction_vector(enc, t, params)
        instr_attn[t - 1] = alpha.value.array
        gate_w = ad.stack([ad.matvec(params.W8, c_t)] * k)   # [K, d_a]
        gate_m = ad.stack([ad.matvec(params.W10, c_t)] * k)  # [K, d_msg]
        tilde = ad.concat([v_mat, ctx,
                           ad.mul(ad.matmul(v_mat, w4t), ad.matmul(ctx, w5t))],
                          axis=1)
        queries = ad.mul(ad.matmul(tilde, w6t), gate_w)
        keys = ad.matmul(tilde, w7t)
        bodies = ad.mul(ad.matmul(tilde, w9t), gate_m)
        msg_sums = []
        for i in range(k):
            senders = [j for j in range(k) if j != i]
            if senders:
                weights = ad.softmax(ad.matvec(drop_row(keys, i),
                                               row(queries, i, d_a)))
                msg_weights[t - 1, senders, i] = weights.value.array
                msg_sums.append(ad.matvec(ad.transpose(drop_row(bodies, i)),
                                          weights))
            else:
                msg_sums.append(ad.constant(np.zeros(d_msg), name="no_senders"))
        ctx = ad.matmul(ad.concat([ctx, ad.stack(msg_sums)], axis=1), w11t)

    v_out = ad.matmul(ad.concat([v_mat, ctx], axis=1), w12t)
    trace = AttentionTrace(instr_attn=instr_attn, msg_weights=msg_weights,
                           final_attn=np.zeros(k))
    return v_out, trace
