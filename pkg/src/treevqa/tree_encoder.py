"""Question encoder: subtree convolution, syntax-relation-aware graph
attention, and a bidirectional GRU over the phrase sequence.

The pipeline is decompose -> truncate -> word-level convolution (one
feature vector per syntax subtree) -> multi-head graph attention over
subtree heads -> biGRU, yielding the phrase matrix H and the question
vector q.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .conllu import (EdgeClass, SyntaxSubtree, SyntaxTree, decompose,
                     dep_label, edge_class, truncate_subtree)
from .embeddings import UNK, EmbeddingTable, embed_sequence

__all__ = [
    "SubtreeFeature",
    "QuestionEncoding",
    "GatHeadParams",
    "GruDirectionParams",
    "EncoderParams",
    "word_level_conv",
    "phrase_gat",
    "bigru_encode",
    "encode_question",
]


@dataclass
class SubtreeFeature:
    """Convolution output g for one syntax subtree."""

    head_index: int
    g: ad.GraphNode  # [d_g]


@dataclass
class QuestionEncoding:
    """Phrase features H [s, 2*d_h], question vector q [2*d_h], plus the
    per-phrase rows and bookkeeping the later stages need."""

    H: ad.GraphNode
    q: ad.GraphNode
    rows: list[ad.GraphNode]          # h_i vectors, phrase order
    head_indices: list[int]           # token index backing each phrase
    phrase_labels: list[str]          # human-readable axis labels
    gat_alphas: list[np.ndarray] = field(default_factory=list)
    # Intermediate per-subtree stages, kept for trace export and the
    # stage-by-stage oracle comparison (empty in plain token mode).
    g_rows: list[ad.GraphNode] = field(default_factory=list)
    h_star_rows: list[ad.GraphNode] = field(default_factory=list)


@dataclass
class GatHeadParams:
    """Per-attention-head parameters, keyed by relation direction."""

    W: dict[EdgeClass, ad.GraphNode]  # [d_h/M, d_g] output transforms
    V: dict[EdgeClass, ad.GraphNode]  # [d_h/M, d_g] attention keys
    U: ad.GraphNode                   # [d_h/M, d_x+d_t] attention query
    b_out: ad.GraphNode               # [L, d_h/M] per-dependency bias
    b_att: ad.GraphNode               # [L] per-dependency attention bias


@dataclass
class GruDirectionParams:
    W_z: ad.GraphNode  # [d_h, d_h + gru_in]
    W_r: ad.GraphNode
    W_h: ad.GraphNode
    b_z: ad.GraphNode  # [d_h]
    b_r: ad.GraphNode
    b_h: ad.GraphNode


@dataclass
class EncoderParams:
    # conv/gat parts are None when the encoder runs in plain token mode
    # (the tree-convolution ablation).
    conv_kernel: ad.GraphNode | None  # [window, d_x+d_t, d_g]
    conv_bias: ad.GraphNode | None    # [d_g]
    heads: list[GatHeadParams]
    gru_fwd: GruDirectionParams
    gru_bwd: GruDirectionParams
    window: int
    max_subtree_len: int
    dep_vocab: dict[str, int]  # dependency label -> bias row (0 = unk)
    d_h: int

    def dep_index(self, label: str) -> int:
        return self.dep_vocab.get(label, self.dep_vocab[UNK])


def word_level_conv(f: SyntaxSubtree, tree: SyntaxTree,
                    word_tbl: EmbeddingTable, pos_tbl: EmbeddingTable,
                    params: EncoderParams) -> SubtreeFeature:
    """Convolve word(+POS) features of [head, c1, .., cn] into one vector.

    The sequence is zero-padded on the right to at least one full window;
    stride is 1, activation ReLU, then a column-wise max over windows.
    """
    indices = f.token_indices()
    forms = [tree.token(i).form for i in indices]
    tags = [tree.token(i).upos for i in indices]
    x_cat = ad.concat([embed_sequence(word_tbl, forms),
                       embed_sequence(pos_tbl, tags)], axis=1)

    window, d_in, d_g = params.conv_kernel.value.shape
    n = len(indices)
    if n < window:
        pad = ad.constant(np.zeros((window - n, d_in)), name="conv_pad")
        x_cat = ad.concat([x_cat, pad], axis=0)
        n = window
    kernel = ad.transpose(ad.reshape(params.conv_kernel, (window * d_in, d_g)))
    outs = []
    for t in range(n - window + 1):
        win = ad.reshape(ad.slice_axis(x_cat, 0, t, t + window), (window * d_in,))
        outs.append(ad.add(ad.matvec(kernel, win), params.conv_bias))
    g = ad.max_pool(ad.relu(ad.stack(outs)))
    return SubtreeFeature(head_index=f.head, g=g)


def _neighbor_heads(tree: SyntaxTree, head: int, pos_of: dict[int, int]) -> list[int]:
    # Tree edges between subtree heads, plus the mandatory self loop.
    nbrs = {head}
    parent = tree.token(head).head
    if parent != 0 and parent in pos_of:
        nbrs.add(parent)
    for child in tree.children(head):
        if child in pos_of:
            nbrs.add(child)
    return sorted(nbrs)


def phrase_gat(feats: list[SubtreeFeature], head_x_cat: ad.GraphNode,
               tree: SyntaxTree, params: EncoderParams
               ) -> tuple[list[ad.GraphNode], list[np.ndarray]]:
    """Multi-head relation-aware attention over subtree heads.

    Returns one h* vector of size d_h per subtree (head outputs
    concatenated) and the attention rows for invariant checks. Attention
    logits are query.key plus a per-dependency bias; aggregation weights
    (W_dir g_j + b_dep) by the normalized attention and applies a sigmoid.
    """
    heads = [f.head_index for f in feats]
    pos_of = {h: k for k, h in enumerate(heads)}
    h_star: list[ad.GraphNode] = []
    alphas: list[np.ndarray] = []
    for k, feat in enumerate(feats):
        nbrs = _neighbor_heads(tree, feat.head_index, pos_of)
        rels = []
        for j in nbrs:
            cls = edge_class(tree, feat.head_index, j)
            rels.append((cls, params.dep_index(dep_label(tree, feat.head_index, j))))
        x_i = ad.reshape(ad.slice_axis(head_x_cat, 0, k, k + 1), (head_x_cat.value.shape[1],))
        per_head = []
        for hp in params.heads:
            u_i = ad.matvec(hp.U, x_i)
            logits = []
            for j, (cls, dep) in zip(nbrs, rels):
                key = ad.matvec(hp.V[cls], feats[pos_of[j]].g)
                logits.append(ad.add(ad.dot(u_i, key), ad.element(hp.b_att, dep)))
            alpha = ad.softmax(ad.stack(logits))
            alphas.append(alpha.value.array)
            total = None
            for idx, (j, (cls, dep)) in enumerate(zip(nbrs, rels)):
                bias = ad.reshape(ad.take_rows(hp.b_out, [dep]), (hp.b_out.value.shape[1],))
                term = ad.mul(ad.add(ad.matvec(hp.W[cls], feats[pos_of[j]].g), bias),
                              ad.element(alpha, idx))
                total = term if total is None else ad.add(total, term)
            per_head.append(ad.sigmoid(total))
        h_star.append(ad.concat(per_head, axis=0))
    return h_star, alphas


def _gru_direction(xs: list[ad.GraphNode], p: GruDirectionParams,
                   d_h: int) -> list[ad.GraphNode]:
    h = ad.constant(np.zeros(d_h), name="gru_h0")
    states = []
    for x in xs:
        joint = ad.concat([h, x], axis=0)
        z = ad.sigmoid(ad.add(ad.matvec(p.W_z, joint), p.b_z))
        r = ad.sigmoid(ad.add(ad.matvec(p.W_r, joint), p.b_r))
        cand = ad.tanh(ad.add(ad.matvec(p.W_h, ad.concat([ad.mul(r, h), x], axis=0)),
                              p.b_h))
        # h <- (1 - z) * h + z * cand
        h = ad.add(h, ad.mul(z, ad.sub(cand, h)))
        states.append(h)
    return states


def bigru_encode(inputs: list[ad.GraphNode], params: EncoderParams,
                 head_indices: list[int], phrase_labels: list[str]
                 ) -> QuestionEncoding:
    """Run the GRU forward and backward over the phrase sequence.

    H row t is forward-state(t) concatenated with backward-state(t); q is
    the pair of final states (forward at the last step, backward at the
    first position).
    """
    if not inputs:
        raise ValueError("bigru_encode: empty phrase sequence")
    fwd = _gru_direction(inputs, params.gru_fwd, params.d_h)
    bwd_rev = _gru_direction(list(reversed(inputs)), params.gru_bwd, params.d_h)
    bwd = list(reversed(bwd_rev))
    rows = [ad.concat([f, b], axis=0) for f, b in zip(fwd, bwd)]
    H = ad.stack(rows)
    q = ad.concat([fwd[-1], bwd_rev[-1]], axis=0)
    return QuestionEncoding(H=H, q=q, rows=rows, head_indices=head_indices,
                            phrase_labels=phrase_labels)


def encode_question(tree: SyntaxTree, word_tbl: EmbeddingTable,
                    pos_tbl: EmbeddingTable, params: EncoderParams
                    ) -> QuestionEncoding:
    """Full per-question encoding: decompose, truncate, convolve, attend,
    then sequence-encode."""
    subtrees = [truncate_subtree(f, params.max_subtree_len)
                for f in decompose(tree)]
    feats = [word_level_conv(f, tree, word_tbl, pos_tbl, params)
             for f in subtrees]
    head_forms = [tree.token(f.head).form for f in subtrees]
    head_tags = [tree.token(f.head).upos for f in subtrees]
    head_x_cat = ad.concat([embed_sequence(word_tbl, head_forms),
                            embed_sequence(pos_tbl, head_tags)], axis=1)
    h_star, alphas = phrase_gat(feats, head_x_cat, tree, params)
    labels = [_phrase_label(tree, f) for f in subtrees]
    enc = bigru_encode(h_star, params, [f.head for f in subtrees], labels)
    enc.gat_alphas = alphas
    enc.g_rows = [f.g for f in feats]
    enc.h_star_rows = h_star
    return enc


def _phrase_label(tree: SyntaxTree, f: SyntaxSubtree) -> str:
    words = " ".join(tree.token(i).form for i in sorted(f.token_indices()))
    return f"{tree.token(f.head).form}[{words}]"
