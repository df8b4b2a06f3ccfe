"""Full network assembly: parameters, forward pass, and ablation paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .answer_head import (AnswerHeadParams, AnswerSpace, Prediction,
                          fuse_and_predict, soft_bce_loss,
                          soft_target_from_counts)
from .config import ModelConfig
from .conllu import SELF_LABEL, EdgeClass, SyntaxTree
from .embeddings import UNK, EmbeddingTable, embed_sequence
from .message_passing import (AttentionTrace, MessagePassingParams,
                              VisualScene, pass_messages)
from .tree_encoder import (EncoderParams, GatHeadParams, GruDirectionParams,
                           QuestionEncoding, bigru_encode, encode_question)

__all__ = ["Model", "ForwardResult"]


@dataclass
class ForwardResult:
    encoding: QuestionEncoding
    v_out: ad.GraphNode  # [K, d_out]
    trace: AttentionTrace
    prediction: Prediction


class Model:
    """Question encoder + message passing + answer head over one store.

    ``word_vocab`` excludes the reserved unknown token; pass ``word_rows``
    (shape [1 + len(vocab), d_x], unknown row first) to seed the word table
    from pretrained vectors, in which case it is typically frozen.
    """

    def __init__(self, config: ModelConfig, word_vocab, space: AnswerSpace,
                 word_rows: np.ndarray | None = None,
                 word_trainable: bool = True) -> None:
        config.validate()
        self.config = config
        self.space = space
        self.word_vocab = tuple(word_vocab)
        self.word_trainable = bool(word_trainable)
        self.store = ad.ParameterStore(config.seed)

        d_in = config.d_x + config.d_t
        d_g = config.conv_channels
        d_c = 2 * config.d_h

        vocab = {UNK: 0}
        for w in self.word_vocab:
            if w in vocab:
                raise ValueError(f"duplicate vocabulary word {w!r}")
            vocab[w] = len(vocab)
        if word_rows is None:
            # Pretrained-vector stand-in: word vectors carry O(1) magnitude
            # (like GloVe), unlike the small-std label tables, so question
            # content is distinguishable from the first forward pass.
            rng = np.random.default_rng(config.seed + 1)
            word_rows = rng.normal(0.0, 0.5, size=(len(vocab), config.d_x))
            word_rows[0] = 0.0  # unknown-word row stays zero
        word_rows = np.asarray(word_rows, dtype=np.float64)
        if word_rows.shape != (len(vocab), config.d_x):
            raise ValueError(
                f"word rows {word_rows.shape} do not match vocab "
                f"({len(vocab)} x {config.d_x})")
        word_node = self.store.add("embed.word", word_rows,
                                   trainable=self.word_trainable)
        self.word_table = EmbeddingTable(vocab, word_node, self.word_trainable)

        rng_pos = np.random.default_rng(config.seed + 2)
        pos_vocab = {UNK: 0}
        for tag in config.pos_tags:
            pos_vocab[tag] = len(pos_vocab)
        pos_node = self.store.add(
            "embed.pos", rng_pos.normal(0.0, 0.02, size=(len(pos_vocab), config.d_t)))
        self.pos_table = EmbeddingTable(pos_vocab, pos_node, trainable=True)

        dep_vocab = {UNK: 0}
        for rel in config.deprels:
            dep_vocab[rel] = len(dep_vocab)
        dep_vocab[SELF_LABEL] = len(dep_vocab)
        self.dep_vocab = dep_vocab
        n_dep = len(dep_vocab)

        st = self.store
        if config.no_tree_conv:
            self.encoder_params = EncoderParams(
                conv_kernel=None, conv_bias=None, heads=[],
                gru_fwd=self._gru_params("tok.gru.fwd", d_in),
                gru_bwd=self._gru_params("tok.gru.bwd", d_in),
                window=config.conv_window,
                max_subtree_len=config.max_subtree_len,
                dep_vocab=dep_vocab, d_h=config.d_h)
        else:
            kernel = st.glorot("enc.conv.kernel",
                               (config.conv_window, d_in, d_g),
                               fans=(config.conv_window * d_in, d_g))
            bias = st.zeros("enc.conv.bias", (d_g,))
            d_head = config.d_h // config.num_heads
            heads = []
            for m in range(config.num_heads):
                prefix = f"enc.gat.h{m}"
                heads.append(GatHeadParams(
                    W={cls: st.glorot(f"{prefix}.W.{cls.value}", (d_head, d_g))
                       for cls in EdgeClass},
                    V={cls: st.glorot(f"{prefix}.V.{cls.value}", (d_head, d_g))
                       for cls in EdgeClass},
                    U=st.glorot(f"{prefix}.U", (d_head, d_in)),
                    b_out=st.zeros(f"{prefix}.b_out", (n_dep, d_head)),
                    b_att=st.zeros(f"{prefix}.b_att", (n_dep,))))
            self.encoder_params = EncoderParams(
                conv_kernel=kernel, conv_bias=bias, heads=heads,
                gru_fwd=self._gru_params("enc.gru.fwd", config.d_h),
                gru_bwd=self._gru_params("enc.gru.bwd", config.d_h),
                window=config.conv_window,
                max_subtree_len=config.max_subtree_len,
                dep_vocab=dep_vocab, d_h=config.d_h)

        d_ctx = config.d_out
        d_tilde = config.d_v + d_ctx + d_ctx
        self.mp_params = MessagePassingParams(
            W0=st.glorot("mp.W0", (d_ctx, config.d_v)),
            W1=st.glorot("mp.W1", (1, d_c)),
            W2=[st.glorot(f"mp.W2.s{t}", (d_c, d_c))
                for t in range(1, config.effective_steps + 1)],
            W3=st.glorot("mp.W3", (d_c, d_c)),
            W4=st.glorot("mp.W4", (d_ctx, config.d_v)),
            W5=st.glorot("mp.W5", (d_ctx, d_ctx)),
            W6=st.glorot("mp.W6", (d_ctx, d_tilde)),
            W7=st.glorot("mp.W7", (d_ctx, d_tilde)),
            W8=st.glorot("mp.W8", (d_ctx, d_c)),
            W9=st.glorot("mp.W9", (d_ctx, d_tilde)),
            W10=st.glorot("mp.W10", (d_ctx, d_c)),
            W11=st.glorot("mp.W11", (d_ctx, d_ctx + d_ctx)),
            W12=st.glorot("mp.W12", (config.d_out, config.d_v + d_ctx)),
            steps=config.effective_steps)

        self.head_params = AnswerHeadParams(
            W13=st.glorot("head.W13", (1, config.d_out)),
            W14=st.glorot("head.W14", (config.d_out, config.d_out)),
            W15=st.glorot("head.W15", (config.d_out, d_c)),
            W16=st.glorot("head.W16", (space.size, config.d_out)),
            W17=st.glorot("head.W17", (config.d_out, config.d_out + d_c)))

    def _gru_params(self, prefix: str, in_dim: int) -> GruDirectionParams:
        st, d_h = self.store, self.config.d_h
        return GruDirectionParams(
            W_z=st.glorot(f"{prefix}.Wz", (d_h, d_h + in_dim)),
            W_r=st.glorot(f"{prefix}.Wr", (d_h, d_h + in_dim)),
            W_h=st.glorot(f"{prefix}.Wh", (d_h, d_h + in_dim)),
            b_z=st.zeros(f"{prefix}.bz", (d_h,)),
            b_r=st.zeros(f"{prefix}.br", (d_h,)),
            b_h=st.zeros(f"{prefix}.bh", (d_h,)))

    def encode(self, tree: SyntaxTree) -> QuestionEncoding:
        """Question encoding; the tree-convolution ablation replaces the
        subtree pipeline with a biGRU straight over token features."""
        if not self.config.no_tree_conv:
            return encode_question(tree, self.word_table, self.pos_table,
                                   self.encoder_params)
        forms = [t.form for t in tree.tokens]
        tags = [t.upos for t in tree.tokens]
        x_cat = ad.concat([embed_sequence(self.word_table, forms),
                           embed_sequence(self.pos_table, tags)], axis=1)
        d_in = x_cat.value.shape[1]
        inputs = [ad.reshape(ad.slice_axis(x_cat, 0, i, i + 1), (d_in,))
                  for i in range(len(forms))]
        return bigru_encode(inputs, self.encoder_params,
                            [t.index for t in tree.tokens], forms)

    def check_scene(self, scene: VisualScene) -> None:
        k = scene.num_entities
        if not (self.config.k_min <= k <= self.config.k_max):
            raise ValueError(
                f"scene {scene.scene_id!r} has {k} entities, outside "
                f"[{self.config.k_min}, {self.config.k_max}]")
        if scene.entities.shape[1] != self.config.d_v:
            raise ValueError(
                f"scene {scene.scene_id!r} entity dim {scene.entities.shape[1]} "
                f"!= configured d_v {self.config.d_v}")

    def forward(self, tree: SyntaxTree, scene: VisualScene) -> ForwardResult:
        self.check_scene(scene)
        enc = self.encode(tree)
        v_out, trace = pass_messages(scene, enc, self.mp_params)
        pred = fuse_and_predict(v_out, enc.q, self.head_params, self.space,
                                uniform_attention=self.config.no_fused_attention)
        trace.final_attn = pred.beta
        return ForwardResult(encoding=enc, v_out=v_out, trace=trace,
                             prediction=pred)

    def loss(self, result: ForwardResult, counts: dict[str, int]) -> ad.GraphNode:
        target = soft_target_from_counts(counts, self.space)
        return soft_bce_loss(result.prediction.p_sigmoid, target)
