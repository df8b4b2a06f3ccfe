"""Syntax-tree-guided visual question answering.

A question's dependency tree is decomposed into subtrees, convolved and
refined with relation-aware graph attention into phrase features, which
then steer multi-step message passing over the visual entities of a
scene; a top-down attention head fuses the result into an answer
distribution. Everything runs on the package's own float64 reverse-mode
autodiff core.
"""

from .answer_head import (AnswerSpace, Prediction, SoftTarget, fuse_and_predict,
                          soft_bce_loss, soft_target_from_counts, vqa_score)
from .autodiff import (Adamax, DimensionError, GraphNode, NumericError,
                       ParameterStore, Tensor, backward)
from .config import ConfigError, ModelConfig
from .conllu import (EdgeClass, ParseError, SyntaxSubtree, SyntaxToken,
                     SyntaxTree, decompose, edge_class, parse_conllu,
                     serialize, truncate_subtree)
from .data import DataError, QaInstance, load_dataset
from .embeddings import (EmbeddingTable, embed_sequence, init_random_table,
                         load_glove_text)
from .message_passing import (AttentionTrace, VisualScene, instruction_vector,
                              pass_messages)
from .model import ForwardResult, Model
from .synth import Instance, SynthSpec, generate, split, write_dataset
from .tree_encoder import (QuestionEncoding, SubtreeFeature, bigru_encode,
                           encode_question, phrase_gat, word_level_conv)

__version__ = "0.1.0"
