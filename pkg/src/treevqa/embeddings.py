"""Word, POS, and dependency-label feature tables.

Row 0 of every table is reserved for the unknown symbol, so lookups never
fail; unseen tags from drifting tag sets simply map there.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

__all__ = [
    "UNK",
    "PTB_POS_TAGS",
    "UD_DEPRELS",
    "TableFormatError",
    "EmbeddingTable",
    "load_glove_text",
    "init_random_table",
    "embed_sequence",
]

UNK = "unk"

# Penn Treebank inventory: the 36 word-level tags plus six punctuation and
# symbol tags, 42 entries total.
PTB_POS_TAGS = (
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD",
    "NN", "NNP", "NNPS", "NNS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR",
    "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG", "VBN", "VBP",
    "VBZ", "WDT", "WP", "WP$", "WRB",
    ".", ",", ":", "``", "''", "$",
)

# Universal Dependencies v2 relation inventory (base relations).
UD_DEPRELS = (
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc",
    "ccomp", "clf", "compound", "conj", "cop", "csubj", "dep", "det",
    "discourse", "dislocated", "expl", "fixed", "flat", "goeswith", "iobj",
    "list", "mark", "nmod", "nsubj", "nummod", "obj", "obl", "orphan",
    "parataxis", "punct", "reparandum", "root", "vocative", "xcomp",
)


class TableFormatError(ValueError):
    """Malformed embedding text file."""


class EmbeddingTable:
    """Lookup table from token strings to rows of a [V, dim] matrix."""

    def __init__(self, vocab: dict[str, int], rows: ad.GraphNode,
                 trainable: bool) -> None:
        self.vocab = vocab
        self.rows = rows
        self.trainable = trainable

    @property
    def dim(self) -> int:
        return self.rows.value.shape[1]

    @property
    def size(self) -> int:
        return self.rows.value.shape[0]

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.vocab[UNK])

    def tokens_in_order(self) -> list[str]:
        """Vocabulary strings ordered by row index (for checkpointing)."""
        inverse = {i: tok for tok, i in self.vocab.items()}
        return [inverse[i] for i in range(self.size)]


def _make_vocab(labels) -> dict[str, int]:
    vocab = {UNK: 0}
    for label in labels:
        if label in vocab:
            raise ValueError(f"duplicate label {label!r}")
        vocab[label] = len(vocab)
    return vocab


def load_glove_text(path, dim: int) -> EmbeddingTable:
    """Load a GloVe-style text file (``word v1 ... v_dim`` per line).

    Rows are frozen (not trainable); the unknown row is zero.
    """
    words: list[str] = []
    vectors: list[np.ndarray] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split(" ")
            if len(fields) != dim + 1:
                raise TableFormatError(
                    f"line {line_no}: expected {dim + 1} fields, got {len(fields)}")
            try:
                vec = np.asarray([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError:
                raise TableFormatError(
                    f"line {line_no}: non-numeric vector component") from None
            words.append(fields[0])
            vectors.append(vec)
    vocab = _make_vocab(words)
    rows = np.zeros((len(vocab), dim))
    for word, vec in zip(words, vectors):
        rows[vocab[word]] = vec
    node = ad.GraphNode(ad.Tensor(rows), name="glove", trainable=False)
    return EmbeddingTable(vocab, node, trainable=False)


def init_random_table(labels, dim: int, seed: int) -> EmbeddingTable:
    """Trainable Normal(0, 0.02) table over ``labels`` plus the unknown row."""
    labels = list(labels)
    if not labels:
        raise ValueError("labels must be non-empty")
    vocab = _make_vocab(labels)
    rng = np.random.default_rng(seed)
    rows = rng.normal(0.0, 0.02, size=(len(vocab), dim))
    node = ad.GraphNode(ad.Tensor(rows), name="random_table", trainable=True)
    return EmbeddingTable(vocab, node, trainable=True)


def embed_sequence(table: EmbeddingTable, tokens) -> ad.GraphNode:
    """Row-stacked lookups, [n, dim]; unknown tokens hit the reserved row."""
    tokens = list(tokens)
    if not tokens:
        raise ValueError("embed_sequence: empty token list")
    return ad.take_rows(table.rows, [table.index(t) for t in tokens])
