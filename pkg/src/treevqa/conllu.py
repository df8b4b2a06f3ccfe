"""CoNLL-U question ingestion: syntax trees and their convolution units.

Accepts either the 5-column subset (ID FORM UPOS HEAD DEPREL) or full
10-column CoNLL-U, from which columns 1, 2, 4, 7, 8 are kept. Comment
lines start with ``#``; multiword ranges (``3-4``) and empty nodes
(``3.1``) are skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "ParseError",
    "EdgeClass",
    "SyntaxToken",
    "SyntaxTree",
    "SyntaxSubtree",
    "parse_conllu",
    "serialize",
    "decompose",
    "truncate_subtree",
    "edge_class",
    "dep_label",
    "SELF_LABEL",
]

SELF_LABEL = "self"

_RANGE_ID = re.compile(r"^\d+-\d+$")
_EMPTY_ID = re.compile(r"^\d+\.\d+$")


class ParseError(ValueError):
    """Malformed or structurally invalid input, tagged with a line number."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EdgeClass(Enum):
    """Direction of a syntax relation, for attention weight selection."""

    HEAD_TO_DEP = "head_to_dep"
    DEP_TO_HEAD = "dep_to_head"
    SELF = "self"


@dataclass(frozen=True)
class SyntaxToken:
    index: int  # 1-based sentence position
    form: str
    upos: str
    head: int  # 0 = root
    deprel: str


class SyntaxTree:
    """Validated dependency tree over one sentence.

    Construction checks the full contract: exactly one root, heads in
    range, no self-heads, and head links forming a connected acyclic tree.
    """

    __slots__ = ("tokens", "root", "_children")

    def __init__(self, tokens) -> None:
        tokens = tuple(tokens)
        n = len(tokens)
        if n == 0:
            raise ParseError("empty sentence")
        roots = []
        for pos, tok in enumerate(tokens, start=1):
            if tok.index != pos:
                raise ParseError(f"token index {tok.index} at position {pos} is not contiguous")
            if tok.head == tok.index:
                raise ParseError(f"token {tok.index} is its own head")
            if not (0 <= tok.head <= n):
                raise ParseError(f"token {tok.index} has dangling head {tok.head}")
            if tok.head == 0:
                roots.append(tok.index)
        if len(roots) != 1:
            raise ParseError(f"expected exactly one root, found {len(roots)}")
        children: dict[int, list[int]] = {i: [] for i in range(1, n + 1)}
        for tok in tokens:
            if tok.head != 0:
                children[tok.head].append(tok.index)
        # Every node must reach the root without revisiting (no cycles).
        for start in range(1, n + 1):
            seen = set()
            cur = start
            while cur != 0:
                if cur in seen:
                    raise ParseError(f"head links form a cycle through token {start}")
                seen.add(cur)
                cur = tokens[cur - 1].head
        self.tokens = tokens
        self.root = roots[0]
        self._children = {i: tuple(c) for i, c in children.items()}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, SyntaxTree) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def token(self, index: int) -> SyntaxToken:
        """Token by 1-based sentence position."""
        return self.tokens[index - 1]

    def children(self, index: int) -> tuple[int, ...]:
        """Direct dependents of a token, in sentence order."""
        return self._children[index]

    def edges(self) -> list[tuple[int, int]]:
        """(head, dependent) pairs, dependent order."""
        return [(t.head, t.index) for t in self.tokens if t.head != 0]

    def __repr__(self) -> str:
        words = " ".join(t.form for t in self.tokens)
        return f"SyntaxTree({words!r})"


@dataclass(frozen=True)
class SyntaxSubtree:
    """A non-leaf token plus its direct dependents: one convolution unit."""

    head: int
    children: tuple[int, ...]

    def token_indices(self) -> tuple[int, ...]:
        return (self.head,) + self.children

    def __len__(self) -> int:
        return 1 + len(self.children)


def _token_from_fields(fields: list[str], line_no: int) -> SyntaxToken | None:
    if len(fields) == 5:
        raw_id, form, upos, raw_head, deprel = fields
    elif len(fields) == 10:
        raw_id, form, upos, raw_head, deprel = (
            fields[0], fields[1], fields[3], fields[6], fields[7])
    else:
        raise ParseError(f"expected 5 or 10 columns, got {len(fields)}", line_no)
    if _RANGE_ID.match(raw_id) or _EMPTY_ID.match(raw_id):
        return None
    try:
        index = int(raw_id)
    except ValueError:
        raise ParseError(f"bad token id {raw_id!r}", line_no) from None
    try:
        head = int(raw_head)
    except ValueError:
        raise ParseError(f"bad head index {raw_head!r}", line_no) from None
    return SyntaxToken(index=index, form=form, upos=upos, head=head, deprel=deprel)


def parse_conllu(text: str) -> list[SyntaxTree]:
    """Parse blank-line-separated sentences into validated syntax trees.

    Structural violations (cycle, multiple roots, dangling head, self-head,
    bad column count) raise ``ParseError`` carrying the offending line.
    """
    trees: list[SyntaxTree] = []
    pending: list[SyntaxToken] = []
    first_line = 0

    def flush() -> None:
        nonlocal pending, first_line
        if not pending:
            return
        try:
            trees.append(SyntaxTree(pending))
        except ParseError as err:
            raise ParseError(str(err), first_line) from None
        pending = []
        first_line = 0

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            continue
        tok = _token_from_fields(line.split(), line_no)
        if tok is None:
            continue
        if not pending:
            first_line = line_no
        pending.append(tok)
    flush()
    return trees


def serialize(trees) -> str:
    """Inverse of ``parse_conllu`` on the supported 5-column subset."""
    blocks = []
    for tree in trees:
        lines = [f"{t.index}\t{t.form}\t{t.upos}\t{t.head}\t{t.deprel}"
                 for t in tree.tokens]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def decompose(tree: SyntaxTree) -> list[SyntaxSubtree]:
    """One subtree per non-leaf node, ordered by head sentence position.

    A single-token sentence yields one degenerate subtree holding only the
    root, so downstream encoders always see at least one phrase.
    """
    subtrees = [SyntaxSubtree(head=i, children=tree.children(i))
                for i in range(1, len(tree) + 1) if tree.children(i)]
    if not subtrees:
        subtrees = [SyntaxSubtree(head=tree.root, children=())]
    return subtrees


def truncate_subtree(f: SyntaxSubtree, max_len: int) -> SyntaxSubtree:
    """Keep the head and the first ``max_len - 1`` children by position."""
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    if len(f) <= max_len:
        return f
    return SyntaxSubtree(head=f.head, children=f.children[:max_len - 1])


def edge_class(tree: SyntaxTree, i: int, j: int) -> EdgeClass:
    """Direction class of the relation between tokens i and j."""
    if i == j:
        return EdgeClass.SELF
    if tree.token(j).head == i:
        return EdgeClass.HEAD_TO_DEP
    if tree.token(i).head == j:
        return EdgeClass.DEP_TO_HEAD
    raise ValueError(f"tokens {i} and {j} are not connected by a tree edge")


def dep_label(tree: SyntaxTree, i: int, j: int) -> str:
    """Dependency label of the edge (the dependent's deprel); self-loops
    use the reserved label."""
    cls = edge_class(tree, i, j)
    if cls is EdgeClass.SELF:
        return SELF_LABEL
    dependent = j if cls is EdgeClass.HEAD_TO_DEP else i
    return tree.token(dependent).deprel
