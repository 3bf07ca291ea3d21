"""Immutable prefix tree over token sequences and per-hypothesis cursors.

The tree is compiled once from a :class:`~treebias.lexicon.BiasingLexicon`
and is then shared read-only by every decode. A :class:`TreeCursor` is a
tiny value tracking one hypothesis's position inside the tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyLexicon, InvalidCursor, IoFailure
from .lexicon import BiasingLexicon

_NO_CHILDREN = np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class TreeCursor:
    """Position in a prefix tree: node index plus tokens consumed since root.

    ``reset`` flags cursors produced by an advance that had to abandon the
    previous path; it does not participate in equality.
    """

    node: int
    depth: int
    reset: bool = field(default=False, compare=False)


class PrefixTree:
    """Token-sequence trie with contiguous, index-based node storage.

    Children are kept as parallel sorted arrays (token ids, child indices)
    per node: lookups are binary searches and iteration order is
    deterministic. Instances are immutable after construction.
    """

    __slots__ = ("_child_tokens", "_child_nodes", "_phrase_ids", "_depths", "_phrase_count")

    def __init__(
        self,
        child_tokens: tuple[np.ndarray, ...],
        child_nodes: tuple[np.ndarray, ...],
        phrase_ids: tuple[int, ...],
        depths: tuple[int, ...],
        phrase_count: int,
    ):
        self._child_tokens = child_tokens
        self._child_nodes = child_nodes
        self._phrase_ids = phrase_ids  # -1 for non-terminal nodes
        self._depths = depths
        self._phrase_count = phrase_count

    @property
    def node_count(self) -> int:
        return len(self._child_tokens)

    @property
    def phrase_count(self) -> int:
        return self._phrase_count

    def root_cursor(self) -> TreeCursor:
        return TreeCursor(node=0, depth=0)

    def _check(self, cursor: TreeCursor) -> None:
        if not 0 <= cursor.node < len(self._child_tokens):
            raise InvalidCursor(f"node {cursor.node} outside 0..{len(self._child_tokens) - 1}")
        if cursor.depth != self._depths[cursor.node]:
            raise InvalidCursor(
                f"depth {cursor.depth} does not match node {cursor.node} "
                f"(expected {self._depths[cursor.node]})"
            )

    def child_token_array(self, node: int) -> np.ndarray:
        """Sorted token ids leaving ``node``; the decoder's hot-path view."""
        return self._child_tokens[node]

    def valid_tokens(self, cursor: TreeCursor) -> set[int]:
        """Tokens that extend the cursor's prefix; empty at childless terminals."""
        self._check(cursor)
        return {int(t) for t in self._child_tokens[cursor.node]}

    def advance(self, cursor: TreeCursor, token: int) -> TreeCursor:
        """Move the cursor along ``token``.

        An in-tree token descends to its child. Any other token resets to
        the root and immediately re-attempts a root-level match with the
        same token, so a phrase starting right after a completed or
        abandoned path is still tracked from its first token.
        """
        self._check(cursor)
        child = self._find_child(cursor.node, token)
        if child >= 0:
            return TreeCursor(node=child, depth=cursor.depth + 1)
        root_child = self._find_child(0, token)
        if root_child >= 0:
            return TreeCursor(node=root_child, depth=1, reset=True)
        return TreeCursor(node=0, depth=0, reset=True)

    def phrase_completed(self, cursor: TreeCursor) -> int | None:
        """Phrase id if the cursor sits on a terminal node, else None."""
        self._check(cursor)
        pid = self._phrase_ids[cursor.node]
        return pid if pid >= 0 else None

    def walk(self, tokens) -> TreeCursor | None:
        """Pure descent from the root; None as soon as a token is off-path."""
        node = 0
        depth = 0
        for token in tokens:
            child = self._find_child(node, token)
            if child < 0:
                return None
            node = child
            depth += 1
        return TreeCursor(node=node, depth=depth)

    def _find_child(self, node: int, token: int) -> int:
        tokens = self._child_tokens[node]
        ix = np.searchsorted(tokens, token)
        if ix < len(tokens) and tokens[ix] == token:
            return int(self._child_nodes[node][ix])
        return -1

    def dump_lines(self) -> list[str]:
        """One line per node: ``<ix> <terminal 0|1> <phrase-id|-> <tok:child ...>``."""
        lines = []
        for ix in range(len(self._child_tokens)):
            pid = self._phrase_ids[ix]
            pairs = " ".join(
                f"{int(t)}:{int(c)}"
                for t, c in zip(self._child_tokens[ix], self._child_nodes[ix])
            )
            head = f"{ix} {1 if pid >= 0 else 0} {pid if pid >= 0 else '-'}"
            lines.append(f"{head} {pairs}".rstrip())
        return lines


def build_tree(lexicon: BiasingLexicon) -> PrefixTree:
    """Compile the lexicon's token sequences into a prefix tree.

    The tree accepts exactly the lexicon's token sequences as
    root-to-terminal paths; the root is always node 0.
    """
    if not lexicon.phrases:
        raise EmptyLexicon("cannot build a prefix tree from an empty lexicon")
    children: list[dict[int, int]] = [{}]
    phrase_ids: list[int] = [-1]
    depths: list[int] = [0]
    seen_seqs: set[tuple[int, ...]] = set()
    for pid, phrase in enumerate(lexicon.phrases):
        if not phrase.tokens:
            raise EmptyLexicon(f"phrase {pid} ({phrase.normalized!r}) has no tokens")
        if phrase.tokens in seen_seqs:
            raise ValueError(f"duplicate token sequence for phrase {phrase.normalized!r}")
        seen_seqs.add(phrase.tokens)
        node = 0
        for token in phrase.tokens:
            nxt = children[node].get(token)
            if nxt is None:
                nxt = len(children)
                children[node][token] = nxt
                children.append({})
                phrase_ids.append(-1)
                depths.append(depths[node] + 1)
            node = nxt
        phrase_ids[node] = pid

    child_tokens = []
    child_nodes = []
    for mapping in children:
        if mapping:
            toks = np.fromiter(sorted(mapping), dtype=np.int64, count=len(mapping))
            nodes = np.fromiter((mapping[int(t)] for t in toks), dtype=np.int64, count=len(toks))
        else:
            toks = _NO_CHILDREN
            nodes = _NO_CHILDREN
        child_tokens.append(toks)
        child_nodes.append(nodes)
    return PrefixTree(
        child_tokens=tuple(child_tokens),
        child_nodes=tuple(child_nodes),
        phrase_ids=tuple(phrase_ids),
        depths=tuple(depths),
        phrase_count=len(lexicon.phrases),
    )


def save_tree(tree: PrefixTree, path: str | Path) -> None:
    Path(path).write_text("\n".join(tree.dump_lines()) + "\n", encoding="utf-8")


def load_tree(path: str | Path) -> PrefixTree:
    """Parse a tree dump, validating indices, depths, and tree shape."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read tree {path}: {exc}") from exc

    rows: list[tuple[int, int, list[tuple[int, int]]]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 3:
            raise IoFailure(f"line {line_no}: expected '<ix> <terminal> <phrase-id>'")
        try:
            ix = int(parts[0])
            terminal = int(parts[1])
            pid = -1 if parts[2] == "-" else int(parts[2])
            pairs = []
            for pair in parts[3:]:
                tok_text, _, child_text = pair.partition(":")
                pairs.append((int(tok_text), int(child_text)))
        except ValueError as exc:
            raise IoFailure(f"line {line_no}: {exc}") from exc
        if (terminal == 1) != (pid >= 0):
            raise IoFailure(f"line {line_no}: terminal flag and phrase id disagree")
        if ix != len(rows):
            raise IoFailure(f"line {line_no}: node indices must be dense and in order")
        rows.append((ix, pid, pairs))

    if not rows:
        raise IoFailure("tree dump is empty")

    n = len(rows)
    parents = [0] * n
    child_tokens = []
    child_nodes = []
    phrase_ids = []
    for ix, pid, pairs in rows:
        tokens = [t for t, _ in pairs]
        if tokens != sorted(set(tokens)):
            raise IoFailure(f"node {ix}: children must be sorted with unique token ids")
        for tok, child in pairs:
            if not 0 < child < n:
                raise IoFailure(f"node {ix}: child index {child} out of range")
            parents[child] += 1
        child_tokens.append(np.array(tokens, dtype=np.int64))
        child_nodes.append(np.array([c for _, c in pairs], dtype=np.int64))
        phrase_ids.append(pid)
    if any(count != 1 for count in parents[1:]) or parents[0] != 0:
        raise IoFailure("node table is not a tree rooted at node 0")

    depths = [0] * n
    stack = [0]
    visited = 1
    while stack:
        node = stack.pop()
        for child in child_nodes[node]:
            depths[int(child)] = depths[node] + 1
            stack.append(int(child))
            visited += 1
    if visited != n:
        raise IoFailure("node table contains unreachable nodes")

    terminal_ids = [p for p in phrase_ids if p >= 0]
    if len(set(terminal_ids)) != len(terminal_ids):
        raise IoFailure("duplicate phrase ids on terminal nodes")
    return PrefixTree(
        child_tokens=tuple(child_tokens),
        child_nodes=tuple(child_nodes),
        phrase_ids=tuple(phrase_ids),
        depths=tuple(depths),
        phrase_count=max(terminal_ids) + 1 if terminal_ids else 0,
    )
