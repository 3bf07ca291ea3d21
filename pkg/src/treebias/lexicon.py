"""Biasing-vocabulary ingestion: cleaning, tokenization, lexicon loading.

A biasing list is a plain text file of domain phrases, one per line.
Each phrase is normalized, deduplicated, and segmented into subword
token ids against a declared :class:`Vocabulary`, producing a
:class:`BiasingLexicon` that the prefix tree is built from.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

from .errors import IoFailure, UntokenizablePhrase

BOS_SURFACE = "<s>"
EOS_SURFACE = "</s>"
SEP_SURFACE = "<sp>"

_KEEP_CHARS = frozenset("abcdefghijklmnopqrstuvwxyz0123456789'")


@dataclass(frozen=True)
class Vocabulary:
    """Subword inventory: dense token ids 0..V-1 plus three special ids.

    ``sep_id`` is the word-separator token; it renders as a single space
    when detokenizing, so multi-word phrases round-trip exactly.
    """

    surfaces: tuple[str, ...]
    bos_id: int
    eos_id: int
    sep_id: int
    _surface_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.surfaces:
            raise ValueError("vocabulary must contain at least one token")
        lookup: dict[str, int] = {}
        for token_id, surface in enumerate(self.surfaces):
            if not surface:
                raise ValueError(f"token {token_id} has an empty surface form")
            if surface in lookup:
                raise ValueError(f"duplicate surface form {surface!r}")
            lookup[surface] = token_id
        for name, special in (("bos", self.bos_id), ("eos", self.eos_id), ("sep", self.sep_id)):
            if not 0 <= special < len(self.surfaces):
                raise ValueError(f"{name} id {special} outside token range")
        object.__setattr__(self, "_surface_to_id", lookup)

    @property
    def size(self) -> int:
        return len(self.surfaces)

    def surface(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def id_of(self, surface: str) -> int | None:
        return self._surface_to_id.get(surface)

    def is_special(self, token_id: int) -> bool:
        return token_id in (self.bos_id, self.eos_id, self.sep_id)

    def detokenize(self, token_ids: Iterable[int]) -> str:
        """Render token ids as text; sep becomes a space, bos/eos vanish."""
        parts: list[str] = []
        for token_id in token_ids:
            if token_id == self.sep_id:
                parts.append(" ")
            elif token_id in (self.bos_id, self.eos_id):
                continue
            else:
                parts.append(self.surfaces[token_id])
        return "".join(parts)


@dataclass(frozen=True)
class LexiconPhrase:
    raw: str
    normalized: str
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class BiasingLexicon:
    """Cleaned, deduplicated domain phrases with their tokenizations.

    ``dropped`` counts input lines that cleaned to nothing; ``duplicates``
    counts lines merged because their normalized form was already present.
    """

    phrases: tuple[LexiconPhrase, ...]
    source_tag: str = ""
    dropped: int = 0
    duplicates: int = 0

    def __len__(self) -> int:
        return len(self.phrases)

    def normalized_set(self) -> set[str]:
        return {p.normalized for p in self.phrases}

    def to_tsv_lines(self) -> list[str]:
        return [
            "\t".join((p.raw, p.normalized, " ".join(str(t) for t in p.tokens)))
            for p in self.phrases
        ]


def clean_phrase(raw: str) -> str:
    """Normalize a raw phrase: lowercase, whitelist characters, collapse spaces.

    Characters outside [a-z0-9' ] are replaced by a space so that
    punctuation acts as a word boundary. An empty result signals that the
    line should be dropped.
    """
    lowered = raw.lower()
    kept = [ch if ch in _KEEP_CHARS else " " for ch in lowered]
    return " ".join("".join(kept).split())


def tokenize_phrase(phrase: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-match segmentation of a normalized phrase.

    Words are segmented independently left-to-right, always taking the
    longest vocabulary surface that matches; word boundaries become the
    separator token. Raises UntokenizablePhrase if a character has no
    covering token.
    """
    if not phrase:
        return []
    ids: list[int] = []
    max_len = max(len(s) for s in vocab.surfaces)
    lookup = vocab._surface_to_id
    specials = {vocab.bos_id, vocab.eos_id, vocab.sep_id}
    for word_ix, word in enumerate(phrase.split(" ")):
        if word_ix:
            ids.append(vocab.sep_id)
        pos = 0
        while pos < len(word):
            match_id = None
            for length in range(min(max_len, len(word) - pos), 0, -1):
                candidate = lookup.get(word[pos : pos + length])
                if candidate is not None and candidate not in specials:
                    match_id = candidate
                    pos += length
                    break
            if match_id is None:
                raise UntokenizablePhrase(
                    f"no token covers {word[pos]!r} at position {pos} of {word!r}"
                )
            ids.append(match_id)
    return ids


def load_biasing_list(
    source: str | Path | TextIO,
    vocab: Vocabulary,
    source_tag: str = "",
) -> BiasingLexicon:
    """Read a biasing-list stream: one phrase per line, ``#`` lines are comments.

    Lines that clean to nothing are counted in ``dropped``; lines whose
    normalized form was already seen are counted in ``duplicates``.
    Blank lines are skipped silently.
    """
    if isinstance(source, (str, Path)):
        try:
            with open(source, "r", encoding="utf-8") as handle:
                return load_biasing_list(handle, vocab, source_tag or str(source))
        except OSError as exc:
            raise IoFailure(f"cannot read biasing list {source}: {exc}") from exc

    phrases: list[LexiconPhrase] = []
    seen: dict[str, int] = {}
    dropped = 0
    duplicates = 0
    for line_no, line in enumerate(source, start=1):
        raw = line.rstrip("\n")
        if not raw.strip():
            continue
        if raw.startswith("#"):
            continue
        normalized = clean_phrase(raw)
        if not normalized:
            dropped += 1
            continue
        if normalized in seen:
            duplicates += 1
            continue
        try:
            tokens = tokenize_phrase(normalized, vocab)
        except UntokenizablePhrase as exc:
            raise UntokenizablePhrase(f"line {line_no}: {exc}") from exc
        seen[normalized] = len(phrases)
        phrases.append(LexiconPhrase(raw=raw, normalized=normalized, tokens=tuple(tokens)))
    return BiasingLexicon(
        phrases=tuple(phrases),
        source_tag=source_tag,
        dropped=dropped,
        duplicates=duplicates,
    )


def char_vocabulary(chars: str = "abcdefghijklmnopqrstuvwxyz0123456789'") -> Vocabulary:
    """Single-character vocabulary over ``chars``; specials at ids 0..2."""
    surfaces = [BOS_SURFACE, EOS_SURFACE, SEP_SURFACE] + list(dict.fromkeys(chars))
    return Vocabulary(surfaces=tuple(surfaces), bos_id=0, eos_id=1, sep_id=2)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """Write a vocabulary file: a special-id header then ``<id>\\t<surface>`` lines."""
    lines = [f"#special bos={vocab.bos_id} eos={vocab.eos_id} sep={vocab.sep_id}"]
    lines += [f"{i}\t{s}" for i, s in enumerate(vocab.surfaces)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocabulary(source: str | Path | TextIO) -> Vocabulary:
    """Parse a vocabulary file written by :func:`save_vocabulary`."""
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read vocabulary {source}: {exc}") from exc
        return load_vocabulary(io.StringIO(text))

    header = source.readline().strip()
    if not header.startswith("#special "):
        raise IoFailure("vocabulary file missing '#special' header line")
    specials: dict[str, int] = {}
    for part in header[len("#special ") :].split():
        key, _, value = part.partition("=")
        try:
            specials[key] = int(value)
        except ValueError as exc:
            raise IoFailure(f"bad special-id declaration {part!r}") from exc
    missing = {"bos", "eos", "sep"} - specials.keys()
    if missing:
        raise IoFailure(f"header missing special ids: {sorted(missing)}")

    entries: list[tuple[int, str]] = []
    for line_no, line in enumerate(source, start=2):
        row = line.rstrip("\n")
        if not row:
            continue
        token_id_text, _, surface = row.partition("\t")
        try:
            token_id = int(token_id_text)
        except ValueError as exc:
            raise IoFailure(f"line {line_no}: bad token id {token_id_text!r}") from exc
        if not surface:
            raise IoFailure(f"line {line_no}: empty surface form")
        entries.append((token_id, surface))
    entries.sort()
    if [i for i, _ in entries] != list(range(len(entries))):
        raise IoFailure("token ids are not dense 0..V-1")
    try:
        return Vocabulary(
            surfaces=tuple(s for _, s in entries),
            bos_id=specials["bos"],
            eos_id=specials["eos"],
            sep_id=specials["sep"],
        )
    except ValueError as exc:
        raise IoFailure(str(exc)) from exc
