"""Exception types shared across the toolkit."""

from __future__ import annotations


class TreebiasError(Exception):
    """Base class for all treebias errors."""


class IoFailure(TreebiasError):
    """A source file or stream could not be read."""


class UntokenizablePhrase(TreebiasError):
    """A phrase contains a character no vocabulary token covers."""


class EmptyLexicon(TreebiasError):
    """A prefix tree was requested for a lexicon with no phrases."""


class InvalidCursor(TreebiasError):
    """A tree cursor does not point at a valid node of its tree."""


class MalformedDistribution(TreebiasError):
    """A probability vector has negative entries or does not sum to 1."""


class ScorerFailure(TreebiasError):
    """The scorer peer misbehaved: protocol error, dead peer, bad vector."""

    def __init__(self, message: str, *, step: int | None = None):
        super().__init__(message)
        self.step = step


class HandshakeMismatch(TreebiasError):
    """Peer and client disagree on vocabulary size at handshake."""


class EmptyCorpus(TreebiasError):
    """A toy scorer was requested for a corpus with no tokens."""


class EmptyReference(TreebiasError):
    """WER is undefined for a reference that normalizes to zero words."""


class IdMismatch(TreebiasError):
    """Evaluation inputs do not share the same utterance or trigger ids."""

    def __init__(self, message: str, offending: list[str] | None = None):
        super().__init__(message)
        self.offending = offending or []
