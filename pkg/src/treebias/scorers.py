"""Scorer seam: token context in, next-token log-probability vector out.

The decoder only ever sees this contract, so it can bias anything from the
bundled deterministic n-gram toy to a real ASR model living behind the
line-oriented wire protocol (see :class:`WireScorer`).
"""

from __future__ import annotations

import math
import shlex
import socket
import subprocess
import sys
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import EmptyCorpus, HandshakeMismatch, ScorerFailure

PROTOCOL_VERSION = 1

# Peer vectors are renormalized after this sanity bound; anything worse is
# a protocol failure, not a rounding artifact.
_WIRE_SUM_TOLERANCE = 1e-4


@runtime_checkable
class Scorer(Protocol):
    """Anything that maps a token context to next-token log-probabilities."""

    @property
    def vocab_size(self) -> int: ...

    def score_next(self, context: Sequence[int]) -> np.ndarray: ...


@dataclass(eq=False)
class ToyScorer:
    """Deterministic add-alpha n-gram scorer with backoff to shorter contexts.

    ``counts`` maps context tuples (length 0..order-1) to integer count
    vectors over the vocabulary. Smoothing keeps every token strictly
    positive, so constrained decoding always has mass to renormalize.
    ``context_prefix`` is prepended to every incoming context before the
    n-gram lookup, the same way an external peer applies its own task
    prefix; it only matters near the start of a sequence.
    """

    order: int
    vocab_size: int
    alpha: float
    counts: dict[tuple[int, ...], np.ndarray]
    context_prefix: tuple[int, ...] = ()
    _row_cache: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def uniform(cls, vocab_size: int) -> "ToyScorer":
        """Scorer assigning log(1/V) everywhere (the alpha-to-infinity limit)."""
        return cls(order=1, vocab_size=vocab_size, alpha=1.0,
                   counts={(): np.zeros(vocab_size, dtype=np.int64)})

    def score_next(self, context: Sequence[int]) -> np.ndarray:
        full = (*self.context_prefix, *(int(t) for t in context))
        for width in range(self.order - 1, -1, -1):
            key = full[len(full) - width :] if width <= len(full) else None
            if key is None:
                continue
            row = self.counts.get(key)
            if row is not None:
                cached = self._row_cache.get(key)
                if cached is None:
                    probs = (row + self.alpha) / (row.sum() + self.alpha * self.vocab_size)
                    cached = np.log(probs)
                    self._row_cache[key] = cached
                return cached
        raise EmptyCorpus("scorer has no context rows; was it built from an empty corpus?")


def build_toy_scorer(
    corpus: Sequence[Sequence[int]],
    order: int,
    alpha: float,
    vocab_size: int,
    context_prefix: Sequence[int] = (),
) -> ToyScorer:
    """Count n-gram transitions of every width up to ``order`` over the corpus."""
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2, or 3, got {order}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    counts: dict[tuple[int, ...], np.ndarray] = {}
    total = 0
    for seq in corpus:
        seq = [int(t) for t in seq]
        for token in seq:
            if not 0 <= token < vocab_size:
                raise ValueError(f"token {token} outside vocabulary of size {vocab_size}")
        for i, token in enumerate(seq):
            total += 1
            for width in range(min(order - 1, i) + 1):
                key = tuple(seq[i - width : i])
                row = counts.get(key)
                if row is None:
                    row = np.zeros(vocab_size, dtype=np.int64)
                    counts[key] = row
                row[token] += 1
    if total == 0:
        raise EmptyCorpus("toy scorer corpus contains no tokens")
    return ToyScorer(order=order, vocab_size=vocab_size, alpha=alpha, counts=counts,
                     context_prefix=tuple(int(t) for t in context_prefix))


@dataclass(eq=False)
class MixtureScorer:
    """Probability-space mixture of scorers sharing one vocabulary."""

    components: Sequence[tuple[float, Scorer]]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixture needs at least one component")
        sizes = {s.vocab_size for _, s in self.components}
        if len(sizes) != 1:
            raise ValueError(f"components disagree on vocabulary size: {sorted(sizes)}")
        weight = sum(w for w, _ in self.components)
        if not math.isclose(weight, 1.0, abs_tol=1e-9):
            raise ValueError(f"mixture weights must sum to 1, got {weight}")

    @property
    def vocab_size(self) -> int:
        return self.components[0][1].vocab_size

    def score_next(self, context: Sequence[int]) -> np.ndarray:
        mixed = np.zeros(self.vocab_size)
        for weight, scorer in self.components:
            mixed += weight * np.exp(scorer.score_next(context))
        return np.log(mixed)


@dataclass(frozen=True)
class SessionInfo:
    """Handshake facts about an external scorer session."""

    vocab_size: int
    protocol_version: int
    supports_reset: bool = True
    supports_batch: bool = False


class WireScorer:
    """Client side of the line-oriented scorer protocol.

    Session flow (UTF-8 lines over a byte stream):

    1. peer -> client  ``HELLO <protocol-version> <vocab-size>``
    2. client -> peer  ``SCORE <utterance-id> <n> <tok_1> ... <tok_n>``
    3. peer -> client  ``LOGP <utterance-id> <vocab-size floats>``
    4. ``RESET <utterance-id>`` clears peer state (no reply); ``BYE`` ends.

    Any malformed, truncated, or non-finite reply kills the session with
    ScorerFailure; a dead session refuses further requests.
    """

    def __init__(self, reader, writer, expected_vocab_size: int | None = None, closer=None):
        self._reader = reader
        self._writer = writer
        self._closer = closer
        self._dead = False
        self.info = self._handshake(expected_vocab_size)

    @property
    def vocab_size(self) -> int:
        return self.info.vocab_size

    def _handshake(self, expected: int | None) -> SessionInfo:
        line = self._read_line()
        parts = line.split()
        if len(parts) != 3 or parts[0] != "HELLO":
            self._kill()
            raise ScorerFailure(f"bad handshake line: {line!r}")
        try:
            version, vocab_size = int(parts[1]), int(parts[2])
        except ValueError:
            self._kill()
            raise ScorerFailure(f"bad handshake numbers: {line!r}") from None
        if version != PROTOCOL_VERSION:
            self._kill()
            raise ScorerFailure(f"unsupported protocol version {version}")
        if vocab_size <= 0:
            self._kill()
            raise ScorerFailure(f"peer declared non-positive vocab size {vocab_size}")
        if expected is not None and vocab_size != expected:
            self._kill()
            raise HandshakeMismatch(
                f"peer vocabulary size {vocab_size} != expected {expected}"
            )
        return SessionInfo(vocab_size=vocab_size, protocol_version=version)

    def scorer_for(self, utterance_id: str) -> "_UtteranceScorer":
        return _UtteranceScorer(self, utterance_id)

    def score_next(self, utterance_id: str, context: Sequence[int]) -> np.ndarray:
        if self._dead:
            raise ScorerFailure("session already failed or closed")
        tokens = " ".join(str(int(t)) for t in context)
        n = len(context)
        self._write_line(f"SCORE {utterance_id} {n} {tokens}".rstrip())
        line = self._read_line()
        parts = line.split()
        if parts and parts[0] == "ERROR":
            self._kill()
            raise ScorerFailure(f"peer error: {line[6:].strip() or 'unspecified'}")
        if len(parts) < 2 or parts[0] != "LOGP":
            self._kill()
            raise ScorerFailure(f"expected LOGP reply, got {line[:80]!r}")
        if parts[1] != utterance_id:
            self._kill()
            raise ScorerFailure(f"reply for {parts[1]!r}, expected {utterance_id!r}")
        values = parts[2:]
        if len(values) != self.info.vocab_size:
            self._kill()
            raise ScorerFailure(
                f"vector length {len(values)} != vocab size {self.info.vocab_size}"
            )
        try:
            logp = np.array([float(v) for v in values])
        except ValueError:
            self._kill()
            raise ScorerFailure("unparseable float in LOGP vector") from None
        if not np.all(np.isfinite(logp)):
            self._kill()
            raise ScorerFailure("non-finite entry in LOGP vector")
        probs = np.exp(logp)
        total = probs.sum()
        if abs(total - 1.0) > _WIRE_SUM_TOLERANCE:
            self._kill()
            raise ScorerFailure(f"LOGP vector sums to {total:.6f}, not 1")
        return logp - math.log(total)

    def reset(self, utterance_id: str) -> None:
        if not self._dead:
            self._write_line(f"RESET {utterance_id}")

    def close(self) -> None:
        if not self._dead:
            try:
                self._write_line("BYE")
            except ScorerFailure:
                pass
        self._kill()

    def __enter__(self) -> "WireScorer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _read_line(self) -> str:
        try:
            line = self._reader.readline()
        except OSError as exc:
            self._kill()
            raise ScorerFailure(f"read failed: {exc}") from exc
        if not line:
            self._kill()
            raise ScorerFailure("peer closed the stream")
        return line.rstrip("\n")

    def _write_line(self, line: str) -> None:
        try:
            self._writer.write(line + "\n")
            self._writer.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            self._kill()
            raise ScorerFailure(f"write failed: {exc}") from exc

    def _kill(self) -> None:
        self._dead = True
        if self._closer is not None:
            try:
                self._closer()
            except Exception:
                pass
            self._closer = None


class _UtteranceScorer:
    """A WireScorer bound to one utterance id; satisfies the Scorer contract."""

    def __init__(self, session: WireScorer, utterance_id: str):
        self._session = session
        self._utterance_id = utterance_id

    @property
    def vocab_size(self) -> int:
        return self._session.vocab_size

    def score_next(self, context: Sequence[int]) -> np.ndarray:
        return self._session.score_next(self._utterance_id, context)


def connect_subprocess(command: str | Sequence[str],
                       expected_vocab_size: int | None = None) -> WireScorer:
    """Launch a peer process and speak the protocol over its stdio."""
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=sys.stderr,
            text=True,
            encoding="utf-8",
        )
    except OSError as exc:
        raise ScorerFailure(f"cannot launch scorer {argv[0]!r}: {exc}") from exc

    def close() -> None:
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()

    return WireScorer(proc.stdout, proc.stdin, expected_vocab_size, closer=close)


def connect_tcp(host: str, port: int, expected_vocab_size: int | None = None,
                timeout: float = 60.0) -> WireScorer:
    """Connect to a peer listening on a local socket."""
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ScorerFailure(f"cannot connect to {host}:{port}: {exc}") from exc
    stream = sock.makefile("rw", encoding="utf-8", newline="\n")
    return WireScorer(stream, stream, expected_vocab_size, closer=sock.close)


def external_scorer_connect(endpoint: str,
                            expected_vocab_size: int | None = None) -> WireScorer:
    """Open a session from an endpoint spec: ``cmd:<command>`` or ``tcp:<host>:<port>``."""
    kind, _, rest = endpoint.partition(":")
    if kind == "cmd" and rest:
        return connect_subprocess(rest, expected_vocab_size)
    if kind == "tcp" and rest:
        host, _, port_text = rest.rpartition(":")
        try:
            port = int(port_text)
        except ValueError:
            raise ScorerFailure(f"bad tcp endpoint {endpoint!r}") from None
        if not host:
            raise ScorerFailure(f"bad tcp endpoint {endpoint!r}")
        return connect_tcp(host, port, expected_vocab_size)
    raise ScorerFailure(f"unrecognized scorer endpoint {endpoint!r}")
