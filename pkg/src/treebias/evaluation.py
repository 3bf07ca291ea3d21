"""Transcript scoring: WER breakdown, gazetteer entities, keyword timing.

WER is computed from a minimum-edit word alignment after the same
normalization the lexicon uses, so reference and hypothesis casing or
punctuation differences never manufacture errors. Entity extraction is
gazetteer lookup supplemented by fuzzy matching; keyword hits carry the
start time of the transcript segment that contains them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

from .errors import EmptyReference, IdMismatch, IoFailure
from .lexicon import clean_phrase

ENTITY_LABELS = ("addressee", "internal", "external", "location")


@dataclass(frozen=True)
class WerBreakdown:
    """Word error rate with its substitution/deletion/insertion counts."""

    substitutions: int
    deletions: int
    insertions: int
    reference_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words


@dataclass(frozen=True)
class EntityHit:
    surface: str
    canonical: str
    span: tuple[int, int]
    match_distance: int
    label: str


@dataclass(frozen=True)
class GazetteerEntry:
    phrase: str
    label: str


@dataclass(frozen=True)
class KeywordHit:
    keyword: str
    segment_index: int
    timestamp: float


@dataclass(frozen=True)
class TranscriptSegment:
    start: float
    end: float
    text: str

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad segment bounds [{self.start}, {self.end})")


@dataclass(frozen=True)
class Trigger:
    trigger_id: str
    utterance_id: str
    time: float
    keyword: str


def normalize_for_wer(text: str) -> list[str]:
    """Lowercase, strip non-whitelist characters, split into words."""
    return clean_phrase(text).split()


def _word_alignment(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, int, int]:
    """Minimum-edit alignment counts (S, D, I) with unit costs.

    Among minimal alignments the traceback prefers fewer substitutions,
    then fewer insertions, by minimizing the tuple (edits, subs, ins).
    """
    n, m = len(ref), len(hyp)
    prev = [(j, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0)] + [None] * m
        ref_word = ref[i - 1]
        for j in range(1, m + 1):
            if ref_word == hyp[j - 1]:
                best = prev[j - 1]
            else:
                e, s, ins = prev[j - 1]
                best = (e + 1, s + 1, ins)
            e, s, ins = prev[j]
            if (e + 1, s, ins) < best:
                best = (e + 1, s, ins)
            e, s, ins = cur[j - 1]
            if (e + 1, s, ins + 1) < best:
                best = (e + 1, s, ins + 1)
            cur[j] = best
        prev = cur
    edits, subs, ins = prev[m]
    return subs, edits - subs - ins, ins


def wer_from_words(ref_words: Sequence[str], hyp_words: Sequence[str]) -> WerBreakdown:
    if not ref_words:
        raise EmptyReference("reference has no words")
    s, d, i = _word_alignment(list(ref_words), list(hyp_words))
    return WerBreakdown(substitutions=s, deletions=d, insertions=i,
                        reference_words=len(ref_words))


def wer(reference: str, hypothesis: str) -> WerBreakdown:
    """WER = (S + D + I) / N over normalized words."""
    ref_words = normalize_for_wer(reference)
    if not ref_words:
        raise EmptyReference(f"reference normalizes to no words: {reference!r}")
    return wer_from_words(ref_words, normalize_for_wer(hypothesis))


def corpus_wer(pairs: Iterable[tuple[str, str]]) -> WerBreakdown:
    """Pooled WER over (reference, hypothesis) pairs: counts summed, one rate."""
    s = d = i = n = 0
    for reference, hypothesis in pairs:
        one = wer(reference, hypothesis)
        s += one.substitutions
        d += one.deletions
        i += one.insertions
        n += one.reference_words
    if n == 0:
        raise EmptyReference("corpus contains no reference words")
    return WerBreakdown(substitutions=s, deletions=d, insertions=i, reference_words=n)


def edit_distance(a: str, b: str) -> int:
    """Character-level Levenshtein distance (unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def default_fuzzy_threshold(phrase: str) -> int:
    """One edit per five characters of phrase length, capped at three."""
    return min(3, len(phrase) // 5)


def extract_entities(
    transcript: str,
    gazetteer: Sequence[GazetteerEntry],
    fuzzy_threshold: int | None = None,
) -> list[EntityHit]:
    """Scan word n-grams of the transcript against the gazetteer.

    An n-gram hits an entry when their character edit distance is within
    the threshold (``None`` selects a per-phrase default). Overlapping
    candidates are resolved by lower distance, then longer phrase, then
    earlier span; the returned hits never overlap.
    """
    words = normalize_for_wer(transcript)
    if not words or not gazetteer:
        return []
    max_words = max(len(e.phrase.split()) for e in gazetteer)
    candidates: list[EntityHit] = []
    for n in range(1, max_words + 1):
        for start in range(0, len(words) - n + 1):
            ngram = " ".join(words[start : start + n])
            for entry in gazetteer:
                threshold = (fuzzy_threshold if fuzzy_threshold is not None
                             else default_fuzzy_threshold(entry.phrase))
                if abs(len(ngram) - len(entry.phrase)) > threshold:
                    continue
                distance = edit_distance(ngram, entry.phrase)
                if distance <= threshold:
                    candidates.append(
                        EntityHit(surface=ngram, canonical=entry.phrase,
                                  span=(start, start + n), match_distance=distance,
                                  label=entry.label)
                    )
    candidates.sort(key=lambda h: (h.match_distance, -len(h.canonical), h.span))
    chosen: list[EntityHit] = []
    taken: set[int] = set()
    for hit in candidates:
        span = range(*hit.span)
        if any(ix in taken for ix in span):
            continue
        taken.update(span)
        chosen.append(hit)
    chosen.sort(key=lambda h: h.span)
    return chosen


def entity_accuracy(
    predicted: Mapping[str, Iterable[EntityHit]],
    gold: Mapping[str, Iterable[tuple[str, str]]],
) -> float:
    """Per-utterance exact-set-match accuracy over (canonical, label) sets."""
    if set(predicted) != set(gold):
        offending = sorted(set(predicted) ^ set(gold))
        raise IdMismatch(f"utterance ids differ: {offending}", offending)
    if not gold:
        return 1.0
    matches = 0
    for utt_id, gold_entities in gold.items():
        predicted_set = {(h.canonical, h.label) for h in predicted[utt_id]}
        if predicted_set == set(gold_entities):
            matches += 1
    return matches / len(gold)


def extract_keywords(
    segments: Sequence[TranscriptSegment],
    keywords: Sequence[str],
) -> list[KeywordHit]:
    """First occurrence of each keyword, stamped with its segment's start time.

    Matching is exact on normalized words (the segment's temporal
    resolution is the finest timing available, so no sub-segment offsets).
    """
    segment_words = [normalize_for_wer(seg.text) for seg in segments]
    hits: list[KeywordHit] = []
    for keyword in keywords:
        needle = normalize_for_wer(keyword)
        if not needle:
            continue
        for ix, words in enumerate(segment_words):
            if _contains(words, needle):
                hits.append(KeywordHit(keyword=" ".join(needle), segment_index=ix,
                                       timestamp=segments[ix].start))
                break
    return hits


def _contains(words: Sequence[str], needle: Sequence[str]) -> bool:
    span = len(needle)
    return any(words[i : i + span] == list(needle)
               for i in range(len(words) - span + 1))


def response_time_mse(
    predicted: Mapping[str, tuple[float, float]],
    gold: Mapping[str, tuple[float, float]],
    miss_penalty: float = 1.0,
) -> float:
    """Mean squared error of response times (hit time minus trigger time).

    Triggers absent from ``predicted`` are missed detections and
    contribute ``miss_penalty`` squared. Predicted triggers unknown to
    gold are an alignment error.
    """
    unknown = sorted(set(predicted) - set(gold))
    if unknown:
        raise IdMismatch(f"predicted triggers not in gold: {unknown}", unknown)
    if not gold:
        return 0.0
    total = 0.0
    for trigger_id, (gold_trigger, gold_hit) in gold.items():
        if trigger_id in predicted:
            pred_trigger, pred_hit = predicted[trigger_id]
            residual = (pred_hit - pred_trigger) - (gold_hit - gold_trigger)
        else:
            residual = miss_penalty
        total += residual * residual
    return total / len(gold)


def load_corpus_file(source: str | Path | TextIO) -> dict[str, str]:
    """Read ``<utterance-id><TAB><text>`` lines, preserving order."""
    lines = _read_lines(source, "corpus")
    out: dict[str, str] = {}
    for line_no, row in lines:
        utt_id, _, text = row.partition("\t")
        if not utt_id:
            raise IoFailure(f"line {line_no}: missing utterance id")
        if utt_id in out:
            raise IoFailure(f"line {line_no}: duplicate utterance id {utt_id!r}")
        out[utt_id] = text
    return out


def load_segments_file(source: str | Path | TextIO) -> dict[str, list[TranscriptSegment]]:
    """Read ``<utterance-id><TAB><start><TAB><end><TAB><text>`` lines.

    Segments of each utterance must be sorted and non-overlapping.
    """
    lines = _read_lines(source, "segments")
    out: dict[str, list[TranscriptSegment]] = {}
    for line_no, row in lines:
        parts = row.split("\t")
        if len(parts) != 4:
            raise IoFailure(f"line {line_no}: expected 4 tab-separated fields")
        utt_id, start_text, end_text, text = parts
        try:
            segment = TranscriptSegment(start=float(start_text), end=float(end_text), text=text)
        except ValueError as exc:
            raise IoFailure(f"line {line_no}: {exc}") from exc
        bucket = out.setdefault(utt_id, [])
        if bucket and segment.start < bucket[-1].end:
            raise IoFailure(f"line {line_no}: segments overlap or are unsorted")
        bucket.append(segment)
    return out


def load_gazetteer_file(source: str | Path | TextIO) -> list[GazetteerEntry]:
    """Read ``<phrase><TAB><label>`` lines; phrases are normalized on load."""
    lines = _read_lines(source, "gazetteer")
    entries: list[GazetteerEntry] = []
    for line_no, row in lines:
        phrase, _, label = row.partition("\t")
        if label not in ENTITY_LABELS:
            raise IoFailure(f"line {line_no}: unknown label {label!r}")
        normalized = clean_phrase(phrase)
        if not normalized:
            raise IoFailure(f"line {line_no}: phrase normalizes to nothing")
        entries.append(GazetteerEntry(phrase=normalized, label=label))
    return entries


def load_triggers_file(source: str | Path | TextIO) -> list[Trigger]:
    """Read ``<trigger-id><TAB><utterance-id><TAB><time><TAB><keyword>`` lines."""
    lines = _read_lines(source, "triggers")
    triggers: list[Trigger] = []
    seen: set[str] = set()
    for line_no, row in lines:
        parts = row.split("\t")
        if len(parts) != 4:
            raise IoFailure(f"line {line_no}: expected 4 tab-separated fields")
        trigger_id, utt_id, time_text, keyword = parts
        if trigger_id in seen:
            raise IoFailure(f"line {line_no}: duplicate trigger id {trigger_id!r}")
        seen.add(trigger_id)
        try:
            time = float(time_text)
        except ValueError as exc:
            raise IoFailure(f"line {line_no}: bad time {time_text!r}") from exc
        triggers.append(Trigger(trigger_id=trigger_id, utterance_id=utt_id,
                                time=time, keyword=keyword))
    return triggers


def _read_lines(source: str | Path | TextIO, what: str) -> list[tuple[int, str]]:
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read {what} file {source}: {exc}") from exc
        raw_lines = text.splitlines()
    else:
        raw_lines = [line.rstrip("\n") for line in source]
    return [
        (line_no, row)
        for line_no, row in enumerate(raw_lines, start=1)
        if row.strip() and not row.startswith("#")
    ]
