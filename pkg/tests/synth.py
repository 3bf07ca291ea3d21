"""Synthetic desk-scale corpus for the acceptance experiments.

Construction: a 200-phrase lexicon of made-up domain words, 200 reference
utterances embedding those phrases plus ~10% out-of-lexicon filler words,
and a character-noised copy (10% substitutions) standing in for acoustic
evidence. Each utterance's scorer mixes two components built only from
noised data:

* a replay of that utterance's noised transcript, emitting a one-hot
  distribution per output position (the unique-context limit of an n-gram
  memorizing the noised copy) — the stand-in for acoustic evidence;
* a corpus-level trigram ToyScorer trained on all noised transcripts —
  the statistical prior that gives the correct character recoverable
  mass at noised positions.

Unbiased decoding therefore reproduces the noised text, while tree-biased
decoding can pull tokens back onto the clean lexicon wherever the prior
puts at least the threshold's worth of mass on the valid continuation.

Two structural choices keep the analogue well-behaved: filler words use a
character set disjoint from the lexicon's (so the tree never captures
them), and all lexicon words share one length (so a biased step that
follows a wrong tree branch substitutes a same-length word instead of
shifting the frame alignment of the rest of the utterance).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from treebias.decoding import DecodeConfig, DecodeTrace, decode_greedy
from treebias.lexicon import (
    BiasingLexicon,
    Vocabulary,
    char_vocabulary,
    load_biasing_list,
    tokenize_phrase,
)
from treebias.scorers import MixtureScorer, Scorer, build_toy_scorer
from treebias.trie import PrefixTree, build_tree

LEXICON_INITIALS = "bcdfgklmnprs"
LEXICON_BODY = "aeio"
LEXICON_CHARS = LEXICON_INITIALS + LEXICON_BODY
FILLER_INITIALS = "hjvw"
FILLER_BODY = "qxyz"
FILLER_CHARS = FILLER_INITIALS + FILLER_BODY
WORD_LENGTH = 8

NOISE_RATE = 0.10
FILLER_SLOT_RATE = 0.12
GAZETTEER_SIZE = 20
GAZETTEER_SLOT_RATE = 0.3
REPLAY_WEIGHT = 0.65
BACKGROUND_WEIGHT = 0.35
BACKGROUND_ALPHA = 0.2
NGRAM_ORDER = 3


class ReplayScorer:
    """Replays a fixed token sequence as one-hot per-position distributions."""

    def __init__(self, frames: Sequence[int], vocab_size: int):
        self._frames = list(frames)
        self.vocab_size = vocab_size

    def score_next(self, context: Sequence[int]) -> np.ndarray:
        probs = np.zeros(self.vocab_size)
        target = self._frames[min(len(context), len(self._frames) - 1)]
        probs[target] = 1.0
        with np.errstate(divide="ignore"):
            return np.log(probs)


@dataclass
class SyntheticCorpus:
    vocab: Vocabulary
    lexicon: BiasingLexicon
    tree: PrefixTree
    references: dict[str, str]
    noised: dict[str, str]
    scorers: dict[str, Scorer]
    out_of_lexicon_fraction: float
    filler_word_fraction: float
    phrases: list[str]


def _make_words(rng: np.random.Generator, count: int, initials: str, body: str,
                length: int, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < count:
        first = initials[len(words) % len(initials)]
        rest = "".join(body[int(rng.integers(0, len(body)))] for _ in range(length - 1))
        word = first + rest
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


_CONFUSION_POOLS = (LEXICON_INITIALS, LEXICON_BODY, FILLER_INITIALS, FILLER_BODY)


def _noise_text(rng: np.random.Generator, text: str, rate: float) -> str:
    # Substitutions stay within a character's confusability class
    # (word-initial consonants with each other, vowels with each other),
    # the way acoustically similar sounds confuse a real recognizer.
    out = []
    for ch in text:
        if ch != " " and rng.random() < rate:
            pool = next(p for p in _CONFUSION_POOLS if ch in p)
            alternatives = [c for c in pool if c != ch]
            out.append(alternatives[int(rng.integers(0, len(alternatives)))])
        else:
            out.append(ch)
    return "".join(out)


def build_corpus(
    seed: int = 20240817,
    n_phrases: int = 200,
    n_utterances: int = 200,
    noise_rate: float = NOISE_RATE,
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    vocab = char_vocabulary("".join(sorted(set(LEXICON_CHARS + FILLER_CHARS))))

    taken: set[str] = set()
    n_single = int(n_phrases * 0.7)
    n_double = n_phrases - n_single
    lexicon_words = _make_words(rng, n_single + n_double, LEXICON_INITIALS,
                                LEXICON_BODY, WORD_LENGTH, taken)
    singles = lexicon_words[:n_single]
    # Two-word phrases reuse single-word phrases as their second word, so
    # every word of every phrase is reachable from the tree root on its own.
    phrases = list(singles)
    phrases += [
        f"{first} {singles[int(rng.integers(0, n_single))]}"
        for first in lexicon_words[n_single:]
    ]
    filler_pool = _make_words(rng, 30, FILLER_INITIALS, FILLER_BODY, WORD_LENGTH, taken)

    lexicon = load_biasing_list(io.StringIO("\n".join(phrases) + "\n"), vocab,
                                source_tag="synthetic")
    assert len(lexicon) == n_phrases
    tree = build_tree(lexicon)

    references: dict[str, str] = {}
    noised: dict[str, str] = {}
    in_lexicon_tokens = 0
    total_tokens = 0
    filler_words_used = 0
    total_words = 0
    noised_sequences: list[list[int]] = []
    utterance_frames: dict[str, list[int]] = {}

    for u in range(n_utterances):
        utt_id = f"utt{u:04d}"
        n_slots = int(rng.integers(4, 7))
        slots: list[tuple[str, bool]] = []
        for _ in range(n_slots):
            if rng.random() < FILLER_SLOT_RATE:
                slots.append((filler_pool[int(rng.integers(0, len(filler_pool)))], False))
            elif rng.random() < GAZETTEER_SLOT_RATE:
                # Entity phrases recur across utterances, the way addressees
                # and locations recur in real traffic.
                slots.append((phrases[int(rng.integers(0, GAZETTEER_SIZE))], True))
            else:
                slots.append((phrases[int(rng.integers(0, n_phrases))], True))
        reference = " ".join(text for text, _ in slots)
        references[utt_id] = reference

        for text, in_lex in slots:
            words = text.split()
            total_words += len(words)
            if not in_lex:
                filler_words_used += len(words)
        # Out-of-lexicon accounting over the token stream the decoder sees:
        # tokens inside a phrase slot (including its internal separators)
        # count as in-lexicon; filler tokens, inter-slot separators, and
        # the trailing eos do not.
        for ix, (text, in_lex) in enumerate(slots):
            slot_tokens = len(tokenize_phrase(text, vocab))
            total_tokens += slot_tokens + (1 if ix else 0)
            if in_lex:
                in_lexicon_tokens += slot_tokens
        total_tokens += 1  # eos

        noisy = _noise_text(rng, reference, noise_rate)
        noised[utt_id] = noisy
        frames = tokenize_phrase(noisy, vocab) + [vocab.eos_id]
        noised_sequences.append([vocab.bos_id] + frames)
        utterance_frames[utt_id] = frames

    background = build_toy_scorer(noised_sequences, order=NGRAM_ORDER,
                                  alpha=BACKGROUND_ALPHA, vocab_size=vocab.size,
                                  context_prefix=(vocab.bos_id,))
    scorers: dict[str, Scorer] = {}
    for utt_id, frames in utterance_frames.items():
        replay = ReplayScorer(frames, vocab.size)
        scorers[utt_id] = MixtureScorer(
            [(REPLAY_WEIGHT, replay), (BACKGROUND_WEIGHT, background)]
        )

    return SyntheticCorpus(
        vocab=vocab,
        lexicon=lexicon,
        tree=tree,
        references=references,
        noised=noised,
        scorers=scorers,
        out_of_lexicon_fraction=1.0 - in_lexicon_tokens / total_tokens,
        filler_word_fraction=filler_words_used / total_words,
        phrases=phrases,
    )


def decode_corpus(
    corpus: SyntheticCorpus,
    biased: bool,
    threshold: float = 0.05,
    gen_prob: float = 0.8,
) -> tuple[dict[str, str], dict[str, DecodeTrace]]:
    """Greedy-decode every utterance; returns texts and traces by utterance id."""
    texts: dict[str, str] = {}
    traces: dict[str, DecodeTrace] = {}
    for utt_id, scorer in corpus.scorers.items():
        max_steps = len(tokenize_phrase(corpus.references[utt_id], corpus.vocab)) + 8
        config = DecodeConfig(threshold=threshold, gen_prob=gen_prob,
                              beam_width=1, max_steps=max_steps)
        tree = corpus.tree if biased else None
        hyp, trace = decode_greedy(scorer, tree, config, eos_id=corpus.vocab.eos_id)
        texts[utt_id] = corpus.vocab.detokenize(hyp.tokens).strip()
        traces[utt_id] = trace
    return texts, traces
