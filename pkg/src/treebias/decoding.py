"""Contextual-biasing decode step plus greedy and beam search drivers.

At every step the base model's next-token distribution is masked to the
tokens that extend the current prefix-tree path, renormalized into a
pointer distribution, and interpolated back with generation probability
``g`` — unless the model puts less than ``threshold`` mass on the valid
tokens, in which case the step falls back to the unmodified model
distribution. Fallbacks are recorded per step so the corpus-level
fallback rate can be measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MalformedDistribution, ScorerFailure
from .scorers import Scorer
from .trie import PrefixTree, TreeCursor

_SUM_TOLERANCE = 1e-6

FIXED = "fixed"
MASS_COUPLED = "mass-coupled"


@dataclass(frozen=True)
class DecodeConfig:
    """Knobs of the biasing step and the search around it.

    ``gen_mode`` selects the generation probability: ``"fixed"`` uses
    ``gen_prob``; ``"mass-coupled"`` uses the model's mass on the valid
    tokens as a confidence-weighted stand-in for a learned gate.
    ``epsilon`` floors probabilities only when taking logs; stored
    distributions are never altered.
    """

    threshold: float = 0.05
    gen_mode: str = FIXED
    gen_prob: float = 0.8
    beam_width: int = 4
    max_steps: int = 448
    epsilon: float = 1e-12

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.gen_mode not in (FIXED, MASS_COUPLED):
            raise ValueError(f"unknown gen_mode {self.gen_mode!r}")
        if not 0.0 <= self.gen_prob <= 1.0:
            raise ValueError(f"gen_prob must be in [0, 1], got {self.gen_prob}")
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class StepDistribution:
    """One biasing step: model, pointer, and interpolated distributions.

    ``fallback`` is True exactly when the final distribution is the model
    distribution: empty valid set, valid mass below threshold (or zero),
    or a zero generation probability.
    """

    model_dist: np.ndarray
    pointer_dist: np.ndarray
    final_dist: np.ndarray
    fallback: bool
    valid_mass: float


@dataclass(frozen=True)
class StepRecord:
    step: int
    token: int
    fallback: bool
    valid_mass: float
    completed_phrase: int | None


@dataclass(frozen=True)
class DecodeTrace:
    """Per-step record of one hypothesis; feeds fallback-rate measurement."""

    records: tuple[StepRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def dump_lines(self) -> list[str]:
        return [
            f"{r.step} {r.token} {1 if r.fallback else 0} {r.valid_mass:.6f} "
            f"{r.completed_phrase if r.completed_phrase is not None else '-'}"
            for r in self.records
        ]


def parse_trace(lines: Iterable[str]) -> DecodeTrace:
    records = []
    for line in lines:
        if not line.strip():
            continue
        step, token, fb, mass, completed = line.split()
        records.append(
            StepRecord(
                step=int(step),
                token=int(token),
                fallback=fb == "1",
                valid_mass=float(mass),
                completed_phrase=None if completed == "-" else int(completed),
            )
        )
    return DecodeTrace(records=tuple(records))


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_score: float
    cursor: TreeCursor | None
    finished: bool

    def __len__(self) -> int:
        return len(self.tokens)


def _validated(model_dist) -> np.ndarray:
    p = np.asarray(model_dist, dtype=float)
    if p.ndim != 1:
        raise MalformedDistribution(f"expected a 1-d vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise MalformedDistribution("distribution contains NaN or infinity")
    if np.any(p < 0):
        raise MalformedDistribution("distribution contains negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > _SUM_TOLERANCE:
        raise MalformedDistribution(f"distribution sums to {total!r}, not 1")
    return p


def step_distribution(
    model_dist,
    tree: PrefixTree,
    cursor: TreeCursor,
    config: DecodeConfig,
) -> StepDistribution:
    """Compute one biased step at the cursor's tree position.

    The pointer distribution is the model distribution masked to the valid
    tokens and renormalized; the final distribution interpolates the two
    with weight ``g`` unless the step falls back. A valid mass of exactly
    zero also falls back: there is nothing to renormalize.
    """
    p = _validated(model_dist)
    valid = tree.child_token_array(cursor.node)
    if valid.size and int(valid[-1]) >= p.shape[0]:
        raise MalformedDistribution(
            f"distribution of size {p.shape[0]} cannot cover tree token {int(valid[-1])}"
        )
    valid_mass = float(p[valid].sum()) if valid.size else 0.0
    g = config.gen_prob if config.gen_mode == FIXED else valid_mass

    pointer = np.zeros_like(p)
    if valid.size and valid_mass > 0.0:
        pointer[valid] = p[valid] / valid_mass

    fallback = valid.size == 0 or valid_mass <= 0.0 or valid_mass < config.threshold or g == 0.0
    if fallback:
        final = p.copy()
    else:
        final = (1.0 - g) * p
        final[valid] += g * pointer[valid]
    return StepDistribution(
        model_dist=p,
        pointer_dist=pointer,
        final_dist=final,
        fallback=fallback,
        valid_mass=valid_mass,
    )


def _model_only_step(model_dist) -> StepDistribution:
    p = _validated(model_dist)
    return StepDistribution(
        model_dist=p,
        pointer_dist=np.zeros_like(p),
        final_dist=p.copy(),
        fallback=True,
        valid_mass=0.0,
    )


def _check_epsilon(config: DecodeConfig, vocab_size: int) -> None:
    if config.epsilon >= 1.0 / vocab_size:
        raise ValueError(
            f"epsilon {config.epsilon} must be below 1/V = {1.0 / vocab_size:.3g}"
        )


def _score_step(scorer: Scorer, context: Sequence[int], step: int) -> np.ndarray:
    try:
        logp = scorer.score_next(context)
    except ScorerFailure as exc:
        raise ScorerFailure(f"step {step}: {exc}", step=step) from exc
    return np.exp(np.asarray(logp, dtype=float))


def decode_greedy(
    scorer: Scorer,
    tree: PrefixTree | None,
    config: DecodeConfig,
    *,
    eos_id: int,
) -> tuple[Hypothesis, DecodeTrace]:
    """Greedy biased decode: per-step argmax of the final distribution.

    Ties break toward the lowest token id. ``tree=None`` decodes with the
    scorer alone (every step recorded as a fallback).
    """
    _check_epsilon(config, scorer.vocab_size)
    cursor = tree.root_cursor() if tree is not None else None
    tokens: list[int] = []
    records: list[StepRecord] = []
    log_score = 0.0
    for step in range(config.max_steps):
        p = _score_step(scorer, tokens, step)
        sd = step_distribution(p, tree, cursor, config) if tree is not None else _model_only_step(p)
        token = int(np.argmax(sd.final_dist))
        log_score += math.log(max(float(sd.final_dist[token]), config.epsilon))
        tokens.append(token)
        completed = None
        if tree is not None:
            cursor = tree.advance(cursor, token)
            completed = tree.phrase_completed(cursor)
        records.append(
            StepRecord(step=step, token=token, fallback=sd.fallback,
                       valid_mass=sd.valid_mass, completed_phrase=completed)
        )
        if token == eos_id:
            break
    hyp = Hypothesis(tokens=tuple(tokens), log_score=log_score, cursor=cursor, finished=True)
    return hyp, DecodeTrace(records=tuple(records))


@dataclass(frozen=True)
class _BeamItem:
    tokens: tuple[int, ...]
    log_score: float
    cursor: TreeCursor | None
    records: tuple[StepRecord, ...]


def decode_beam(
    scorer: Scorer,
    tree: PrefixTree | None,
    config: DecodeConfig,
    *,
    eos_id: int,
) -> tuple[list[Hypothesis], list[DecodeTrace]]:
    """Beam search over biased step distributions.

    Every hypothesis carries its own tree cursor and trace. Results are
    sorted by log-score descending, ties broken by (fewer tokens,
    lexicographically smaller token sequence). Width 1 reproduces
    :func:`decode_greedy` exactly.
    """
    _check_epsilon(config, scorer.vocab_size)
    width = config.beam_width
    root = tree.root_cursor() if tree is not None else None
    live: list[_BeamItem] = [_BeamItem(tokens=(), log_score=0.0, cursor=root, records=())]
    finished: list[_BeamItem] = []

    for step in range(config.max_steps):
        if not live:
            break
        candidates: list[tuple[float, tuple[int, ...], _BeamItem, bool, float, int | None,
                               TreeCursor | None]] = []
        for item in live:
            p = _score_step(scorer, item.tokens, step)
            sd = (step_distribution(p, tree, item.cursor, config)
                  if tree is not None else _model_only_step(p))
            order = np.argsort(-sd.final_dist, kind="stable")[:width]
            for token in order:
                token = int(token)
                score = item.log_score + math.log(
                    max(float(sd.final_dist[token]), config.epsilon)
                )
                new_cursor = None
                completed = None
                if tree is not None:
                    new_cursor = tree.advance(item.cursor, token)
                    completed = tree.phrase_completed(new_cursor)
                candidates.append(
                    (score, item.tokens + (token,), item, sd.fallback,
                     sd.valid_mass, completed, new_cursor)
                )
        candidates.sort(key=lambda c: (-c[0], len(c[1]), c[1]))
        live = []
        for score, tokens, item, fallback, valid_mass, completed, new_cursor in candidates[:width]:
            record = StepRecord(step=step, token=tokens[-1], fallback=fallback,
                                valid_mass=valid_mass, completed_phrase=completed)
            extended = _BeamItem(tokens=tokens, log_score=score, cursor=new_cursor,
                                 records=item.records + (record,))
            if tokens[-1] == eos_id:
                finished.append(extended)
            else:
                live.append(extended)

    finished.extend(live)  # hypotheses stopped by max_steps are finished too
    finished.sort(key=lambda h: (-h.log_score, len(h.tokens), h.tokens))
    hyps = [
        Hypothesis(tokens=h.tokens, log_score=h.log_score, cursor=h.cursor, finished=True)
        for h in finished
    ]
    traces = [DecodeTrace(records=h.records) for h in finished]
    return hyps, traces


def fallback_rate(trace: DecodeTrace) -> float:
    """Fraction of steps that fell back to the raw model; 0 for an empty trace."""
    if not trace.records:
        return 0.0
    return sum(1 for r in trace.records if r.fallback) / len(trace.records)


def aggregate_fallback_rate(traces: Iterable[DecodeTrace]) -> float:
    """Corpus-level fallback rate: fallback steps over total steps."""
    fallbacks = 0
    steps = 0
    for trace in traces:
        steps += len(trace.records)
        fallbacks += sum(1 for r in trace.records if r.fallback)
    return fallbacks / steps if steps else 0.0
