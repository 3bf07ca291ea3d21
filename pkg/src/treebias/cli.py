"""Command-line surface: build the tree, decode against a scorer, evaluate.

Exit codes are part of the contract for pipeline embedding:
2 = input parse failure, 3 = scorer failure, 4 = id alignment failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import hashlib
import json
import sys
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__
from .decoding import (
    DecodeConfig,
    DecodeTrace,
    aggregate_fallback_rate,
    decode_beam,
    decode_greedy,
    fallback_rate,
    parse_trace,
)
from .errors import (
    EmptyLexicon,
    EmptyReference,
    HandshakeMismatch,
    IdMismatch,
    IoFailure,
    ScorerFailure,
    TreebiasError,
    UntokenizablePhrase,
)
from .evaluation import (
    TranscriptSegment,
    corpus_wer,
    entity_accuracy,
    extract_entities,
    extract_keywords,
    load_corpus_file,
    load_gazetteer_file,
    load_segments_file,
    load_triggers_file,
    response_time_mse,
    wer,
    wer_from_words,
)
from .lexicon import clean_phrase, load_biasing_list, load_vocabulary, tokenize_phrase
from .scorers import ToyScorer, build_toy_scorer, external_scorer_connect
from .trie import build_tree, load_tree, save_tree

EXIT_PARSE = 2
EXIT_SCORER = 3
EXIT_ALIGN = 4

CONFIG_KEYS = {
    "threshold": float,
    "generation-mode": str,
    "g": float,
    "beam-width": int,
    "max-steps": int,
    "epsilon": float,
    "fuzzy-threshold": int,
    "miss-penalty": float,
    "toy-order": int,
    "toy-alpha": float,
}


@dataclass
class RunSettings:
    """Decode/eval knobs merged from config file and flag overrides."""

    threshold: float = 0.05
    generation_mode: str = "fixed"
    g: float = 0.8
    beam_width: int = 4
    max_steps: int = 448
    epsilon: float = 1e-12
    fuzzy_threshold: int | None = None
    miss_penalty: float = 1.0
    toy_order: int = 2
    toy_alpha: float = 0.1

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            threshold=self.threshold,
            gen_mode=self.generation_mode,
            gen_prob=self.g,
            beam_width=self.beam_width,
            max_steps=self.max_steps,
            epsilon=self.epsilon,
        )


def parse_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, eq, value = (part.strip() for part in stripped.partition("="))
        if eq != "=" or key not in CONFIG_KEYS:
            raise IoFailure(f"config line {line_no}: expected '<known-key> = <value>'")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise IoFailure(f"config line {line_no}: bad value for {key}") from exc
    return values


def _settings_from(args: argparse.Namespace) -> RunSettings:
    settings = RunSettings()
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            setattr(settings, key.replace("-", "_"), value)
    for key in ("threshold", "g", "beam_width", "max_steps", "epsilon",
                "fuzzy_threshold", "miss_penalty"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(settings, key, value)
    if getattr(args, "gen_mode", None) is not None:
        settings.generation_mode = args.gen_mode
    return settings


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, settings: RunSettings | None,
                   inputs: dict[str, str | Path], outputs: list[str]) -> None:
    """Emit a run manifest next to the outputs: config snapshot plus input digests."""
    manifest = {
        "tool": "treebias",
        "version": __version__,
        "command": command,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": asdict(settings) if settings is not None else None,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(path)}
            for name, path in inputs.items()
        },
        "outputs": sorted(outputs),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_build(args: argparse.Namespace) -> int:
    vocab = load_vocabulary(args.vocab)
    lexicon = load_biasing_list(args.biasing_list, vocab)
    tree = build_tree(lexicon)
    out_tree = Path(args.out_tree)
    out_tree.parent.mkdir(parents=True, exist_ok=True)
    save_tree(tree, out_tree)
    write_manifest(out_tree.parent, "build", None,
                   {"biasing-list": args.biasing_list, "vocab": args.vocab},
                   [out_tree.name])
    print(f"phrases = {len(lexicon)}")
    print(f"dropped = {lexicon.dropped}")
    print(f"duplicates = {lexicon.duplicates}")
    print(f"nodes = {tree.node_count}")
    return 0


def _decode_one(scorer_factory, tree, config, utt_id: str, eos_id: int):
    scorer = scorer_factory(utt_id)
    if config.beam_width == 1:
        hyp, trace = decode_greedy(scorer, tree, config, eos_id=eos_id)
        return hyp, trace
    hyps, traces = decode_beam(scorer, tree, config, eos_id=eos_id)
    return hyps[0], traces[0]


def cmd_decode(args: argparse.Namespace) -> int:
    settings = _settings_from(args)
    config = settings.decode_config()
    vocab = load_vocabulary(args.vocab)
    tree = load_tree(args.tree) if args.tree else None

    utterance_ids = [row for _, row in _plain_lines(args.utterances)]
    out_dir = Path(args.out)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    sessions: list = []
    lock = threading.Lock()

    def make_session_scorer():
        session = external_scorer_connect(args.scorer, expected_vocab_size=vocab.size)
        with lock:
            sessions.append(session)
        return session

    if args.scorer.startswith("toy:"):
        corpus_path = args.scorer[len("toy:"):]
        sequences = []
        for _, row in _plain_lines(corpus_path):
            normalized = clean_phrase(row)
            if normalized:
                sequences.append([vocab.bos_id] + tokenize_phrase(normalized, vocab)
                                 + [vocab.eos_id])
        toy = build_toy_scorer(sequences, order=settings.toy_order,
                               alpha=settings.toy_alpha, vocab_size=vocab.size,
                               context_prefix=(vocab.bos_id,))

        def scorer_factory(_utt_id: str):
            return toy

    elif args.scorer == "uniform":
        uniform = ToyScorer.uniform(vocab.size)

        def scorer_factory(_utt_id: str):
            return uniform

    else:
        # One wire session per worker thread; finished utterances are
        # RESET so the peer can drop their cached state.
        local = threading.local()

        def scorer_factory(utt_id: str):
            if getattr(local, "session", None) is None:
                local.session = make_session_scorer()
            elif local.last_utt is not None:
                local.session.reset(local.last_utt)
            local.last_utt = utt_id
            return local.session.scorer_for(utt_id)

    worker_count = max(1, args.jobs)
    results: dict[str, tuple] = {}
    failure: tuple[str, Exception] | None = None
    try:
        if worker_count == 1:
            for utt_id in utterance_ids:
                try:
                    results[utt_id] = _decode_one(scorer_factory, tree, config,
                                                  utt_id, vocab.eos_id)
                except (ScorerFailure, HandshakeMismatch) as exc:
                    failure = (utt_id, exc)
                    break
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=worker_count) as pool:
                futures = {
                    utt_id: pool.submit(_decode_one, scorer_factory, tree, config,
                                        utt_id, vocab.eos_id)
                    for utt_id in utterance_ids
                }
                for utt_id in utterance_ids:
                    try:
                        results[utt_id] = futures[utt_id].result()
                    except (ScorerFailure, HandshakeMismatch) as exc:
                        failure = (utt_id, exc)
                        break
    finally:
        for session in sessions:
            session.close()

    hyp_lines = []
    traces = []
    for utt_id in utterance_ids:
        if utt_id not in results:
            break
        hyp, trace = results[utt_id]
        text = vocab.detokenize(hyp.tokens).strip()
        hyp_lines.append(f"{utt_id}\t{text}")
        (trace_dir / f"{utt_id}.trace").write_text(
            "\n".join(trace.dump_lines()) + ("\n" if len(trace) else ""), encoding="utf-8"
        )
        traces.append(trace)

    (out_dir / "hyps.tsv").write_text(
        "\n".join(hyp_lines) + ("\n" if hyp_lines else ""), encoding="utf-8"
    )
    inputs = {"vocab": args.vocab, "utterances": args.utterances}
    if args.tree:
        inputs["tree"] = args.tree
    if args.scorer.startswith("toy:"):
        inputs["toy-corpus"] = args.scorer[len("toy:"):]
    write_manifest(out_dir, "decode", settings, inputs,
                   ["hyps.tsv", "traces/"])

    if failure is not None:
        utt_id, exc = failure
        (out_dir / "FAILED").write_text(f"{utt_id}\t{exc}\n", encoding="utf-8")
        print(f"scorer failure at utterance {utt_id}: {exc}", file=sys.stderr)
        return EXIT_SCORER
    print(f"utterances = {len(hyp_lines)}")
    print(f"fallback-rate = {aggregate_fallback_rate(traces):.6f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings_from(args)
    refs = load_corpus_file(args.refs)
    hyps = load_corpus_file(args.hyps)
    if set(refs) != set(hyps):
        offending = sorted(set(refs) ^ set(hyps))
        raise IdMismatch(f"reference/hypothesis ids differ: {offending}", offending)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    overall = corpus_wer((refs[utt_id], hyps[utt_id]) for utt_id in refs)
    raw_s = raw_d = raw_i = raw_n = 0
    for utt_id in refs:
        raw = wer_from_words(refs[utt_id].split(), hyps[utt_id].split())
        raw_s += raw.substitutions
        raw_d += raw.deletions
        raw_i += raw.insertions
        raw_n += raw.reference_words

    report: list[tuple[str, str]] = [
        ("utterances", str(len(refs))),
        ("wer", f"{overall.wer:.6f}"),
        ("substitutions", str(overall.substitutions)),
        ("deletions", str(overall.deletions)),
        ("insertions", str(overall.insertions)),
        ("reference-words", str(overall.reference_words)),
        ("wer-raw", f"{(raw_s + raw_d + raw_i) / raw_n:.6f}"),
    ]

    detail_rows = {}
    for utt_id in refs:
        one = wer(refs[utt_id], hyps[utt_id])
        detail_rows[utt_id] = [f"{one.wer:.6f}", str(one.substitutions),
                               str(one.deletions), str(one.insertions),
                               str(one.reference_words)]

    traces: dict[str, DecodeTrace] = {}
    if args.traces:
        trace_dir = Path(args.traces)
        for utt_id in refs:
            trace_path = trace_dir / f"{utt_id}.trace"
            if not trace_path.exists():
                raise IdMismatch(f"missing trace for utterance {utt_id}", [utt_id])
            traces[utt_id] = parse_trace(
                trace_path.read_text(encoding="utf-8").splitlines()
            )
        report.append(
            ("fallback-rate", f"{aggregate_fallback_rate(traces.values()):.6f}")
        )
    for utt_id in refs:
        detail_rows[utt_id].append(
            f"{fallback_rate(traces[utt_id]):.6f}" if utt_id in traces else "-"
        )

    if args.gazetteer:
        gazetteer = load_gazetteer_file(args.gazetteer)
        predicted = {
            utt_id: extract_entities(hyps[utt_id], gazetteer, settings.fuzzy_threshold)
            for utt_id in refs
        }
        gold = {
            utt_id: {
                (h.canonical, h.label)
                for h in extract_entities(refs[utt_id], gazetteer, settings.fuzzy_threshold)
            }
            for utt_id in refs
        }
        accuracy = entity_accuracy(predicted, gold)
        report.append(("entity-accuracy", f"{accuracy:.6f}"))
        for utt_id in refs:
            predicted_set = {(h.canonical, h.label) for h in predicted[utt_id]}
            detail_rows[utt_id].append("1" if predicted_set == gold[utt_id] else "0")
    else:
        for utt_id in refs:
            detail_rows[utt_id].append("-")

    if args.triggers:
        if not args.segments:
            raise IoFailure("--triggers requires --segments for timing")
        segments = load_segments_file(args.segments)
        missing = sorted(set(segments) - set(refs))
        if missing:
            raise IdMismatch(f"segment ids not in references: {missing}", missing)
        triggers = load_triggers_file(args.triggers)
        predicted_times: dict[str, tuple[float, float]] = {}
        gold_times: dict[str, tuple[float, float]] = {}
        skipped = 0
        for trigger in triggers:
            if trigger.utterance_id not in segments:
                raise IdMismatch(
                    f"trigger {trigger.trigger_id} names unknown utterance "
                    f"{trigger.utterance_id}", [trigger.utterance_id])
            ref_segments = segments[trigger.utterance_id]
            hyp_segments = [
                TranscriptSegment(start=s.start, end=s.end, text=hyps[trigger.utterance_id])
                for s in ref_segments
            ]
            gold_hits = extract_keywords(ref_segments, [trigger.keyword])
            if not gold_hits:
                skipped += 1
                continue
            gold_times[trigger.trigger_id] = (trigger.time, gold_hits[0].timestamp)
            pred_hits = extract_keywords(hyp_segments, [trigger.keyword])
            if pred_hits:
                predicted_times[trigger.trigger_id] = (trigger.time, pred_hits[0].timestamp)
        mse = response_time_mse(predicted_times, gold_times, settings.miss_penalty)
        report.append(("response-time-mse", f"{mse:.6f}"))
        report.append(("triggers-evaluated", str(len(gold_times))))
        report.append(("triggers-skipped", str(skipped)))

    report_text = "\n".join(f"{key} = {value}" for key, value in report) + "\n"
    (out_dir / "report.txt").write_text(report_text, encoding="utf-8")
    header = "utterance\twer\tS\tD\tI\tN\tfallback-rate\tentities-match\n"
    detail_text = header + "".join(
        utt_id + "\t" + "\t".join(row) + "\n" for utt_id, row in detail_rows.items()
    )
    (out_dir / "detail.tsv").write_text(detail_text, encoding="utf-8")

    inputs = {"refs": args.refs, "hyps": args.hyps}
    for name in ("gazetteer", "segments", "triggers"):
        if getattr(args, name):
            inputs[name] = getattr(args, name)
    write_manifest(out_dir, "eval", settings, inputs, ["report.txt", "detail.tsv"])
    sys.stdout.write(report_text)
    return 0


def _plain_lines(path: str | Path) -> list[tuple[int, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return [
        (line_no, row)
        for line_no, row in enumerate(text.splitlines(), start=1)
        if row.strip() and not row.startswith("#")
    ]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treebias",
        description="Prefix-tree contextual biasing for autoregressive decoding",
    )
    parser.add_argument("--version", action="version", version=f"treebias {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="compile a biasing list into a tree artifact")
    p_build.add_argument("--biasing-list", required=True)
    p_build.add_argument("--vocab", required=True)
    p_build.add_argument("--out-tree", required=True)
    p_build.set_defaults(func=cmd_build)

    p_decode = sub.add_parser("decode", help="decode utterances against a scorer")
    p_decode.add_argument("--tree", help="tree artifact; omit for an unbiased run")
    p_decode.add_argument("--vocab", required=True)
    p_decode.add_argument("--scorer", required=True,
                          help="toy:<corpus>, uniform, cmd:<command>, or tcp:<host>:<port>")
    p_decode.add_argument("--utterances", required=True, help="file of utterance ids")
    p_decode.add_argument("--out", required=True, help="output directory")
    p_decode.add_argument("--config")
    p_decode.add_argument("--jobs", type=int, default=1)
    p_decode.add_argument("--threshold", type=float)
    p_decode.add_argument("--gen-mode", choices=["fixed", "mass-coupled"])
    p_decode.add_argument("--g", type=float)
    p_decode.add_argument("--beam-width", type=int)
    p_decode.add_argument("--max-steps", type=int)
    p_decode.add_argument("--epsilon", type=float)
    p_decode.set_defaults(func=cmd_decode)

    p_eval = sub.add_parser("eval", help="score hypotheses against references")
    p_eval.add_argument("--refs", required=True)
    p_eval.add_argument("--hyps", required=True)
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--gazetteer")
    p_eval.add_argument("--segments")
    p_eval.add_argument("--triggers")
    p_eval.add_argument("--traces", help="trace directory from a decode run")
    p_eval.add_argument("--config")
    p_eval.add_argument("--fuzzy-threshold", type=int)
    p_eval.add_argument("--miss-penalty", type=float)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IoFailure, UntokenizablePhrase, EmptyLexicon, EmptyReference, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ScorerFailure, HandshakeMismatch) as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return EXIT_SCORER
    except IdMismatch as exc:
        print(f"alignment error: {exc}", file=sys.stderr)
        return EXIT_ALIGN
    except TreebiasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
