from __future__ import annotations

import socket
import socketserver
import sys
import threading
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treebias.errors import EmptyCorpus, HandshakeMismatch, ScorerFailure
from treebias.scorers import (
    MixtureScorer,
    ToyScorer,
    build_toy_scorer,
    connect_subprocess,
    connect_tcp,
    external_scorer_connect,
)

FAKE_PEER = str(Path(__file__).parent / "fake_peer.py")


def peer_cmd(mode: str, vocab_size: int = 16, version: int = 1) -> list[str]:
    return [sys.executable, FAKE_PEER, "--mode", mode,
            "--vocab-size", str(vocab_size), "--protocol-version", str(version)]


class TestToyScorer:
    def test_add_alpha_counts_by_hand(self):
        # "a a a b" as unigrams over {a, b}: P(a) = (3+α)/(4+2α)
        alpha = 0.5
        scorer = build_toy_scorer([[0, 0, 0, 1]], order=1, alpha=alpha, vocab_size=2)
        probs = np.exp(scorer.score_next([]))
        assert probs[0] == pytest.approx((3 + alpha) / (4 + 2 * alpha))
        assert probs[1] == pytest.approx((1 + alpha) / (4 + 2 * alpha))

    def test_two_token_corpus(self):
        scorer = build_toy_scorer([[0, 1]], order=1, alpha=1.0, vocab_size=2)
        probs = np.exp(scorer.score_next([]))
        assert probs[0] == pytest.approx(0.5) and probs[1] == pytest.approx(0.5)

    def test_backoff_to_shorter_context(self):
        scorer = build_toy_scorer([[0, 1, 0, 1]], order=2, alpha=1.0, vocab_size=2)
        # context (1,) was seen; unknown context backs off to unigrams
        assert np.allclose(scorer.score_next([]), scorer.score_next([]))
        unigram = (np.array([2, 2]) + 1.0) / (4 + 2.0)
        assert np.allclose(np.exp(scorer.score_next([])), unigram)
        bigram_row = np.exp(scorer.score_next([1]))
        assert bigram_row[0] > bigram_row[1]

    def test_uniform_limit(self):
        scorer = ToyScorer.uniform(8)
        assert np.allclose(scorer.score_next([3]), np.log(1 / 8))

    def test_mode_token_dominates(self):
        scorer = build_toy_scorer([[2] * 9 + [1]], order=1, alpha=0.1, vocab_size=4)
        probs = np.exp(scorer.score_next([]))
        assert probs.argmax() == 2

    def test_ngram_multiset_permutation_equivalence(self):
        a = build_toy_scorer([[0, 1], [1, 0]], order=1, alpha=0.7, vocab_size=3)
        b = build_toy_scorer([[1, 0], [0, 1]], order=1, alpha=0.7, vocab_size=3)
        for ctx in ([], [0], [1], [2]):
            assert np.array_equal(a.score_next(ctx), b.score_next(ctx))

    def test_determinism_bit_for_bit(self):
        corpus = [[0, 1, 2, 1], [2, 2, 0]]
        a = build_toy_scorer(corpus, order=3, alpha=0.25, vocab_size=4)
        b = build_toy_scorer(corpus, order=3, alpha=0.25, vocab_size=4)
        for ctx in ([], [0], [1, 2], [0, 1, 2, 1]):
            assert a.score_next(ctx).tobytes() == b.score_next(ctx).tobytes()

    def test_context_prefix_anchors_start(self):
        seq = [3, 0, 1]  # 3 acts as bos
        anchored = build_toy_scorer([seq], order=2, alpha=0.01, vocab_size=4,
                                    context_prefix=(3,))
        assert np.exp(anchored.score_next([])).argmax() == 0

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            build_toy_scorer([], order=1, alpha=1.0, vocab_size=4)
        with pytest.raises(EmptyCorpus):
            build_toy_scorer([[]], order=1, alpha=1.0, vocab_size=4)

    @pytest.mark.parametrize("order,alpha", [(0, 1.0), (4, 1.0), (2, 0.0), (2, -1.0)])
    def test_bad_parameters(self, order, alpha):
        with pytest.raises(ValueError):
            build_toy_scorer([[0]], order=order, alpha=alpha, vocab_size=2)

    def test_token_outside_vocab(self):
        with pytest.raises(ValueError):
            build_toy_scorer([[5]], order=1, alpha=1.0, vocab_size=2)

    @given(st.lists(st.lists(st.integers(0, 5), min_size=1, max_size=10),
                    min_size=1, max_size=5),
           st.lists(st.integers(0, 5), max_size=6))
    @settings(max_examples=100)
    def test_rows_are_proper_distributions(self, corpus, context):
        scorer = build_toy_scorer(corpus, order=2, alpha=0.3, vocab_size=6)
        logp = scorer.score_next(context)
        probs = np.exp(logp)
        assert probs.shape == (6,)
        assert np.all(probs > 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)


class TestMixtureScorer:
    def test_mixes_probabilities(self):
        a = ToyScorer.uniform(4)
        b = build_toy_scorer([[0, 0, 0]], order=1, alpha=1.0, vocab_size=4)
        mix = MixtureScorer([(0.5, a), (0.5, b)])
        expected = 0.5 * np.exp(a.score_next([])) + 0.5 * np.exp(b.score_next([]))
        assert np.allclose(np.exp(mix.score_next([])), expected)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            MixtureScorer([(0.5, ToyScorer.uniform(4))])

    def test_vocab_sizes_must_agree(self):
        with pytest.raises(ValueError):
            MixtureScorer([(0.5, ToyScorer.uniform(4)), (0.5, ToyScorer.uniform(5))])


class TestWireScorer:
    def test_handshake_and_score(self):
        session = connect_subprocess(peer_cmd("ok"), expected_vocab_size=16)
        try:
            assert session.vocab_size == 16
            scorer = session.scorer_for("utt1")
            logp = scorer.score_next([1, 2, 3])
            assert logp.shape == (16,)
            assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-9)
            again = scorer.score_next([1, 2, 3])
            assert np.array_equal(logp, again)
            session.reset("utt1")
            assert scorer.score_next([]).shape == (16,)
        finally:
            session.close()

    def test_empty_context_wire_format(self):
        with connect_subprocess(peer_cmd("ok")) as session:
            logp = session.score_next("u", [])
            assert logp.shape == (16,)

    def test_handshake_mismatch(self):
        with pytest.raises(HandshakeMismatch):
            connect_subprocess(peer_cmd("ok", vocab_size=100), expected_vocab_size=101)

    def test_unsupported_protocol_version(self):
        with pytest.raises(ScorerFailure):
            connect_subprocess(peer_cmd("ok", version=9))

    def test_garbled_handshake(self):
        with pytest.raises(ScorerFailure):
            connect_subprocess(peer_cmd("garbage-hello"))

    def test_silent_peer(self):
        with pytest.raises(ScorerFailure):
            connect_subprocess(peer_cmd("silent"))

    @pytest.mark.parametrize("mode", [
        "wrong-length", "nan", "not-normalized", "truncated",
        "garbage-reply", "wrong-utterance", "error-line", "die-after-hello",
    ])
    def test_fuzzed_peer_always_fails_cleanly(self, mode):
        session = None
        try:
            session = connect_subprocess(peer_cmd(mode))
            with pytest.raises(ScorerFailure):
                session.score_next("u", [0, 1])
        except ScorerFailure:
            pass  # failing at handshake is an equally clean outcome
        finally:
            if session is not None:
                session.close()

    def test_peer_death_mid_session(self):
        session = connect_subprocess(peer_cmd("die-mid-session"))
        assert session.score_next("u", [0]).shape == (16,)
        with pytest.raises(ScorerFailure):
            session.score_next("u", [0, 1])

    def test_dead_session_refuses_requests(self):
        session = connect_subprocess(peer_cmd("wrong-length"))
        with pytest.raises(ScorerFailure):
            session.score_next("u", [])
        with pytest.raises(ScorerFailure, match="already failed"):
            session.score_next("u", [])

    def test_unlaunchable_command(self):
        with pytest.raises(ScorerFailure):
            connect_subprocess(["/nonexistent/peer-binary"])

    def test_endpoint_parsing(self):
        with pytest.raises(ScorerFailure):
            external_scorer_connect("carrier-pigeon:coop")
        with pytest.raises(ScorerFailure):
            external_scorer_connect("tcp:no-port-here")

    def test_cmd_endpoint(self):
        endpoint = "cmd:" + " ".join(peer_cmd("ok"))
        with external_scorer_connect(endpoint, expected_vocab_size=16) as session:
            assert session.vocab_size == 16


class _TcpPeer(socketserver.StreamRequestHandler):
    def handle(self):
        from fake_peer import logp_vector

        vec = logp_vector(8)
        self.wfile.write(b"HELLO 1 8\n")
        for raw in self.rfile:
            parts = raw.decode().split()
            if not parts or parts[0] == "BYE":
                return
            if parts[0] == "RESET":
                continue
            reply = f"LOGP {parts[1]} " + " ".join(f"{v:.9g}" for v in vec) + "\n"
            self.wfile.write(reply.encode())


class TestTcpEndpoint:
    def test_tcp_session(self):
        server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), _TcpPeer)
        port = server.server_address[1]
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            with connect_tcp("127.0.0.1", port, expected_vocab_size=8) as session:
                logp = session.score_next("u", [1, 2])
                assert logp.shape == (8,)
            with external_scorer_connect(f"tcp:127.0.0.1:{port}") as session:
                assert session.vocab_size == 8
        finally:
            server.shutdown()
            server.server_close()

    def test_unreachable_tcp(self):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        sock.close()  # nothing listens here now
        with pytest.raises(ScorerFailure):
            connect_tcp("127.0.0.1", port, timeout=2.0)
