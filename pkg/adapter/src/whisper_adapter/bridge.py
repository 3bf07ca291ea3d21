"""Model side of the adapter: features, encoder cache, per-step log-probs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .audio import TARGET_SAMPLE_RATE, load_audio


class BridgeError(Exception):
    """Raised for conditions reported to the client as an ERROR line."""


class WhisperBridge:
    """Wraps a Whisper-style model as utterance-conditioned token scoring.

    Encoder outputs are computed once per utterance and cached for the
    session; every SCORE request runs the decoder on the forced prefix
    plus the provided context and returns float64 log-softmax of the next
    token. Inference is deterministic (eval mode, no sampling).
    """

    def __init__(self, model_dir: str | Path, manifest: dict[str, Path],
                 forced_prefix: Sequence[int] | None = None, trim: bool = True):
        from transformers import WhisperFeatureExtractor, WhisperForConditionalGeneration
        from transformers.utils import logging as hf_logging

        hf_logging.set_verbosity_error()
        hf_logging.disable_progress_bar()

        self.model = WhisperForConditionalGeneration.from_pretrained(str(model_dir))
        self.model.eval()
        config = self.model.config
        self.vocab_size = int(config.vocab_size)
        self.max_target_positions = int(config.max_target_positions)
        # Whisper's conv front end halves the frame count, so the feature
        # window must supply exactly 2 * max_source_positions frames.
        chunk_seconds = 2 * int(config.max_source_positions) * 160 // TARGET_SAMPLE_RATE
        self.extractor = WhisperFeatureExtractor(
            feature_size=int(config.num_mel_bins),
            sampling_rate=TARGET_SAMPLE_RATE,
            hop_length=160,
            chunk_length=chunk_seconds,
            n_fft=400,
        )
        if forced_prefix is None:
            prefix = [int(config.decoder_start_token_id)]
            forced_ids = (getattr(config, "forced_decoder_ids", None)
                          or getattr(self.model.generation_config, "forced_decoder_ids", None))
            for _, token in sorted(forced_ids or []):
                prefix.append(int(token))
        else:
            prefix = [int(t) for t in forced_prefix]
        self.forced_prefix = prefix
        self.manifest = dict(manifest)
        self.trim = trim
        self._encoded: dict[str, torch.Tensor] = {}

    def _encode(self, utterance_id: str) -> torch.Tensor:
        cached = self._encoded.get(utterance_id)
        if cached is not None:
            return cached
        path = self.manifest.get(utterance_id)
        if path is None:
            raise BridgeError(f"unknown utterance {utterance_id}")
        try:
            samples = load_audio(path, trim=self.trim)
        except (OSError, ValueError, EOFError) as exc:
            raise BridgeError(f"cannot load audio for {utterance_id}: {exc}") from exc
        if samples.size == 0:
            raise BridgeError(f"utterance {utterance_id} is silent after trimming")
        features = self.extractor(samples, sampling_rate=TARGET_SAMPLE_RATE,
                                  return_tensors="pt").input_features
        with torch.no_grad():
            encoded = self.model.get_encoder()(features).last_hidden_state
        self._encoded[utterance_id] = encoded
        return encoded

    def log_probs(self, utterance_id: str, context: Sequence[int]) -> np.ndarray:
        for token in context:
            if not 0 <= int(token) < self.vocab_size:
                raise BridgeError(f"context token {token} outside vocabulary")
        decoder_ids = self.forced_prefix + [int(t) for t in context]
        if len(decoder_ids) >= self.max_target_positions:
            raise BridgeError(
                f"context length {len(context)} exceeds decoder window "
                f"{self.max_target_positions}")
        encoded = self._encode(utterance_id)
        with torch.no_grad():
            out = self.model(
                encoder_outputs=(encoded,),
                decoder_input_ids=torch.tensor([decoder_ids], dtype=torch.long),
            )
        logits = out.logits[0, -1].double()
        return torch.log_softmax(logits, dim=-1).numpy()

    def reset(self, utterance_id: str) -> None:
        self._encoded.pop(utterance_id, None)


def load_manifest(path: str | Path) -> dict[str, Path]:
    """Read ``<utterance-id><TAB><audio-path>`` lines; relative paths resolve
    against the manifest's directory."""
    base = Path(path).parent
    manifest: dict[str, Path] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        utt_id, _, audio = line.partition("\t")
        if not utt_id or not audio:
            raise ValueError(f"manifest line {line_no}: expected '<id><TAB><path>'")
        candidate = Path(audio)
        manifest[utt_id] = candidate if candidate.is_absolute() else base / candidate
    return manifest
