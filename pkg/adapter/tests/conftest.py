from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from support import N_UTTERANCES, VOCAB_SIZE, AdapterSession, adapter_command, write_wav


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory) -> Path:
    """A small randomly-initialized Whisper-architecture model, built offline."""
    import torch
    from transformers import WhisperConfig, WhisperForConditionalGeneration

    config = WhisperConfig(
        vocab_size=VOCAB_SIZE,
        num_mel_bins=32,
        d_model=32,
        encoder_layers=1,
        decoder_layers=1,
        encoder_attention_heads=2,
        decoder_attention_heads=2,
        encoder_ffn_dim=64,
        decoder_ffn_dim=64,
        max_source_positions=300,
        max_target_positions=64,
        decoder_start_token_id=1,
        bos_token_id=1,
        eos_token_id=2,
        pad_token_id=0,
    )
    torch.manual_seed(7)
    model = WhisperForConditionalGeneration(config)
    out = tmp_path_factory.mktemp("tiny_whisper")
    model.save_pretrained(str(out))
    return out


@pytest.fixture(scope="session")
def audio_manifest(tmp_path_factory) -> Path:
    """Ten synthesized utterances (sine mixtures) plus their manifest file."""
    audio_dir = tmp_path_factory.mktemp("audio")
    lines = []
    for i in range(N_UTTERANCES):
        duration = 1.0 + 0.15 * i
        t = np.arange(int(16_000 * duration)) / 16_000
        freq = 120.0 + 90.0 * i
        samples = 0.4 * np.sin(2 * math.pi * freq * t)
        samples += 0.2 * np.sin(2 * math.pi * (freq * 1.7) * t)
        name = f"utt{i}.wav"
        write_wav(audio_dir / name, samples.astype(np.float32))
        lines.append(f"utt{i}\t{name}")
    manifest = audio_dir / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@pytest.fixture(scope="module")
def live_session(model_dir, audio_manifest):
    session = AdapterSession(adapter_command(model_dir, audio_manifest))
    yield session
    session.close()
