"""WAV loading and light preprocessing: resampling and silence trimming."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

TARGET_SAMPLE_RATE = 16_000


def load_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file as float32 mono in [-1, 1] plus its sample rate."""
    with wave.open(str(path), "rb") as handle:
        rate = handle.getframerate()
        n_channels = handle.getnchannels()
        width = handle.getsampwidth()
        frames = handle.readframes(handle.getnframes())
    if width == 2:
        samples = np.frombuffer(frames, dtype=np.int16).astype(np.float32) / 32768.0
    elif width == 4:
        samples = np.frombuffer(frames, dtype=np.int32).astype(np.float32) / 2147483648.0
    elif width == 1:
        samples = (np.frombuffer(frames, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    else:
        raise ValueError(f"unsupported sample width {width} bytes in {path}")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def resample(samples: np.ndarray, rate: int, target: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """Linear-interpolation resampling; adequate for speech features."""
    if rate == target:
        return samples
    if samples.size == 0:
        return samples
    duration = samples.size / rate
    n_out = max(1, int(round(duration * target)))
    grid_in = np.arange(samples.size) / rate
    grid_out = np.arange(n_out) / target
    return np.interp(grid_out, grid_in, samples).astype(np.float32)


def trim_silence(samples: np.ndarray, rate: int = TARGET_SAMPLE_RATE,
                 frame_ms: float = 25.0, threshold: float = 0.01) -> np.ndarray:
    """Drop leading and trailing frames whose RMS is below ``threshold`` of peak.

    A deterministic energy gate, not a full voice-activity detector;
    interior frames are never removed.
    """
    if samples.size == 0:
        return samples
    peak = float(np.max(np.abs(samples)))
    if peak == 0.0:
        return samples[:0]
    frame = max(1, int(rate * frame_ms / 1000.0))
    n_frames = int(np.ceil(samples.size / frame))
    padded = np.zeros(n_frames * frame, dtype=samples.dtype)
    padded[: samples.size] = samples
    rms = np.sqrt((padded.reshape(n_frames, frame) ** 2).mean(axis=1))
    loud = np.nonzero(rms >= threshold * peak)[0]
    if loud.size == 0:
        return samples[:0]
    start = int(loud[0]) * frame
    end = min(samples.size, (int(loud[-1]) + 1) * frame)
    return samples[start:end]


def load_audio(path: str | Path, trim: bool = True) -> np.ndarray:
    samples, rate = load_wav(path)
    samples = resample(samples, rate)
    if trim:
        samples = trim_silence(samples)
    return samples
