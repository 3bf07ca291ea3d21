from __future__ import annotations

import subprocess
import sys
import wave
from pathlib import Path

import numpy as np

VOCAB_SIZE = 64
N_UTTERANCES = 10


def write_wav(path: Path, samples: np.ndarray, rate: int = 16_000) -> None:
    pcm = np.clip(samples * 32767.0, -32768, 32767).astype(np.int16)
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(rate)
        handle.writeframes(pcm.tobytes())


def adapter_command(model_dir: Path, manifest: Path, *extra: str) -> list[str]:
    return [sys.executable, "-m", "whisper_adapter",
            "--model", str(model_dir), "--manifest", str(manifest), *extra]


class AdapterSession:
    """Thin line-oriented client used by the protocol tests."""

    def __init__(self, command: list[str]):
        self.proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, encoding="utf-8")
        self.hello = self.read_line()

    def send(self, line: str) -> None:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def read_line(self) -> str:
        line = self.proc.stdout.readline()
        return line.rstrip("\n")

    def score(self, utterance_id: str, context: list[int]) -> str:
        tokens = " ".join(str(t) for t in context)
        self.send(f"SCORE {utterance_id} {len(context)} {tokens}".rstrip())
        return self.read_line()

    def close(self) -> int:
        try:
            self.send("BYE")
        except (BrokenPipeError, OSError, ValueError):
            pass
        try:
            return self.proc.wait(timeout=30)
        finally:
            for stream in (self.proc.stdin, self.proc.stdout):
                try:
                    stream.close()
                except OSError:
                    pass
