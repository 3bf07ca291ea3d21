"""Scorer peer wrapping a Whisper-style encoder-decoder ASR model.

Speaks the line-oriented scorer protocol over stdio: announces its
vocabulary size with HELLO, then answers each SCORE request with the
model's next-token log-probabilities given that utterance's audio and the
provided context tokens. Audio preprocessing (resampling, silence
trimming, log-Mel features) lives entirely on this side of the wire.
"""

__version__ = "0.1.0"
