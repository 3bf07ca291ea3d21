"""Wire-protocol session loop: HELLO, then SCORE/RESET until BYE.

Requests are handled strictly serially. Any malformed request or model
failure emits one ERROR line and ends the session; the client treats that
as a scorer failure rather than decoding on bad data.
"""

from __future__ import annotations

from typing import TextIO

from .bridge import BridgeError, WhisperBridge

PROTOCOL_VERSION = 1


def serve(bridge: WhisperBridge, stdin: TextIO, stdout: TextIO) -> int:
    def send(line: str) -> None:
        stdout.write(line + "\n")
        stdout.flush()

    send(f"HELLO {PROTOCOL_VERSION} {bridge.vocab_size}")
    for line in stdin:
        parts = line.split()
        if not parts:
            send("ERROR empty request")
            return 1
        verb = parts[0]
        if verb == "BYE":
            return 0
        if verb == "RESET":
            if len(parts) == 2:
                bridge.reset(parts[1])
            continue
        if verb != "SCORE":
            send(f"ERROR unknown verb {verb}")
            return 1
        if len(parts) < 3:
            send("ERROR malformed SCORE request")
            return 1
        utterance_id = parts[1]
        try:
            count = int(parts[2])
            context = [int(t) for t in parts[3:]]
        except ValueError:
            send("ERROR non-integer token in SCORE request")
            return 1
        if count != len(context):
            send(f"ERROR token count {count} does not match {len(context)} tokens")
            return 1
        try:
            logp = bridge.log_probs(utterance_id, context)
        except BridgeError as exc:
            send(f"ERROR {exc}")
            return 1
        send(f"LOGP {utterance_id} " + " ".join(f"{v:.9g}" for v in logp))
    return 0
