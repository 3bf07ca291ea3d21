from __future__ import annotations

import argparse
import sys

from .bridge import WhisperBridge, load_manifest
from .server import serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="whisper-adapter",
        description="Serve a Whisper-style model over the scorer wire protocol (stdio)",
    )
    parser.add_argument("--model", required=True,
                        help="model directory loadable by transformers")
    parser.add_argument("--manifest", required=True,
                        help="file of <utterance-id><TAB><audio-path> lines")
    parser.add_argument("--forced-prefix",
                        help="comma-separated decoder prefix token ids "
                             "(default: the model's own start/task tokens)")
    parser.add_argument("--no-trim-silence", action="store_true",
                        help="disable the leading/trailing energy gate")
    args = parser.parse_args(argv)

    prefix = None
    if args.forced_prefix:
        try:
            prefix = [int(t) for t in args.forced_prefix.split(",") if t.strip()]
        except ValueError:
            parser.error(f"bad --forced-prefix {args.forced_prefix!r}")

    try:
        manifest = load_manifest(args.manifest)
    except (OSError, ValueError) as exc:
        print(f"ERROR cannot load manifest: {exc}", flush=True)
        return 1
    try:
        bridge = WhisperBridge(args.model, manifest, forced_prefix=prefix,
                               trim=not args.no_trim_silence)
    except Exception as exc:  # model loading failures are terminal
        print(f"ERROR cannot load model: {exc}", flush=True)
        return 1
    return serve(bridge, sys.stdin, sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
