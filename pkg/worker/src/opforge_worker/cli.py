"""Worker entry point.

Spawn contract:
    opforge-worker --transport stdio|tcp:PORT --backend auto|jit|interpreter|mock [--mock-script PATH]
Capture tool:
    opforge-worker capture --target SCRIPT --out DIR
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path

from .mock_backend import MockWorker
from .server import Worker, pick_backend, serve


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "capture":
        return _capture_main(argv[1:])
    parser = argparse.ArgumentParser(prog="opforge-worker")
    parser.add_argument("--transport", default="stdio")
    parser.add_argument("--backend", default="auto",
                        choices=["auto", "jit", "interpreter", "mock"])
    parser.add_argument("--mock-script", default=None)
    args = parser.parse_args(argv)

    backend = pick_backend(args.backend)
    if backend == "mock":
        script = json.loads(Path(args.mock_script).read_text()) if args.mock_script else {}
        worker = MockWorker(script)
    else:
        try:
            worker = Worker(backend)
        except RuntimeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2

    if args.transport == "stdio":
        serve(sys.stdin.buffer, sys.stdout.buffer, worker)
        return 0
    if args.transport.startswith("tcp:"):
        port = int(args.transport.split(":", 1)[1])
        server = socket.create_server(("127.0.0.1", port))
        conn, _ = server.accept()
        with conn:
            serve(conn.makefile("rb"), conn.makefile("wb"), worker)
        return 0
    print(f"unsupported transport: {args.transport}", file=sys.stderr)
    return 2


def _capture_main(argv) -> int:
    parser = argparse.ArgumentParser(prog="opforge-worker capture")
    parser.add_argument("--target", required=True, help="python script to run under capture")
    parser.add_argument("--out", required=True, help="directory for captured plans")
    args = parser.parse_args(argv)

    from .capture import TargetCrashed, capture_inputs

    try:
        records = capture_inputs(Path(args.target), out_dir=Path(args.out))
    except TargetCrashed as exc:
        print(f"warning: {exc}; kept {len(exc.records)} partial record(s)", file=sys.stderr)
        return 1
    operators = sorted({r.operator for r in records})
    print(f"captured {len(records)} call(s) across {len(operators)} operator(s) -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
