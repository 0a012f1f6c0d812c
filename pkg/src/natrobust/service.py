"""Minimal model service speaking the newline-delimited JSON protocol.

Run over stdio (``python -m natrobust.service --checkpoint m.json``) or TCP
(``--port``). Useful as an adapter template and as a test double.
"""

import argparse
import base64
import json
import socketserver
import sys

from natrobust.image import decode_image_bytes
from natrobust.predictor import predict_builtin
from natrobust.trainer import load_model


def handle_line(line: bytes, logits_fn) -> bytes:
    req = json.loads(line)
    img = decode_image_bytes(base64.b64decode(req["png_b64"]))
    logits = [float(v) for v in logits_fn(img)]
    return (json.dumps({"id": req["id"], "logits": logits}) + "\n").encode()


def serve_stream(rfile, wfile, logits_fn) -> None:
    for line in rfile:
        if not line.strip():
            continue
        wfile.write(handle_line(line, logits_fn))
        wfile.flush()


def serve_tcp(port: int, logits_fn, host: str = "127.0.0.1") -> socketserver.TCPServer:
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            serve_stream(self.rfile, self.wfile, logits_fn)

    socketserver.ThreadingTCPServer.allow_reuse_address = True
    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m natrobust.service")
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="reference MLP checkpoint (JSON)")
    src.add_argument("--fixed-logits", help="comma-separated logits returned for every frame")
    ap.add_argument("--port", type=int, help="serve TCP on 127.0.0.1:PORT instead of stdio")
    args = ap.parse_args(argv)

    if args.checkpoint:
        model, _ = load_model(args.checkpoint)

        def logits_fn(img):
            return predict_builtin(model, img)
    else:
        fixed = [float(v) for v in args.fixed_logits.split(",")]

        def logits_fn(img):
            return fixed

    if args.port is not None:
        with serve_tcp(args.port, logits_fn) as server:
            server.serve_forever()
    else:
        serve_stream(sys.stdin.buffer, sys.stdout.buffer, logits_fn)


if __name__ == "__main__":
    main()
