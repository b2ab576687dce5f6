"""Reward service over two transports with one wire contract.

Replies always carry the same seven fields:
{"instance_id", "reward", "format", "answer", "hidden_match", "consistency",
 "error"} with nulls where a field does not apply. The stdio transport reads
one JSON request per line; the HTTP transport exposes POST /reward,
POST /reward/batch and GET /healthz."""

from __future__ import annotations

import json
import logging
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import canon
from .store import InstanceStore
from .verifier import STRICT, ScoredResponse, score_response

logger = logging.getLogger(__name__)

BAD_REQUEST = "bad_request"


def reply_obj(scored: ScoredResponse) -> dict:
    b = scored.breakdown
    return {
        "instance_id": scored.instance_id,
        "reward": None if b is None else b.total,
        "format": None if b is None else b.format,
        "answer": None if b is None else b.answer,
        "hidden_match": None if b is None else b.hidden_match,
        "consistency": None if b is None else b.consistency,
        "error": scored.error,
    }


def _bad_request(instance_id=None) -> dict:
    return {
        "instance_id": instance_id,
        "reward": None,
        "format": None,
        "answer": None,
        "hidden_match": None,
        "consistency": None,
        "error": BAD_REQUEST,
    }


def _score_request(store: InstanceStore, obj, mode: str) -> dict:
    if (
        not isinstance(obj, dict)
        or not isinstance(obj.get("instance_id"), str)
        or not isinstance(obj.get("response"), str)
    ):
        iid = obj.get("instance_id") if isinstance(obj, dict) else None
        return _bad_request(iid if isinstance(iid, str) else None)
    return reply_obj(score_response(store, obj["instance_id"], obj["response"], mode))


def serve_stdio(store: InstanceStore, mode: str = STRICT, stdin=None, stdout=None) -> None:
    """Line-delimited requests {"instance_id": ..., "response": ...} in,
    wire replies out; blank lines are skipped, EOF ends the loop."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            reply = _bad_request()
        else:
            reply = _score_request(store, obj, mode)
        stdout.write(canon.dumps(reply) + "\n")
        stdout.flush()


class _RewardHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # headers and body go out as separate sends; without TCP_NODELAY each
    # response stalls on the client's delayed ACK
    disable_nagle_algorithm = True
    store: InstanceStore
    mode: str

    def _send(self, status: int, obj) -> None:
        data = canon.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _read_body(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        return json.loads(raw.decode("utf-8"))

    def do_GET(self):
        if self.path == "/healthz":
            self._send(200, self.store.counts())
        else:
            self._send(404, {"error": "not_found"})

    def do_POST(self):
        try:
            body = self._read_body()
        except (ValueError, UnicodeDecodeError):
            self._send(400, _bad_request())
            return
        if self.path == "/reward":
            reply = _score_request(self.store, body, self.mode)
            if reply["error"] == BAD_REQUEST:
                self._send(400, reply)
            elif reply["error"] == "unknown_instance":
                self._send(404, reply)
            else:
                self._send(200, reply)
        elif self.path == "/reward/batch":
            if not isinstance(body, list):
                self._send(400, _bad_request())
                return
            self._send(200, [_score_request(self.store, item, self.mode) for item in body])
        else:
            self._send(404, {"error": "not_found"})

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)


def make_http_server(
    store: InstanceStore, mode: str = STRICT, host: str = "127.0.0.1", port: int = 0
) -> ThreadingHTTPServer:
    handler = type("BoundRewardHandler", (_RewardHandler,), {"store": store, "mode": mode})
    return ThreadingHTTPServer((host, port), handler)


def serve_http(store: InstanceStore, mode: str, host: str, port: int) -> None:
    server = make_http_server(store, mode, host, port)
    logger.info("reward service listening on %s:%s", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def start_background_server(store: InstanceStore, mode: str = STRICT, host: str = "127.0.0.1"):
    """Ephemeral-port server on a daemon thread; returns (server, base_url)."""
    server = make_http_server(store, mode, host, 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    addr, port = server.server_address[:2]
    return server, f"http://{addr}:{port}"
