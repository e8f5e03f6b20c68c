"""Listening-test HTTP service over the stdlib http.server machinery.

Serves confusion-group items to token-identified listeners, appends their
4-option responses to a JSONL log, and reports live option proportions. The
report endpoint delegates to perceptual.tally so offline and online scoring
can never drift apart.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .perceptual import (ConfusionGroup, ResponseRecord, append_response,
                         option_labels, read_responses, scores_to_json, tally)


class UnknownListenerError(KeyError):
    pass


class ValidationError(ValueError):
    pass


def _listener_seed(token: str) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")


class ListeningService:
    """Session bookkeeping plus the append-only response log.

    Within a group, items keep the manifest order; when a listener has
    several groups, the group order is shuffled per listener token.
    """

    def __init__(self, groups: list[ConfusionGroup], sessions: dict[str, list[str]],
                 log_path: str | Path, audio_dir: str | Path):
        self.groups = {g.pattern: g for g in groups}
        if len(self.groups) != len(groups):
            raise ValueError("duplicate group patterns")
        for token, patterns in sessions.items():
            missing = [p for p in patterns if p not in self.groups]
            if missing:
                raise ValueError(f"session {token!r} references unknown groups {missing}")
        self.sessions = {t: list(p) for t, p in sessions.items()}
        self.log_path = Path(log_path)
        self.audio_dir = Path(audio_dir)
        self._lock = threading.Lock()
        self._last_ts = 0.0
        self._answered: dict[tuple[str, str], int] = {}
        self._items = {i.item_id: (g.pattern, i)
                       for g in groups for i in g.items}
        if self.log_path.exists():
            for rec in read_responses(self.log_path):
                self._answered[(rec.listener_id, rec.item_id)] = rec.option
                self._last_ts = max(self._last_ts, rec.timestamp)

    # -- session logic ----------------------------------------------------

    def item_sequence(self, token: str) -> list[str]:
        if token not in self.sessions:
            raise UnknownListenerError(token)
        patterns = list(self.sessions[token])
        rng = np.random.default_rng(_listener_seed(token))
        order = rng.permutation(len(patterns))
        out: list[str] = []
        for i in order:
            out.extend(item.item_id for item in self.groups[patterns[i]].items)
        return out

    def session_state(self, token: str) -> dict:
        sequence = self.item_sequence(token)
        answered = sum((token, iid) in self._answered for iid in sequence)
        return {
            "listener_id": token,
            "total": len(sequence),
            "answered": answered,
            "done": answered == len(sequence),
        }

    def next_item(self, token: str) -> dict:
        sequence = self.item_sequence(token)
        answered = 0
        pending = None
        for iid in sequence:
            if (token, iid) in self._answered:
                answered += 1
            elif pending is None:
                pending = iid
        if pending is None:
            return {"done": True, "progress": {"answered": answered, "total": len(sequence)}}
        pattern, _item = self._items[pending]
        return {
            "done": False,
            "item_id": pending,
            "audio_url": f"/audio/{pending}",
            "options": option_labels(pattern),
            "progress": {"answered": answered, "total": len(sequence)},
        }

    def submit(self, token: str, item_id: str, option: int) -> dict:
        if token not in self.sessions:
            raise UnknownListenerError(token)
        if isinstance(option, bool) or not isinstance(option, int) or option not in (1, 2, 3, 4):
            raise ValidationError(f"option must be an integer in 1..4, got {option!r}")
        if item_id not in set(self.item_sequence(token)):
            raise ValidationError(f"item {item_id!r} is not assigned to this listener")
        with self._lock:
            ts = max(time.time(), self._last_ts + 1e-6)
            self._last_ts = ts
            append_response(self.log_path, ResponseRecord(
                listener_id=token, item_id=item_id, option=option, timestamp=ts))
            self._answered[(token, item_id)] = option
        state = self.session_state(token)
        state["accepted"] = True
        return state

    def audio_file(self, item_id: str) -> Path:
        if item_id not in self._items:
            raise UnknownListenerError(item_id)
        _pattern, item = self._items[item_id]
        return self.audio_dir / item.audio_path

    def report(self) -> dict:
        with self._lock:  # snapshot: the log up to its current end
            records = read_responses(self.log_path) if self.log_path.exists() else []
        scores = tally(records, list(self.groups.values()))
        return scores_to_json(scores)


# -- HTTP wiring -----------------------------------------------------------


def _handler_class(service: ListeningService, static_dir: Path | None,
                   quiet: bool) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            if not quiet:
                super().log_message(fmt, *args)

        def _send_json(self, payload: dict, status: int = 200) -> None:
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_error_json(self, status: int, message: str) -> None:
            self._send_json({"error": message}, status=status)

        def do_GET(self):
            try:
                if self.path.startswith("/api/session/"):
                    token = self.path[len("/api/session/"):]
                    self._send_json(service.session_state(token))
                elif self.path.startswith("/api/next/"):
                    token = self.path[len("/api/next/"):]
                    self._send_json(service.next_item(token))
                elif self.path == "/api/report":
                    self._send_json(service.report())
                elif self.path.startswith("/audio/"):
                    self._send_audio(self.path[len("/audio/"):])
                elif static_dir is not None:
                    self._send_static(self.path)
                else:
                    self._send_error_json(404, "unknown path")
            except UnknownListenerError as exc:
                self._send_error_json(404, f"unknown: {exc.args[0]}")
            except ValidationError as exc:
                self._send_error_json(400, str(exc))

        def _send_audio(self, item_id: str) -> None:
            path = service.audio_file(item_id)
            if not path.is_file():
                self._send_error_json(404, f"audio missing for {item_id}")
                return
            data = path.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", "audio/wav")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _send_static(self, path: str) -> None:
            rel = path.lstrip("/") or "index.html"
            target = (static_dir / rel).resolve()
            if static_dir not in target.parents and target != static_dir:
                self._send_error_json(404, "unknown path")
                return
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                self._send_error_json(404, "unknown path")
                return
            types = {".html": "text/html; charset=utf-8", ".js": "text/javascript",
                     ".css": "text/css", ".wav": "audio/wav", ".svg": "image/svg+xml"}
            data = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", types.get(target.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path != "/api/response":
                self._send_error_json(404, "unknown path")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                body = json.loads(raw.decode("utf-8"))
                token = body["token"]
                item_id = body["item_id"]
                option = body["option"]
            except (ValueError, KeyError, UnicodeDecodeError) as exc:
                self._send_error_json(400, f"bad request body: {exc}")
                return
            try:
                self._send_json(service.submit(token, item_id, option))
            except UnknownListenerError as exc:
                self._send_error_json(404, f"unknown: {exc.args[0]}")
            except ValidationError as exc:
                self._send_error_json(400, str(exc))

    return Handler


def make_server(service: ListeningService, host: str = "127.0.0.1", port: int = 8765,
                static_dir: str | Path | None = None, quiet: bool = True) -> ThreadingHTTPServer:
    static = Path(static_dir).resolve() if static_dir is not None else None
    handler = _handler_class(service, static, quiet)
    return ThreadingHTTPServer((host, port), handler)
