"""HTTP service: server-sent gesture events, state/config endpoints, static UI.

One-directional SSE fan-out with per-client bounded queues; a slow client is
disconnected rather than ever blocking the pipeline.
"""

from __future__ import annotations

import json
import mimetypes
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .evaluation import NmsConfig
from .pipeline import ActionMapping, GestureEvent, OBJECT_VIEWER_MAPPING, map_action

CLIENT_QUEUE_SIZE = 256


class PortInUse(OSError):
    pass


class Broadcaster:
    """Fan-out of events to any number of subscriber queues."""

    def __init__(self):
        self._lock = threading.Lock()
        self._clients = {}
        self._next_id = 0

    def subscribe(self) -> tuple:
        q = queue.Queue(maxsize=CLIENT_QUEUE_SIZE)
        with self._lock:
            cid = self._next_id
            self._next_id += 1
            self._clients[cid] = q
        return cid, q

    def unsubscribe(self, cid: int) -> None:
        with self._lock:
            self._clients.pop(cid, None)

    def publish(self, item) -> None:
        with self._lock:
            clients = list(self._clients.items())
        for cid, q in clients:
            try:
                q.put_nowait(item)
            except queue.Full:
                # slow client: cut it loose, never block the pipeline
                self.unsubscribe(cid)

    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)


class GestureService:
    """Owns the broadcaster, shared config, and the HTTP server."""

    def __init__(self, port: int, nms_cfg: NmsConfig | None = None,
                 mapping: ActionMapping = OBJECT_VIEWER_MAPPING,
                 model_id: str = "unknown", detector_mode: str = "adaptive",
                 ui_dir=None, host: str = "127.0.0.1"):
        self.nms_cfg = nms_cfg or NmsConfig()
        self.mapping = mapping
        self.model_id = model_id
        self.detector_mode = detector_mode
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.broadcaster = Broadcaster()
        self.started_at = time.time()
        self.events_emitted = 0
        self._lock = threading.Lock()

        handler = _make_handler(self)
        try:
            self.httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise PortInUse(f"port {port}: {exc}") from exc
        self.port = self.httpd.server_address[1]
        self._thread = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def publish_event(self, event: GestureEvent) -> None:
        payload = {
            "seq": event.seq,
            "t": round(float(event.t), 4),
            "gesture": event.gesture,
            "p": round(float(event.p), 4),
            "probs": [round(float(x), 4) for x in np.asarray(event.probs)],
            "action": map_action(event, self.mapping),
        }
        with self._lock:
            self.events_emitted += 1
        self.broadcaster.publish(json.dumps(payload))

    def consume(self, events) -> None:
        """Drain an event iterable into the broadcaster (blocking)."""
        for event in events:
            self.publish_event(event)

    def consume_in_thread(self, events) -> threading.Thread:
        t = threading.Thread(target=self.consume, args=(events,), daemon=True)
        t.start()
        return t

    def state(self) -> dict:
        with self._lock:
            emitted = self.events_emitted
        return {
            "model_id": self.model_id,
            "epsilon": self.nms_cfg.epsilon,
            "uptime_s": round(time.time() - self.started_at, 3),
            "events_emitted": emitted,
            "detector_mode": self.detector_mode,
        }

    def set_epsilon(self, epsilon: float) -> None:
        if not (0 < epsilon <= 1):
            raise ValueError(f"epsilon must be in (0, 1], got {epsilon}")
        if epsilon < self.nms_cfg.secondary_epsilon:
            self.nms_cfg.secondary_epsilon = epsilon
        self.nms_cfg.epsilon = epsilon


def _make_handler(service: GestureService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # tests stay quiet
            pass

        def _send_json(self, doc, status=200):
            body = json.dumps(doc).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/health":
                body = b"ok"
                self.send_response(200)
                self.send_header("Content-Type", "text/plain")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            elif self.path == "/state":
                self._send_json(service.state())
            elif self.path == "/events":
                self._serve_events()
            elif self.path == "/ui" or self.path.startswith("/ui/"):
                self._serve_static()
            else:
                self._send_json({"error": "not found"}, status=404)

        def do_POST(self):
            if self.path != "/config":
                self._send_json({"error": "not found"}, status=404)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                doc = json.loads(self.rfile.read(length) or b"{}")
                if not isinstance(doc, dict):
                    raise ValueError("config body must be a JSON object")
                if "epsilon" in doc:
                    service.set_epsilon(float(doc["epsilon"]))
            except (ValueError, TypeError, json.JSONDecodeError) as exc:
                self._send_json({"error": str(exc)}, status=400)
                return
            self._send_json({"ok": True, "epsilon": service.nms_cfg.epsilon})

        def _serve_events(self):
            cid, q = service.broadcaster.subscribe()
            try:
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Connection", "keep-alive")
                self.end_headers()
                while True:
                    try:
                        item = q.get(timeout=15.0)
                        self.wfile.write(f"data: {item}\n\n".encode())
                        self.wfile.flush()
                    except queue.Empty:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                service.broadcaster.unsubscribe(cid)

        def _serve_static(self):
            if service.ui_dir is None:
                self._send_json({"error": "no UI assets configured"}, status=404)
                return
            rel = self.path[len("/ui"):].lstrip("/") or "index.html"
            target = (service.ui_dir / rel).resolve()
            root = service.ui_dir.resolve()
            if root not in target.parents and target != root:
                self._send_json({"error": "forbidden"}, status=403)
                return
            if not target.is_file():
                self._send_json({"error": "not found"}, status=404)
                return
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def serve(port: int, events, **kwargs) -> GestureService:
    """Start the HTTP service and stream `events` (an iterable of
    GestureEvents) to subscribers; returns the running service handle."""
    service = GestureService(port=port, **kwargs)
    service.start()
    if events is not None:
        service.consume_in_thread(events)
    return service
