"""JSON-over-HTTP service exposing the dedup pipeline.

Endpoints: POST /products, /search, /score-pair, /dedupe; GET /stats,
/healthz. Errors return structured ``{"code", "message"}`` bodies.

Concurrency contract: every request handler captures the current store
generation once; mutating requests build a fresh generation under a lock
and swap it in atomically, so no request ever observes a half-built
index.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .pipeline import DEFAULT_THRESHOLD, DEFAULT_TOP_N, CatalogStore


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class DedupService:
    """Store wrapper with atomic generation swaps; the HTTP layer is below."""

    def __init__(self, store: CatalogStore):
        self._store = store
        self._write_lock = threading.Lock()

    @property
    def store(self) -> CatalogStore:
        return self._store

    def ingest_products(self, objs: list[dict]) -> dict:
        if not isinstance(objs, list):
            raise ApiError(400, "bad_request", "'products' must be a list")
        with self._write_lock:
            new_store, report = self._store.with_products(objs)
            self._store = new_store  # atomic generation swap
        return {
            "ingested": report.count,
            "rejected": [{"line": line, "reason": reason} for line, reason in report.rejects],
        }

    def search(self, body: dict) -> dict:
        store = self._store
        top_n = int(body.get("top_n", DEFAULT_TOP_N))
        nprobe = body.get("nprobe")
        nprobe = int(nprobe) if nprobe is not None else None
        try:
            if body.get("id") is not None:
                results = store.find_candidates(str(body["id"]), top_n=top_n, nprobe=nprobe)
            elif body.get("vector") is not None:
                if store.text_index is None:
                    raise RuntimeError("index not built")
                results = store.text_index.search(body["vector"], top_n=top_n, nprobe=nprobe)
            else:
                raise ApiError(400, "bad_request", "provide 'id' or 'vector'")
        except KeyError as exc:
            raise ApiError(404, "unknown_id", str(exc)) from exc
        except RuntimeError as exc:
            raise ApiError(409, "not_ready", str(exc)) from exc
        except ValueError as exc:
            raise ApiError(400, "bad_request", str(exc)) from exc
        return {"results": [{"id": r.id, "score": r.score, "rank": r.rank} for r in results]}

    def score_pair(self, body: dict) -> dict:
        store = self._store
        try:
            decision = store.score_pair(
                str(body["id_a"]), str(body["id_b"]),
                threshold=float(body.get("threshold", DEFAULT_THRESHOLD)),
            )
        except KeyError as exc:
            missing = exc.args[0] if exc.args else ""
            if missing in ("id_a", "id_b"):
                raise ApiError(400, "bad_request", f"missing {missing!r}") from exc
            raise ApiError(404, "unknown_id", str(exc)) from exc
        except RuntimeError as exc:
            raise ApiError(409, "not_ready", str(exc)) from exc
        return _decision_json(decision)

    def dedupe(self, body: dict) -> dict:
        store = self._store
        try:
            groups, decisions = store.dedupe_catalog(
                top_n=int(body.get("top_n", DEFAULT_TOP_N)),
                threshold=float(body.get("threshold", DEFAULT_THRESHOLD)),
                nprobe=int(body["nprobe"]) if body.get("nprobe") is not None else None,
            )
        except RuntimeError as exc:
            raise ApiError(409, "not_ready", str(exc)) from exc
        return {
            "groups": [{"representative": g.representative, "members": list(g.members)} for g in groups],
            "decisions": [_decision_json(d) for d in decisions],
        }

    def stats(self) -> dict:
        return self._store.stats()


def _decision_json(d) -> dict:
    return {
        "id_a": d.id_a, "id_b": d.id_b, "probability": d.probability, "label": d.label,
        "retrieval_rank": d.retrieval_rank, "retrieval_score": d.retrieval_score,
    }


class _Handler(BaseHTTPRequestHandler):
    service: DedupService  # injected by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, payload: dict) -> None:
        raw = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        try:
            obj = json.loads(self.rfile.read(length).decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ApiError(400, "bad_request", f"invalid json body: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise ApiError(400, "bad_request", "body must be a JSON object")
        return obj

    def _dispatch(self, method: str) -> None:
        try:
            route = (method, self.path.split("?")[0])
            if route == ("GET", "/healthz"):
                self._send(200, {"status": "ok"})
            elif route == ("GET", "/stats"):
                self._send(200, self.service.stats())
            elif route == ("POST", "/products"):
                body = self._body()
                self._send(200, self.service.ingest_products(body.get("products", [])))
            elif route == ("POST", "/search"):
                self._send(200, self.service.search(self._body()))
            elif route == ("POST", "/score-pair"):
                self._send(200, self.service.score_pair(self._body()))
            elif route == ("POST", "/dedupe"):
                self._send(200, self.service.dedupe(self._body()))
            else:
                self._send(404, {"code": "not_found", "message": f"no route {method} {self.path}"})
        except ApiError as exc:
            self._send(exc.status, {"code": exc.code, "message": exc.message})
        except Exception as exc:  # noqa: BLE001 - last-resort structured 500
            self._send(500, {"code": "internal", "message": str(exc)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


def make_server(store: CatalogStore, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Bind a threading HTTP server; port 0 picks a free port."""
    service = DedupService(store)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.service = service  # type: ignore[attr-defined]
    return server


def serve(store: CatalogStore, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(store, host, port)
    print(f"ddup service listening on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
