"""2AFC study service over a gMAD pair set.

Schedules pairs per session in seeded random order with seeded left/right
placement, records forced choices idempotently by response id, accumulates
the win-count matrix, and serves a live Perron ranking. Every accepted
mutation is appended to a JSONL event log; replaying the log reconstructs
the exact service state (event sourcing), with optional periodic snapshots.
"""

import json
import mimetypes
import threading
import urllib.parse
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateResponse,
    InvalidPair,
    InvalidValue,
    UnknownImage,
    UnknownPairSet,
    UnknownSession,
)
from .gmad import GmadPair
from .ingest import CorpusManifest
from .ranking import ComparisonMatrix, RankingResult, dump_matrix, rank_comparisons

CHOICES = ("left", "right")


@dataclass
class PairSet:
    id: str
    pairs: list[GmadPair]
    manifest: CorpusManifest | None = None

    def __post_init__(self):
        if not self.pairs:
            raise InvalidValue(f"pair set {self.id!r} is empty")
        if self.manifest is not None:
            known = set(self.manifest.ids())
            for pair in self.pairs:
                for image_id in (pair.x, pair.y):
                    if image_id not in known:
                        raise UnknownImage(f"pair image {image_id!r} not in manifest")

    def model_ids(self) -> list[str]:
        return sorted({m for p in self.pairs for m in (p.attacker_model, p.defender_model)})


@dataclass(frozen=True)
class Response:
    choice: str
    response_ms: float
    response_id: str


@dataclass
class Session:
    id: str
    pair_set_id: str
    subject_id: str
    seed: int
    order: list[int]
    left_is_x: list[bool]
    responses: dict[int, Response] = field(default_factory=dict)

    @property
    def total_pairs(self) -> int:
        return len(self.order)

    @property
    def answered(self) -> int:
        return len(self.responses)


def _session_schedule(seed: int, n_pairs: int) -> tuple[list[int], list[bool]]:
    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(n_pairs)]
    left_is_x = [bool(b) for b in rng.integers(0, 2, size=n_pairs)]
    return order, left_is_x


class StudyService:
    """In-memory state plus the append-only event log."""

    def __init__(self, log_path=None, seed: int = 0,
                 snapshot_path=None, snapshot_every: int = 100):
        self._lock = threading.RLock()
        self.pair_sets: dict[str, PairSet] = {}
        self.sessions: dict[str, Session] = {}
        self.counts: dict[str, np.ndarray] = {}
        self._session_counter = 0
        self._events_since_snapshot = 0
        self._rng = np.random.default_rng(seed)
        self.log_path = Path(log_path) if log_path else None
        self.snapshot_path = Path(snapshot_path) if snapshot_path else None
        self.snapshot_every = snapshot_every

    # -- event log ----------------------------------------------------------

    def _append_event(self, event: dict) -> None:
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")
        self._events_since_snapshot += 1
        if (self.snapshot_path is not None
                and self._events_since_snapshot >= self.snapshot_every):
            self.write_snapshot(self.snapshot_path)
            self._events_since_snapshot = 0

    def apply_event(self, event: dict) -> None:
        """Re-apply a logged event (used by replay; does not re-log)."""
        kind = event["type"]
        if kind == "session_created":
            self._create_session_internal(
                event["pair_set_id"], event["subject_id"], event["seed"],
                session_id=event["session_id"],
            )
        elif kind == "response":
            self._record_internal(
                event["session_id"], event["pair_index"], event["choice"],
                event["response_ms"], event["response_id"],
            )
        else:
            raise InvalidValue(f"unknown event type {kind!r}")

    @classmethod
    def replay_log(cls, log_path, pair_sets: list[PairSet]) -> "StudyService":
        service = cls()
        for pair_set in pair_sets:
            service.add_pair_set(pair_set)
        with open(log_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    service.apply_event(json.loads(line))
        return service

    def write_snapshot(self, path) -> None:
        with self._lock:
            state = {
                "sessions": [
                    {
                        "id": s.id, "pair_set_id": s.pair_set_id,
                        "subject_id": s.subject_id, "seed": s.seed,
                        "responses": {
                            str(k): [r.choice, r.response_ms, r.response_id]
                            for k, r in sorted(s.responses.items())
                        },
                    }
                    for s in self.sessions.values()
                ],
                "matrices": {
                    ps_id: dump_matrix(self.export_matrix(ps_id))
                    for ps_id in sorted(self.pair_sets)
                },
            }
        Path(path).write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")

    # -- pair sets -----------------------------------------------------------

    def add_pair_set(self, pair_set: PairSet) -> None:
        with self._lock:
            if pair_set.id in self.pair_sets:
                raise InvalidValue(f"pair set {pair_set.id!r} already registered")
            self.pair_sets[pair_set.id] = pair_set
            m = len(pair_set.model_ids())
            self.counts[pair_set.id] = np.zeros((m, m), dtype=np.int64)

    def _pair_set(self, pair_set_id: str) -> PairSet:
        try:
            return self.pair_sets[pair_set_id]
        except KeyError:
            raise UnknownPairSet(f"unknown pair set {pair_set_id!r}") from None

    # -- sessions ------------------------------------------------------------

    def _create_session_internal(self, pair_set_id, subject_id, seed, session_id):
        pair_set = self._pair_set(pair_set_id)
        order, left_is_x = _session_schedule(seed, len(pair_set.pairs))
        session = Session(session_id, pair_set_id, subject_id, seed, order, left_is_x)
        self.sessions[session_id] = session
        self._session_counter = max(self._session_counter, int(session_id.split("-")[-1]))
        return session

    def create_session(self, pair_set_id: str, subject_id: str,
                       seed: int | None = None) -> dict:
        with self._lock:
            self._pair_set(pair_set_id)
            if seed is None:
                seed = int(self._rng.integers(0, 2**62))
            self._session_counter += 1
            session_id = f"sess-{self._session_counter:06d}"
            session = self._create_session_internal(pair_set_id, subject_id, seed, session_id)
            self._append_event({
                "type": "session_created", "session_id": session_id,
                "pair_set_id": pair_set_id, "subject_id": subject_id, "seed": seed,
            })
            return {"session_id": session_id, "total_pairs": session.total_pairs}

    def _session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(f"unknown session {session_id!r}") from None

    def find_session(self, pair_set_id: str, subject_id: str) -> Session | None:
        """Most recent session of a subject on a pair set, for resuming."""
        with self._lock:
            matches = [
                s for s in self.sessions.values()
                if s.pair_set_id == pair_set_id and s.subject_id == subject_id
            ]
            return max(matches, key=lambda s: s.id) if matches else None

    def next_pair(self, session_id: str) -> dict:
        """First unanswered pair in presentation order; stable until answered."""
        with self._lock:
            session = self._session(session_id)
            pair_set = self._pair_set(session.pair_set_id)
            for pair_index in session.order:
                if pair_index not in session.responses:
                    pair = pair_set.pairs[pair_index]
                    left, right = (
                        (pair.x, pair.y) if session.left_is_x[pair_index] else (pair.y, pair.x)
                    )
                    return {
                        "pair_index": pair_index,
                        "left_image": left,
                        "right_image": right,
                        "answered": session.answered,
                        "total_pairs": session.total_pairs,
                    }
            return {"done": True, "answered": session.answered,
                    "total_pairs": session.total_pairs}

    # -- responses -----------------------------------------------------------

    def _record_internal(self, session_id, pair_index, choice, response_ms, response_id):
        session = self._session(session_id)
        pair_set = self._pair_set(session.pair_set_id)
        if not isinstance(pair_index, int) or not 0 <= pair_index < len(pair_set.pairs):
            raise InvalidPair(f"pair index {pair_index!r} out of range")
        if choice not in CHOICES:
            raise InvalidPair(f"choice must be one of {CHOICES}, got {choice!r}")
        existing = session.responses.get(pair_index)
        if existing is not None:
            if existing.response_id == response_id:
                return {}  # idempotent replay
            raise DuplicateResponse(
                f"pair {pair_index} already answered with response {existing.response_id!r}"
            )
        session.responses[pair_index] = Response(choice, float(response_ms), response_id)
        pair = pair_set.pairs[pair_index]
        x_won = (choice == "left") == session.left_is_x[pair_index]
        models = pair_set.model_ids()
        i = models.index(pair.attacker_model)
        j = models.index(pair.defender_model)
        winner, loser = (i, j) if x_won else (j, i)
        self.counts[session.pair_set_id][winner, loser] += 1
        return {(models[winner], models[loser]): 1}

    def record_response(self, session_id: str, pair_index: int, choice: str,
                        response_ms: float, response_id: str) -> dict:
        """Counts the forced choice once; replaying the same response_id is a no-op."""
        with self._lock:
            delta = self._record_internal(session_id, pair_index, choice,
                                          response_ms, response_id)
            if delta:
                self._append_event({
                    "type": "response", "session_id": session_id,
                    "pair_index": pair_index, "choice": choice,
                    "response_ms": float(response_ms), "response_id": response_id,
                })
            return delta

    # -- aggregation ---------------------------------------------------------

    def export_matrix(self, pair_set_id: str) -> ComparisonMatrix:
        with self._lock:
            pair_set = self._pair_set(pair_set_id)
            return ComparisonMatrix(pair_set.model_ids(), self.counts[pair_set_id].copy())

    def live_ranking(self, pair_set_id: str, epsilon: float = 1.0,
                     tol: float = 1e-10) -> RankingResult:
        return rank_comparisons(self.export_matrix(pair_set_id), epsilon=epsilon, tol=tol)

    def total_responses(self, pair_set_id: str) -> int:
        return self.export_matrix(pair_set_id).total()


# ---------------------------------------------------------------------------
# HTTP wire protocol

_STATUS_OF = {
    "UnknownSession": 404,
    "UnknownPairSet": 404,
    "UnknownImage": 404,
    "DuplicateResponse": 409,
    "InvalidPair": 422,
    "InvalidValue": 422,
}


class StudyRequestHandler(BaseHTTPRequestHandler):
    service: StudyService  # injected by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_error_for(self, exc: Exception) -> None:
        name = type(exc).__name__
        status = _STATUS_OF.get(name, 400)
        self._send_json(status, {"error": name, "detail": str(exc)})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise InvalidValue("request body is not valid JSON") from None
        if not isinstance(payload, dict):
            raise InvalidValue("request body must be a JSON object")
        return payload

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_POST(self):
        try:
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            payload = self._read_body()
            if parts == ["api", "sessions"]:
                for key in ("pair_set_id", "subject_id"):
                    if key not in payload:
                        raise InvalidValue(f"missing field {key!r}")
                created = self.service.create_session(
                    payload["pair_set_id"], payload["subject_id"], payload.get("seed")
                )
                self._send_json(201, created)
                return
            if len(parts) == 4 and parts[:2] == ["api", "sessions"] and parts[3] == "responses":
                for key in ("pair_index", "choice", "response_ms", "response_id"):
                    if key not in payload:
                        raise InvalidValue(f"missing field {key!r}")
                self.service.record_response(
                    parts[2], payload["pair_index"], payload["choice"],
                    payload["response_ms"], payload["response_id"],
                )
                self._send_json(200, {"accepted": True})
                return
            self._send_json(404, {"error": "NotFound", "detail": self.path})
        except Exception as exc:  # surface every failure as a status code
            self._send_error_for(exc)

    def do_GET(self):
        try:
            url = urllib.parse.urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            query = urllib.parse.parse_qs(url.query)
            if len(parts) == 4 and parts[:2] == ["api", "sessions"] and parts[3] == "next":
                payload = self.service.next_pair(parts[2])
                if "pair_index" in payload:
                    payload = {
                        "pair_index": payload["pair_index"],
                        "left_image_url": f"/images/{payload['left_image']}",
                        "right_image_url": f"/images/{payload['right_image']}",
                        "answered": payload["answered"],
                        "total_pairs": payload["total_pairs"],
                    }
                self._send_json(200, payload)
                return
            if len(parts) == 4 and parts[:2] == ["api", "pairsets"] and parts[3] == "matrix":
                matrix = self.service.export_matrix(parts[2])
                body = dump_matrix(matrix).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "text/csv")
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(body)
                return
            if len(parts) == 4 and parts[:2] == ["api", "pairsets"] and parts[3] == "ranking":
                epsilon = float(query.get("epsilon", ["1.0"])[0])
                tol = float(query.get("tol", ["1e-10"])[0])
                result = self.service.live_ranking(parts[2], epsilon=epsilon, tol=tol)
                ranks = result.rank_of()
                weights = dict(zip(result.model_ids, result.weights))
                self._send_json(200, {"models": [
                    {"id": m, "weight": float(weights[m]), "rank": ranks[m]}
                    for m in result.order()
                ]})
                return
            if len(parts) == 2 and parts[0] == "images":
                self._serve_image(parts[1])
                return
            self._send_json(404, {"error": "NotFound", "detail": self.path})
        except Exception as exc:
            self._send_error_for(exc)

    def _serve_image(self, image_id: str) -> None:
        path = None
        for pair_set in self.service.pair_sets.values():
            if pair_set.manifest is not None:
                try:
                    path = pair_set.manifest.path_of(image_id)
                    break
                except UnknownImage:
                    continue
        if path is None or not Path(path).is_file():
            raise UnknownImage(f"no displayable file for image {image_id!r}")
        data = Path(path).read_bytes()
        content_type = mimetypes.guess_type(path)[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)


def make_server(service: StudyService, host: str = "127.0.0.1",
                port: int = 8765) -> ThreadingHTTPServer:
    handler = type("BoundStudyHandler", (StudyRequestHandler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)
