"""Pre-execution gating sidecar.

Speaks newline-delimited JSON over stdin/stdout or a local TCP port. Each
request carries one proposed turn; the response returns the risk score and
the allow/restrict/block decision before the agent executes the action.
Block decisions are appended to an audit log.

Per-session extractor state is kept in memory and expires after an idle
bound. The model and profile are immutable; a process-wide lock serializes
state updates, so interleaved sessions behave exactly like serial replay.
"""

from __future__ import annotations

import json
import socketserver
import threading
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Optional

from .features import BenignProfile, FeatureExtractor, named_vector
from .gbdt import GbdtModel
from .policy import Thresholds, decide
from .trace import DEFAULT_BENIGN_DOMAIN, ProposedAction, Tool, Turn, is_sensitive_read

DEFAULT_IDLE_TIMEOUT_S = 900.0


class _LiveSession:
    __slots__ = ("state", "next_index", "last_seen")

    def __init__(self, state, now: float):
        self.state = state
        self.next_index = 1
        self.last_seen = now


class Gateway:
    """Scoring core shared by the stdio and TCP transports."""

    def __init__(
        self,
        model: GbdtModel,
        profile: BenignProfile,
        thresholds: Thresholds,
        audit_path=None,
        idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
        include_features: bool = False,
        benign_domain: str = DEFAULT_BENIGN_DOMAIN,
        clock=time.monotonic,
    ):
        self.model = model
        self.extractor = FeatureExtractor(profile, benign_domain)
        self.thresholds = thresholds
        self.idle_timeout_s = idle_timeout_s
        self.include_features = include_features
        self._clock = clock
        self._sessions: dict[str, _LiveSession] = {}
        self._lock = threading.Lock()
        self._audit_path = Path(audit_path) if audit_path is not None else None
        self._audit_fp: Optional[IO[str]] = None
        if self._audit_path is not None:
            self._audit_fp = open(self._audit_path, "a", encoding="utf-8", newline="\n")

    def close(self) -> None:
        if self._audit_fp is not None:
            self._audit_fp.close()
            self._audit_fp = None

    # -- request handling ---------------------------------------------------

    def handle_line(self, line: str) -> str:
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be a json object")
        except (json.JSONDecodeError, ValueError):
            return json.dumps({"error": "malformed-json", "line": line.strip()[:200]})
        return json.dumps(self.handle(request))

    def handle(self, request: dict) -> dict:
        try:
            session_id = request["session_id"]
            turn_obj = request["turn"]
            index = int(turn_obj["index"])
            prompt = turn_obj["prompt"]
            tool_name = turn_obj["tool"]
            argument = turn_obj.get("argument", "")
        except (KeyError, TypeError, ValueError):
            return {"error": "malformed-request", "expected": ["session_id", "turn"]}
        try:
            tool = Tool(tool_name)
        except ValueError:
            return {"error": "unknown-tool", "session_id": session_id, "tool": tool_name}

        with self._lock:
            self._expire_idle()
            live = self._sessions.get(session_id)
            if live is None:
                live = _LiveSession(self.extractor.new_state(), self._clock())
                self._sessions[session_id] = live
            if index != live.next_index:
                return {
                    "error": "non-contiguous-turn",
                    "session_id": session_id,
                    "expected_index": live.next_index,
                    "got_index": index,
                }
            try:
                turn = Turn(
                    index=index,
                    prompt=prompt,
                    external_content=turn_obj.get("external_content"),
                    action=ProposedAction(tool=tool, argument=argument),
                    denied=bool(turn_obj.get("denied", False)),
                    failed=bool(turn_obj.get("failed", False)),
                    sensitive_resource=bool(turn_obj.get("sensitive_resource", False)),
                )
            except ValueError as exc:
                return {"error": "invalid-turn", "session_id": session_id, "detail": str(exc)}
            if not turn.sensitive_resource and is_sensitive_read(turn):
                turn = Turn(
                    index=turn.index,
                    prompt=turn.prompt,
                    external_content=turn.external_content,
                    action=turn.action,
                    denied=turn.denied,
                    failed=turn.failed,
                    sensitive_resource=True,
                )
            start = time.perf_counter()
            features = self.extractor.update(live.state, turn)
            risk = self.model.predict_one(features)
            decision = decide(risk, self.thresholds)
            latency_us = int((time.perf_counter() - start) * 1e6)
            live.next_index += 1
            live.last_seen = self._clock()
            response: dict = {
                "session_id": session_id,
                "turn_index": index,
                "risk": risk,
                "decision": decision.verdict,
                "latency_us": latency_us,
            }
            if self.include_features:
                response["features"] = named_vector(features)
            if decision.verdict == "block":
                self._audit(session_id, index, risk, decision.verdict)
        return response

    def _expire_idle(self) -> None:
        if not self._sessions:
            return
        now = self._clock()
        stale = [
            sid for sid, live in self._sessions.items()
            if now - live.last_seen > self.idle_timeout_s
        ]
        for sid in stale:
            del self._sessions[sid]

    def _audit(self, session_id: str, turn_index: int, risk: float, verdict: str) -> None:
        if self._audit_fp is None:
            return
        record = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "session_id": session_id,
            "turn_index": turn_index,
            "risk": risk,
            "decision": verdict,
        }
        self._audit_fp.write(json.dumps(record) + "\n")
        self._audit_fp.flush()


def serve_stdio(gateway: Gateway, stdin: IO[str], stdout: IO[str]) -> None:
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(gateway.handle_line(line))
        stdout.write("\n")
        stdout.flush()


class _TCPHandler(socketserver.StreamRequestHandler):
    def handle(self):
        gateway: Gateway = self.server.gateway  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            response = gateway.handle_line(line)
            self.wfile.write(response.encode("utf-8") + b"\n")


class GatewayServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], gateway: Gateway):
        super().__init__(address, _TCPHandler)
        self.gateway = gateway


def serve_tcp(gateway: Gateway, host: str = "127.0.0.1", port: int = 0) -> GatewayServer:
    """Start the TCP transport; returns the running server (caller owns it)."""
    return GatewayServer((host, port), gateway)


def turn_to_request(session_id: str, turn: Turn) -> dict:
    """Wire request replaying a recorded turn."""
    obj: dict = {"index": turn.index, "prompt": turn.prompt}
    if turn.external_content is not None:
        obj["external_content"] = turn.external_content
    obj["tool"] = turn.action.tool.value
    obj["argument"] = turn.action.argument
    if turn.denied:
        obj["denied"] = True
    if turn.failed:
        obj["failed"] = True
    if turn.sensitive_resource:
        obj["sensitive_resource"] = True
    return {"session_id": session_id, "turn": obj}


def measure_service_latency(
    gateway: Gateway, session_groups, host: str = "127.0.0.1"
) -> dict:
    """Drive the TCP transport with one client thread per session group.

    Returns p50/p95 of the server-side scoring path (latency_us) and of the
    client round-trip, in milliseconds.
    """
    import socket
    from statistics import median

    server = serve_tcp(gateway, host=host, port=0)
    port = server.server_address[1]
    server_thread = threading.Thread(target=server.serve_forever, daemon=True)
    server_thread.start()

    service_us: list[int] = []
    rtt_s: list[float] = []
    lock = threading.Lock()
    errors: list[str] = []

    def worker(sessions) -> None:
        local_us: list[int] = []
        local_rtt: list[float] = []
        try:
            with socket.create_connection((host, port)) as conn:
                fp = conn.makefile("rw", encoding="utf-8", newline="\n")
                for session in sessions:
                    for turn in session.turns:
                        request = turn_to_request(session.session_id, turn)
                        start = time.perf_counter()
                        fp.write(json.dumps(request) + "\n")
                        fp.flush()
                        line = fp.readline()
                        local_rtt.append(time.perf_counter() - start)
                        response = json.loads(line)
                        if "error" in response:
                            raise RuntimeError(f"service error: {response}")
                        local_us.append(response["latency_us"])
        except Exception as exc:  # surfaced to the caller below
            with lock:
                errors.append(str(exc))
            return
        with lock:
            service_us.extend(local_us)
            rtt_s.extend(local_rtt)

    threads = [threading.Thread(target=worker, args=(group,)) for group in session_groups]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server.shutdown()
    server.server_close()
    if errors:
        raise RuntimeError("; ".join(errors[:3]))
    return {
        "concurrency": len(list(session_groups)),
        "n_requests": len(service_us),
        "service_p50_ms": median(service_us) / 1e3,
        "service_p95_ms": sorted(service_us)[min(len(service_us) - 1, int(0.95 * len(service_us)))] / 1e3,
        "client_rtt_p50_ms": median(rtt_s) * 1e3,
        "client_rtt_p95_ms": sorted(rtt_s)[min(len(rtt_s) - 1, int(0.95 * len(rtt_s)))] * 1e3,
    }
