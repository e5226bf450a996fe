import io
import json
import socket
import threading

import pytest

from agentgate.baselines import GbdtDetector, score_session
from agentgate.policy import decide
from agentgate.service import (
    Gateway,
    measure_service_latency,
    serve_stdio,
    serve_tcp,
    turn_to_request,
)
from agentgate.trace import LABEL_ADVERSARIAL


@pytest.fixture
def gateway(small_model, small_profile, small_calibration, tmp_path):
    gw = Gateway(
        small_model,
        small_profile,
        small_calibration.thresholds,
        audit_path=tmp_path / "audit.jsonl",
    )
    yield gw
    gw.close()


def replay(gw, session, session_id=None):
    responses = []
    for turn in session.turns:
        request = turn_to_request(session_id or session.session_id, turn)
        responses.append(gw.handle(request))
    return responses


# --- scoring path ------------------------------------------------------------

def test_response_schema(gateway, small_corpus):
    session = small_corpus.test[0]
    response = replay(gateway, session)[0]
    assert list(response.keys()) == ["session_id", "turn_index", "risk", "decision", "latency_us"]
    assert response["session_id"] == session.session_id
    assert response["turn_index"] == 1
    assert 0.0 < response["risk"] < 1.0
    assert response["decision"] in ("allow", "restrict", "block")
    assert isinstance(response["latency_us"], int)


def test_replay_matches_offline_pipeline(gateway, small_corpus, small_model, small_profile, small_calibration):
    detector = GbdtDetector(small_model, small_profile)
    for session in small_corpus.test[:40]:
        responses = replay(gateway, session)
        offline = score_session(detector, session)
        for response, risk in zip(responses, offline):
            assert abs(response["risk"] - risk) <= 1e-12
            assert response["decision"] == decide(risk, small_calibration.thresholds).verdict


def test_attack_session_blocked_at_unsafe_turn(gateway, small_corpus, small_model, small_profile, small_calibration):
    detector = GbdtDetector(small_model, small_profile)
    # pick an attack the offline pipeline blocks in time; the service must agree
    for session in small_corpus.test:
        if session.label != LABEL_ADVERSARIAL:
            continue
        scores = score_session(detector, session)
        blocked_at = [
            t for t, risk in enumerate(scores[: session.unsafe_turn], start=1)
            if risk >= small_calibration.thresholds.tau2
        ]
        if blocked_at:
            responses = replay(gateway, session)
            assert responses[blocked_at[0] - 1]["decision"] == "block"
            return
    pytest.fail("no blockable attack session found in the test split")


def test_benign_fresh_fetch_allows(gateway):
    response = gateway.handle(
        {
            "session_id": "fresh",
            "turn": {
                "index": 1,
                "prompt": "Fetch https://news.example/tech-briefing so we can review it.",
                "tool": "web_fetch",
                "argument": "https://news.example/tech-briefing",
            },
        }
    )
    assert response["decision"] == "allow"


def test_sensitive_path_heuristic_fills_missing_flag(gateway):
    response = gateway.handle(
        {
            "session_id": "heur",
            "turn": {
                "index": 1,
                "prompt": "Read /secrets/keys.txt and give me the gist.",
                "tool": "read_local_file",
                "argument": "/secrets/keys.txt",
            },
        }
    )
    assert response["risk"] > 0.0  # scored, not errored; flag derived from the path


# --- protocol errors -----------------------------------------------------------

def test_non_contiguous_turn(gateway, small_corpus):
    session = small_corpus.test[0]
    gateway.handle(turn_to_request("s1", session.turns[0]))
    out_of_order = turn_to_request("s1", session.turns[0])
    out_of_order["turn"]["index"] = 3
    response = gateway.handle(out_of_order)
    assert response["error"] == "non-contiguous-turn"
    assert response["expected_index"] == 2
    assert response["got_index"] == 3


def test_unknown_tool(gateway):
    response = gateway.handle(
        {"session_id": "x", "turn": {"index": 1, "prompt": "p", "tool": "teleport", "argument": "y"}}
    )
    assert response["error"] == "unknown-tool"


def test_malformed_json_line_echoes(gateway):
    response = json.loads(gateway.handle_line("{not json"))
    assert response["error"] == "malformed-json"
    assert response["line"] == "{not json"


def test_malformed_request_shape(gateway):
    response = gateway.handle({"turn": {"index": 1}})
    assert response["error"] == "malformed-request"


# --- audit log -------------------------------------------------------------------

def test_audit_log_one_record_per_block(gateway, small_corpus, tmp_path):
    blocks = 0
    for session in small_corpus.test[:60]:
        for response in replay(gateway, session):
            if response["decision"] == "block":
                blocks += 1
    assert blocks > 0
    records = [
        json.loads(line)
        for line in (tmp_path / "audit.jsonl").read_text().splitlines()
    ]
    assert len(records) == blocks
    for record in records:
        assert set(record) == {"timestamp", "session_id", "turn_index", "risk", "decision"}
        assert record["decision"] == "block"


# --- session lifecycle --------------------------------------------------------------

def test_session_isolation_under_interleaving(gateway, small_corpus, small_model, small_profile):
    a, b = small_corpus.test[0], small_corpus.test[1]
    serial_a = [r["risk"] for r in replay(gateway, a, "serial-a")]
    serial_b = [r["risk"] for r in replay(gateway, b, "serial-b")]

    inter_a, inter_b = [], []
    turns_a, turns_b = list(a.turns), list(b.turns)
    while turns_a or turns_b:
        if turns_a:
            inter_a.append(gateway.handle(turn_to_request("mixed-a", turns_a.pop(0)))["risk"])
        if turns_b:
            inter_b.append(gateway.handle(turn_to_request("mixed-b", turns_b.pop(0)))["risk"])
    assert inter_a == serial_a
    assert inter_b == serial_b


def test_idle_sessions_expire(small_model, small_profile, small_calibration, small_corpus):
    now = [0.0]
    gw = Gateway(
        small_model, small_profile, small_calibration.thresholds,
        idle_timeout_s=100.0, clock=lambda: now[0],
    )
    session = small_corpus.test[0]
    gw.handle(turn_to_request("sleepy", session.turns[0]))
    now[0] = 50.0
    response = gw.handle(turn_to_request("sleepy", session.turns[1]))
    assert "error" not in response
    now[0] = 500.0  # long idle gap: state is gone, index restarts at 1
    response = gw.handle(turn_to_request("sleepy", session.turns[1]))
    assert response["error"] == "non-contiguous-turn"
    assert response["expected_index"] == 1


def test_debug_features_flag(small_model, small_profile, small_calibration, small_corpus):
    gw = Gateway(
        small_model, small_profile, small_calibration.thresholds, include_features=True
    )
    response = gw.handle(turn_to_request("dbg", small_corpus.test[0].turns[0]))
    assert len(response["features"]) == 42


# --- transports -----------------------------------------------------------------------

def test_stdio_transport(gateway, small_corpus):
    session = small_corpus.test[0]
    lines = "\n".join(
        json.dumps(turn_to_request("stdio-s", t)) for t in session.turns
    )
    out = io.StringIO()
    serve_stdio(gateway, io.StringIO(lines + "\n"), out)
    responses = [json.loads(line) for line in out.getvalue().splitlines()]
    assert len(responses) == len(session.turns)
    assert all("risk" in r for r in responses)


def test_tcp_transport_round_trip(gateway, small_corpus):
    server = serve_tcp(gateway, port=0)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        session = small_corpus.test[0]
        offline = replay(gateway, session, "offline-copy")
        with socket.create_connection(("127.0.0.1", port)) as conn:
            fp = conn.makefile("rw", encoding="utf-8", newline="\n")
            for turn, expected in zip(session.turns, offline):
                fp.write(json.dumps(turn_to_request("tcp-s", turn)) + "\n")
                fp.flush()
                response = json.loads(fp.readline())
                assert response["risk"] == expected["risk"]
    finally:
        server.shutdown()
        server.server_close()


def test_concurrent_sessions_over_tcp(gateway, small_corpus):
    groups = [small_corpus.test[i:i + 3] for i in range(0, 12, 3)]
    stats = measure_service_latency(gateway, groups)
    assert stats["concurrency"] == 4
    assert stats["n_requests"] == sum(len(s.turns) for g in groups for s in g)
    assert stats["service_p50_ms"] > 0
