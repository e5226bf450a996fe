import json

import pytest
from hypothesis import given, strategies as st

from agentgate.rng import SplitMix64
from agentgate.trace import (
    LABEL_ADVERSARIAL,
    LABEL_BENIGN,
    Tool,
    derive_label,
    has_privileged_marker,
    session_to_json,
    tool_risk,
)
from agentgate.tracegen import (
    ATTACK_PATHS_LOUD,
    ATTACK_PATHS_QUIET,
    AUDIT_PATHS,
    FAMILY_TURNS,
    GenConfig,
    corpus_manifest,
    enumerate_prefixes,
    gen_attack,
    gen_benign,
    gen_corpus,
    largest_remainder,
    load_corpus,
    manifest_hash,
    write_corpus,
)


# --- apportionment ----------------------------------------------------------

def test_largest_remainder_default_split():
    assert largest_remainder(12000, (0.6, 0.2, 0.2)) == [7200, 2400, 2400]


def test_largest_remainder_rounding():
    assert largest_remainder(10, (1, 1, 1)) == [4, 3, 3]
    assert largest_remainder(5, (0.5, 0.5)) == [3, 2]


@given(
    st.integers(min_value=0, max_value=5000),
    st.lists(st.floats(min_value=0.01, max_value=10), min_size=1, max_size=6),
)
def test_largest_remainder_sums(total, weights):
    parts = largest_remainder(total, weights)
    assert sum(parts) == total
    assert all(p >= 0 for p in parts)


# --- config validation -------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        GenConfig(seed=1, split=(0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        GenConfig(seed=1, benign_fraction=0.0)
    with pytest.raises(ValueError):
        GenConfig(seed=1, family_mix=(0, 0, 0, 0))
    with pytest.raises(ValueError):
        GenConfig(seed=1, n_total=0)


def test_config_round_trip():
    config = GenConfig(seed=3, n_total=100, benign_fraction=0.4)
    assert GenConfig.from_dict(config.to_dict()) == config


# --- benign generation -------------------------------------------------------

def test_benign_sessions_are_benign_and_bounded():
    rng = SplitMix64(42)
    for ordinal in range(500):
        turns = gen_benign(rng.spawn(ordinal))
        assert 2 <= len(turns) <= 6
        assert derive_label(turns) == (LABEL_BENIGN, None)


def test_benign_pool_purity_at_scale():
    # 10,000 benign draws, none labeled adversarial by the oracle
    rng = SplitMix64(42)
    labels = {derive_label(gen_benign(rng.spawn(i)))[0] for i in range(10000)}
    assert labels == {LABEL_BENIGN}


# --- attack generation -------------------------------------------------------

@pytest.mark.parametrize("family,expected_turns", sorted(FAMILY_TURNS.items()))
def test_attack_turn_counts_and_labels(family, expected_turns):
    rng = SplitMix64(7)
    for ordinal in range(100):
        turns, unsafe_turn = gen_attack(family, rng.spawn(ordinal))
        assert len(turns) == expected_turns
        assert unsafe_turn == expected_turns
        assert derive_label(turns) == (LABEL_ADVERSARIAL, unsafe_turn)


def test_split_exfil_shape():
    turns, unsafe_turn = gen_attack("split_exfil", SplitMix64(1))
    assert unsafe_turn == 2
    assert turns[0].action.tool is Tool.READ_LOCAL_FILE
    assert turns[0].sensitive_resource
    assert turns[1].action.tool is Tool.SEND_EMAIL


def test_privilege_drift_monotone_risk_and_hidden_command():
    rng = SplitMix64(3)
    for ordinal in range(200):
        turns, _ = gen_attack("privilege_drift", rng.spawn(ordinal))
        risks = [tool_risk(t.action.tool) for t in turns]
        assert all(b > a for a, b in zip(risks, risks[1:]))
        command = turns[-1].action.argument
        assert has_privileged_marker(command)
        assert all(command not in t.prompt for t in turns)


def test_staged_burst_trailing_high_risk():
    rng = SplitMix64(5)
    for ordinal in range(50):
        turns, unsafe_turn = gen_attack("staged_burst", rng.spawn(ordinal))
        assert unsafe_turn == 3
        assert [t.action.tool for t in turns[:2]] == [Tool.READ_LOCAL_FILE] * 2
        assert turns[2].action.tool is Tool.SEND_EMAIL
        assert all(tool_risk(t.action.tool) >= 0.6 for t in turns)


def test_unknown_family_errors():
    with pytest.raises(ValueError, match="unknown-family"):
        gen_attack("zero_day", SplitMix64(1))


def test_quiet_and_audit_paths_share_length():
    lengths = {len(p) for p in ATTACK_PATHS_QUIET} | {len(p) for p in AUDIT_PATHS}
    assert len(lengths) == 1


def test_loud_paths_differ_from_audit_pool():
    assert not set(ATTACK_PATHS_LOUD) & set(AUDIT_PATHS)


# --- corpus assembly ---------------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    return gen_corpus(GenConfig(seed=11, n_total=600))


def test_split_sizes(corpus):
    assert len(corpus.train) == 360
    assert len(corpus.valid) == 120
    assert len(corpus.test) == 120


def test_test_split_is_balanced(corpus):
    benign = sum(1 for s in corpus.test if s.label == LABEL_BENIGN)
    assert benign == len(corpus.test) - benign


def test_exact_class_counts_small():
    corpus = gen_corpus(GenConfig(seed=2, n_total=10))
    labels = [s.label for split in (corpus.train, corpus.valid, corpus.test) for s in split]
    assert labels.count(LABEL_BENIGN) == 5
    assert labels.count(LABEL_ADVERSARIAL) == 5


def test_session_ids_unique_across_splits(corpus):
    ids = [s.session_id for split in (corpus.train, corpus.valid, corpus.test) for s in split]
    assert len(ids) == len(set(ids))


def test_label_soundness_everywhere(corpus):
    for split in (corpus.train, corpus.valid, corpus.test):
        for session in split:
            label, unsafe_turn = derive_label(session.turns)
            assert label == session.label
            assert unsafe_turn == session.unsafe_turn


def test_earliest_event_property(corpus):
    for session in corpus.train:
        if session.unsafe_turn is None or session.unsafe_turn == 1:
            continue
        prefix = session.turns[: session.unsafe_turn - 1]
        assert derive_label(prefix) == (LABEL_BENIGN, None)


def test_family_counts_follow_mix():
    corpus = gen_corpus(GenConfig(seed=9, n_total=200, family_mix=(2.0, 1.0, 1.0, 0.0)))
    sessions = corpus.train + corpus.valid + corpus.test
    counts = {}
    for s in sessions:
        if s.family:
            counts[s.family] = counts.get(s.family, 0) + 1
    assert counts.get("staged_burst", 0) == 0
    assert counts["split_exfil"] == 50
    assert counts["context_laundering"] == 25
    assert counts["privilege_drift"] == 25


def test_determinism_byte_identical(tmp_path):
    config = GenConfig(seed=123, n_total=200)
    first = gen_corpus(config)
    second = gen_corpus(config)
    serialize = lambda corpus: "\n".join(
        session_to_json(s)
        for split in (corpus.train, corpus.valid, corpus.test)
        for s in split
    )
    assert serialize(first) == serialize(second)

    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    write_corpus(first, dir_a)
    write_corpus(second, dir_b)
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()


def test_write_and_load_round_trip(corpus, tmp_path):
    manifest = write_corpus(corpus, tmp_path)
    loaded = load_corpus(tmp_path)
    assert loaded.train == corpus.train
    assert loaded.valid == corpus.valid
    assert loaded.test == corpus.test
    assert loaded.config == corpus.config
    assert manifest == corpus_manifest(corpus)
    assert manifest["counts"]["train"]["sessions"] == 360
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest_hash(on_disk) == manifest_hash(manifest)


# --- prefix enumeration ------------------------------------------------------

def test_enumerate_prefixes_one_per_turn(corpus):
    session = corpus.train[0]
    points = enumerate_prefixes([session])
    assert [t for _, t in points] == list(range(1, len(session.turns) + 1))


def test_prefixes_inherit_session_label():
    corpus = gen_corpus(GenConfig(seed=4, n_total=40))
    split_sessions = [s for s in corpus.train if s.family == "split_exfil"]
    assert split_sessions
    for session, _t in enumerate_prefixes(split_sessions[:1]):
        assert session.label == LABEL_ADVERSARIAL
