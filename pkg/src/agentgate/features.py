"""Incremental 42-feature representation of an interaction prefix.

Feature values for turn t are a pure function of turns 1..t. The extractor
keeps a small per-session accumulator so each turn costs O(prompt length),
and recomputing any prefix from scratch yields the same vector.

Five named blocks: prompt (11), session (8), tool (6), context (6),
fraud (11). Normalization constants are fixed here and are part of the
model contract; changing them invalidates trained models.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .trace import (
    DEFAULT_BENIGN_DOMAIN,
    HIGH_RISK_THRESHOLD,
    LABEL_BENIGN,
    Session,
    Tool,
    Turn,
    extract_recipient,
    is_external_recipient,
    is_sensitive_read,
    path_prefix,
    tool_risk,
)

# --- lexicons -----------------------------------------------------------

SUSPICIOUS_KEYWORDS = (
    "ignore", "override", "bypass", "jailbreak", "secret",
    "password", "token", "credential", "sudo", "exfiltrate",
)
PRIVILEGE_KEYWORDS = ("sudo", "admin", "root")
SECRET_KEYWORDS = ("secret", "password", "token", "credential", "key")
IMPERATIVE_VERBS = ("send", "read", "run", "delete", "execute")

TOOL_VERBS = {
    Tool.WEB_FETCH: "fetch",
    Tool.SUMMARIZE: "summarize",
    Tool.READ_LOCAL_FILE: "read",
    Tool.SEND_EMAIL: "send",
    Tool.RUN_SHELL: "run",
}

# --- normalization constants --------------------------------------------

PROMPT_CHAR_NORM = 1000.0
PROMPT_TOKEN_NORM = 200.0
MEAN_TOKEN_LEN_NORM = 12.0
TURN_INDEX_NORM = 10.0
EXTERNAL_GAP_CAP = 5
EXTERNAL_LEN_NORM = 2000.0
EXFIL_GAP_CAP = 8
BURST_WINDOW = 3

# Echoed into run manifests so trained models are traceable to the exact
# feature definition they were built against.
NORMALIZATION_CONSTANTS = {
    "prompt_char_norm": PROMPT_CHAR_NORM,
    "prompt_token_norm": PROMPT_TOKEN_NORM,
    "mean_token_len_norm": MEAN_TOKEN_LEN_NORM,
    "turn_index_norm": TURN_INDEX_NORM,
    "external_gap_cap": EXTERNAL_GAP_CAP,
    "external_len_norm": EXTERNAL_LEN_NORM,
    "exfil_gap_cap": EXFIL_GAP_CAP,
    "burst_window": BURST_WINDOW,
}

# --- canonical feature dictionary ---------------------------------------

FEATURE_GROUPS: dict[str, tuple[str, ...]] = {
    "prompt": (
        "prompt_char_len_norm",
        "prompt_token_count_norm",
        "prompt_mean_token_len_norm",
        "prompt_suspicious_kw_count",
        "prompt_override_flag",
        "prompt_instruction_conflict_flag",
        "prompt_priv_escalation_flag",
        "prompt_secret_kw_count",
        "prompt_url_count",
        "prompt_code_block_flag",
        "prompt_imperative_verb_count",
    ),
    "session": (
        "sess_turn_index_norm",
        "sess_retry_count",
        "sess_denied_count",
        "sess_failed_count",
        "sess_turns_since_external",
        "sess_semantic_drift",
        "sess_distinct_tool_count",
        "sess_max_tool_usage",
    ),
    "tool": (
        "tool_is_web_fetch",
        "tool_is_summarize",
        "tool_is_read_local_file",
        "tool_is_send_email",
        "tool_is_run_shell",
        "tool_task_mismatch_flag",
    ),
    "context": (
        "ctx_external_present_flag",
        "ctx_external_suspicious_flag",
        "ctx_sensitive_resource_flag",
        "ctx_risky_after_ingestion_flag",
        "ctx_external_len_norm",
        "ctx_external_turn_count",
    ),
    "fraud": (
        "fraud_cum_risk",
        "fraud_risk_delta",
        "fraud_monotone_escalation_flag",
        "fraud_burst_score",
        "fraud_recipient_novelty_flag",
        "fraud_path_novelty_flag",
        "fraud_context_exfil_gap",
        "fraud_high_risk_count",
        "fraud_sensitive_read_count",
        "fraud_external_send_count",
        "fraud_read_send_cooccur_flag",
    ),
}

FEATURE_NAMES: tuple[str, ...] = tuple(
    name for group in ("prompt", "session", "tool", "context", "fraud")
    for name in FEATURE_GROUPS[group]
)
N_FEATURES = len(FEATURE_NAMES)

assert N_FEATURES == 42
assert tuple(len(FEATURE_GROUPS[g]) for g in ("prompt", "session", "tool", "context", "fraud")) == (
    11, 8, 6, 6, 11,
)

_ONE_HOT_ORDER = (Tool.WEB_FETCH, Tool.SUMMARIZE, Tool.READ_LOCAL_FILE, Tool.SEND_EMAIL, Tool.RUN_SHELL)


def group_indices(group: str) -> list[int]:
    """Column indices of a named feature group within the canonical order."""
    names = FEATURE_GROUPS.get(group)
    if names is None:
        raise ValueError(f"unknown feature group: {group!r}")
    return [FEATURE_NAMES.index(n) for n in names]


# --- text helpers ---------------------------------------------------------

def compile_term_pattern(terms: Sequence[str]) -> re.Pattern:
    """Word-boundary matcher over a term list; tolerates a plural 's'."""
    joined = "|".join(re.escape(t) for t in terms)
    return re.compile(r"\b(?:" + joined + r")s?\b", re.IGNORECASE)


def count_terms(text: str, pattern: re.Pattern) -> int:
    return len(pattern.findall(text))


_SUSPICIOUS_RE = compile_term_pattern(SUSPICIOUS_KEYWORDS)
_PRIVILEGE_RE = compile_term_pattern(PRIVILEGE_KEYWORDS)
_SECRET_RE = compile_term_pattern(SECRET_KEYWORDS)
_IMPERATIVE_RE = compile_term_pattern(IMPERATIVE_VERBS)
_URL_RE = re.compile(r"https?://")
_WORD_RE = re.compile(r"\w+")
_OVERRIDE_RE = re.compile(
    r"\b(?:ignore|disregard|forget)\b(?:\W+\w+){0,3}?\W+"
    r"(?:previous|prior|earlier|above|instructions|rules|checks|notes)\b",
    re.IGNORECASE,
)
_CONFLICT_RE = re.compile(
    r"\byou (?:must|should|are now|will now)\b"
    r"|\bas (?:the|an?) (?:system|assistant|agent)\b"
    r"|\bnew instructions\b|\bsystem prompt\b|\bact as\b",
    re.IGNORECASE,
)


def _has_code_block(text: str) -> bool:
    if "```" in text:
        return True
    return any(line.lstrip().startswith("$ ") for line in text.splitlines())


# --- benign reference profile --------------------------------------------

@dataclass(frozen=True)
class BenignProfile:
    """Recipients and path prefixes seen in benign training sessions."""

    known_recipients: frozenset[str]
    known_path_prefixes: frozenset[str]

    def to_dict(self) -> dict:
        return {
            "known_recipients": sorted(self.known_recipients),
            "known_path_prefixes": sorted(self.known_path_prefixes),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BenignProfile":
        return cls(
            known_recipients=frozenset(obj["known_recipients"]),
            known_path_prefixes=frozenset(obj["known_path_prefixes"]),
        )


def fit_profile(sessions: Iterable[Session]) -> BenignProfile:
    """Collect recipients/path prefixes from benign-labeled sessions only."""
    recipients: set[str] = set()
    prefixes: set[str] = set()
    saw_benign = False
    for session in sessions:
        if session.label != LABEL_BENIGN:
            continue
        saw_benign = True
        for turn in session.turns:
            tool = turn.action.tool
            if tool is Tool.SEND_EMAIL:
                recipient = extract_recipient(turn.action.argument)
                if recipient:
                    recipients.add(recipient.lower())
            elif tool is Tool.READ_LOCAL_FILE:
                prefixes.add(path_prefix(turn.action.argument))
    if not saw_benign:
        raise ValueError("empty-profile: no benign sessions to fit on")
    return BenignProfile(frozenset(recipients), frozenset(prefixes))


# --- per-session accumulator ----------------------------------------------

@dataclass
class SessionState:
    turn_count: int = 0
    retry_count: int = 0
    denied_count: int = 0
    failed_count: int = 0
    seen_actions: dict = field(default_factory=dict)
    tool_counts: dict = field(default_factory=dict)
    prior_token_union: set = field(default_factory=set)
    last_external_turn: int = 0  # 0 means never
    external_turn_count: int = 0
    cum_risk: float = 0.0
    prev_risk: float = 0.0
    deltas_nonneg: bool = True
    any_delta_pos: bool = False
    recent_risks: list = field(default_factory=list)
    first_sensitive_read_turn: Optional[int] = None
    exfil_gap: Optional[int] = None
    high_risk_count: int = 0
    sensitive_read_count: int = 0
    external_send_count: int = 0


class FeatureExtractor:
    """Streaming extractor bound to a benign profile."""

    def __init__(self, profile: BenignProfile, benign_domain: str = DEFAULT_BENIGN_DOMAIN):
        self.profile = profile
        self.benign_domain = benign_domain

    def new_state(self) -> SessionState:
        return SessionState()

    def update(self, state: SessionState, turn: Turn) -> list[float]:
        """Consume the next turn and return the 42-entry feature vector."""
        if turn.index != state.turn_count + 1:
            raise ValueError(
                f"non-contiguous-turn: expected {state.turn_count + 1}, got {turn.index}"
            )
        t = turn.index
        state.turn_count = t
        tool = turn.action.tool
        argument = turn.action.argument
        prompt = turn.prompt
        risk = tool_risk(tool)

        ws_tokens = prompt.split()
        token_set = set(_WORD_RE.findall(prompt.lower()))

        # prompt block
        mean_token_len = (
            sum(len(tok) for tok in ws_tokens) / len(ws_tokens) if ws_tokens else 0.0
        )
        prompt_block = [
            min(len(prompt) / PROMPT_CHAR_NORM, 1.0),
            min(len(ws_tokens) / PROMPT_TOKEN_NORM, 1.0),
            min(mean_token_len / MEAN_TOKEN_LEN_NORM, 1.0),
            float(count_terms(prompt, _SUSPICIOUS_RE)),
            1.0 if _OVERRIDE_RE.search(prompt) else 0.0,
            1.0 if _CONFLICT_RE.search(prompt) else 0.0,
            1.0 if count_terms(prompt, _PRIVILEGE_RE) else 0.0,
            float(count_terms(prompt, _SECRET_RE)),
            float(len(_URL_RE.findall(prompt))),
            1.0 if _has_code_block(prompt) else 0.0,
            float(count_terms(prompt, _IMPERATIVE_RE)),
        ]

        # session block
        action_key = (tool.value, argument)
        if action_key in state.seen_actions:
            state.retry_count += 1
        state.seen_actions[action_key] = state.seen_actions.get(action_key, 0) + 1
        state.tool_counts[tool.value] = state.tool_counts.get(tool.value, 0) + 1
        if turn.denied:
            state.denied_count += 1
        if turn.failed:
            state.failed_count += 1

        external = turn.external_content if turn.external_content else None
        if external is not None:
            state.external_turn_count += 1
        if t == 1:
            drift = 0.0
        else:
            union = state.prior_token_union
            if not union and not token_set:
                drift = 0.0
            else:
                inter = len(token_set & union)
                denom = len(token_set | union)
                drift = 1.0 - (inter / denom if denom else 0.0)
        if external is not None:
            since_external = 0
        elif state.last_external_turn > 0:
            since_external = min(t - state.last_external_turn, EXTERNAL_GAP_CAP)
        else:
            since_external = EXTERNAL_GAP_CAP
        session_block = [
            min(t / TURN_INDEX_NORM, 1.0),
            float(state.retry_count),
            float(state.denied_count),
            float(state.failed_count),
            float(since_external),
            drift,
            float(len(state.tool_counts)),
            float(max(state.tool_counts.values())),
        ]

        # tool block
        one_hot = [1.0 if tool is candidate else 0.0 for candidate in _ONE_HOT_ORDER]
        own_verb = TOOL_VERBS[tool]
        other_verb_present = any(
            verb in token_set for tl, verb in TOOL_VERBS.items() if tl is not tool
        )
        mismatch = 1.0 if (own_verb not in token_set and other_verb_present) else 0.0
        tool_block = one_hot + [mismatch]

        # context block
        sensitive = turn.sensitive_resource or is_sensitive_read(turn)
        ext_suspicious = external is not None and count_terms(external, _SUSPICIOUS_RE) > 0
        ingested_recently = external is not None or (
            state.last_external_turn > 0 and t - state.last_external_turn <= 1
        )
        context_block = [
            1.0 if external is not None else 0.0,
            1.0 if ext_suspicious else 0.0,
            1.0 if sensitive else 0.0,
            1.0 if (risk >= HIGH_RISK_THRESHOLD and ingested_recently) else 0.0,
            min(len(external) / EXTERNAL_LEN_NORM, 1.0) if external is not None else 0.0,
            float(state.external_turn_count),
        ]

        # fraud block
        state.cum_risk += risk
        delta = risk - state.prev_risk if t > 1 else 0.0
        if t > 1:
            if delta < 0:
                state.deltas_nonneg = False
            elif delta > 0:
                state.any_delta_pos = True
        monotone = 1.0 if (state.deltas_nonneg and state.any_delta_pos) else 0.0
        state.recent_risks.append(risk)
        if len(state.recent_risks) > BURST_WINDOW:
            state.recent_risks.pop(0)
        burst = sum(1 for r in state.recent_risks if r >= HIGH_RISK_THRESHOLD) / len(
            state.recent_risks
        )
        if risk >= HIGH_RISK_THRESHOLD:
            state.high_risk_count += 1

        recipient_novel = 0.0
        external_send = False
        if tool is Tool.SEND_EMAIL:
            recipient = extract_recipient(argument)
            if recipient is None or recipient.lower() not in self.profile.known_recipients:
                recipient_novel = 1.0
            external_send = is_external_recipient(argument, self.benign_domain)
            if external_send:
                state.external_send_count += 1
        path_novel = 0.0
        if tool is Tool.READ_LOCAL_FILE:
            if path_prefix(argument) not in self.profile.known_path_prefixes:
                path_novel = 1.0
            if sensitive:
                state.sensitive_read_count += 1
                if state.first_sensitive_read_turn is None:
                    state.first_sensitive_read_turn = t
        if (
            state.exfil_gap is None
            and external_send
            and state.first_sensitive_read_turn is not None
        ):
            state.exfil_gap = t - state.first_sensitive_read_turn
        gap = state.exfil_gap if state.exfil_gap is not None else EXFIL_GAP_CAP
        fraud_block = [
            state.cum_risk,
            delta,
            monotone,
            burst,
            recipient_novel,
            path_novel,
            float(min(gap, EXFIL_GAP_CAP)),
            float(state.high_risk_count),
            float(state.sensitive_read_count),
            float(state.external_send_count),
            1.0 if (state.sensitive_read_count > 0 and state.external_send_count > 0) else 0.0,
        ]

        # deferred session-state updates that must not affect the current turn
        state.prior_token_union |= token_set
        if external is not None:
            state.last_external_turn = t
        state.prev_risk = risk

        return prompt_block + session_block + tool_block + context_block + fraud_block

    def extract_session(self, session: Session) -> list[list[float]]:
        """Feature vectors for every prefix of a session, in turn order."""
        state = self.new_state()
        return [self.update(state, turn) for turn in session.turns]


def named_vector(values: Sequence[float]) -> dict[str, float]:
    if len(values) != N_FEATURES:
        raise ValueError(f"feature-shape: expected {N_FEATURES}, got {len(values)}")
    return dict(zip(FEATURE_NAMES, values))


# --- feature-matrix file --------------------------------------------------

MATRIX_META_COLUMNS = ("session_id", "turn", "label", "family")


def write_feature_matrix(path, rows: Iterable[tuple[str, int, str, Optional[str], Sequence[float]]]) -> None:
    """CSV with meta columns followed by the canonical 42 features."""
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(list(MATRIX_META_COLUMNS) + list(FEATURE_NAMES))
        for session_id, turn, label, family, values in rows:
            if len(values) != N_FEATURES:
                raise ValueError(f"feature-shape: expected {N_FEATURES}, got {len(values)}")
            writer.writerow(
                [session_id, turn, label, family or ""] + [repr(float(v)) for v in values]
            )


def read_feature_matrix(path) -> tuple[list[dict], list[list[float]]]:
    with open(path, "r", encoding="utf-8", newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader)
        expected = list(MATRIX_META_COLUMNS) + list(FEATURE_NAMES)
        if header != expected:
            raise ValueError("feature matrix header does not match the canonical dictionary")
        meta: list[dict] = []
        matrix: list[list[float]] = []
        for row in reader:
            meta.append(
                {
                    "session_id": row[0],
                    "turn": int(row[1]),
                    "label": row[2],
                    "family": row[3] or None,
                }
            )
            matrix.append([float(v) for v in row[4:]])
    return meta, matrix


def session_rows(session: Session, extractor: FeatureExtractor):
    for turn_no, values in enumerate(extractor.extract_session(session), start=1):
        yield session.session_id, turn_no, session.label, session.family, values
