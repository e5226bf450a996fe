"""Detector interface plus the keyword rule-filter baseline.

Detectors are prefix-causal: a session scorer consumes turns in order and
emits one risk per turn. The structured GBDT detector and the rule filter
both implement the same small protocol so the evaluation harness can drive
either one (and leaves room for embedding-based detectors later).
"""

from __future__ import annotations

import re
from typing import Optional, Protocol, Sequence

from .features import BenignProfile, FeatureExtractor, compile_term_pattern, count_terms
from .gbdt import GbdtModel
from .trace import DEFAULT_BENIGN_DOMAIN, Session, Turn

DEFAULT_LEXICON: dict[str, tuple[str, ...]] = {
    "override": ("ignore", "override", "disregard", "bypass", "jailbreak"),
    "secret": ("secret", "password", "credential", "token", "key"),
    "action": ("send", "exfiltrate", "execute", "run", "delete"),
}

RULE_FILTER_THRESHOLD = 3


class SessionScorer(Protocol):
    def push(self, turn: Turn) -> float: ...


class Detector(Protocol):
    name: str

    def new_session(self) -> SessionScorer: ...


def score_session(detector: Detector, session: Session) -> list[float]:
    scorer = detector.new_session()
    return [scorer.push(turn) for turn in session.turns]


class _RuleFilterScorer:
    def __init__(self, pattern: re.Pattern, threshold: int):
        self._pattern = pattern
        self._threshold = threshold

    def push(self, turn: Turn) -> float:
        text = turn.prompt
        if turn.external_content:
            text = text + "\n" + turn.external_content
        return 1.0 if count_terms(text, self._pattern) >= self._threshold else 0.0


class RuleFilterDetector:
    """Single-turn regex baseline: fires when the current turn's prompt plus
    external content matches at least ``threshold`` lexicon terms."""

    name = "rule_filter"

    def __init__(
        self,
        lexicon: Optional[dict[str, Sequence[str]]] = None,
        threshold: int = RULE_FILTER_THRESHOLD,
    ):
        lexicon = lexicon if lexicon is not None else DEFAULT_LEXICON
        terms = [term for terms in lexicon.values() for term in terms]
        if not terms:
            raise ValueError("rule-filter lexicon is empty")
        self.lexicon = {k: tuple(v) for k, v in lexicon.items()}
        self.threshold = threshold
        self._pattern = compile_term_pattern(terms)

    def new_session(self) -> _RuleFilterScorer:
        return _RuleFilterScorer(self._pattern, self.threshold)

    def score_turn(self, turn: Turn) -> float:
        return self.new_session().push(turn)


class _GbdtScorer:
    def __init__(self, extractor: FeatureExtractor, model: GbdtModel):
        self._extractor = extractor
        self._model = model
        self._state = extractor.new_state()

    def push(self, turn: Turn) -> float:
        features = self._extractor.update(self._state, turn)
        return self._model.predict_one(features)


class GbdtDetector:
    """The structured detector: streaming features into the trained ensemble."""

    name = "ours"

    def __init__(
        self,
        model: GbdtModel,
        profile: BenignProfile,
        benign_domain: str = DEFAULT_BENIGN_DOMAIN,
    ):
        self.model = model
        self.extractor = FeatureExtractor(profile, benign_domain)

    def new_session(self) -> _GbdtScorer:
        return _GbdtScorer(self.extractor, self.model)


def load_lexicon(path) -> dict[str, tuple[str, ...]]:
    """Parse a class-sectioned lexicon file: ``[section]`` headers followed by
    one term per line; '#' starts a comment."""
    lexicon: dict[str, list[str]] = {}
    section: Optional[str] = None
    with open(path, "r", encoding="utf-8") as fp:
        for raw in fp:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                lexicon.setdefault(section, [])
            elif section is None:
                raise ValueError("lexicon file must start with a [section] header")
            else:
                lexicon[section].append(line.lower())
    if not any(lexicon.values()):
        raise ValueError("lexicon file contains no terms")
    return {k: tuple(v) for k, v in lexicon.items()}
