"""Two-threshold allow/restrict/block rule and its validation-set calibration.

Boundary semantics: allow when r < tau1, restrict when tau1 <= r < tau2,
block when r >= tau2. Calibration picks the smallest observed score whose
session-level benign block rate stays under a cap, which maximizes the
fraction of attack sessions blocked at or before their unsafe turn.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .trace import LABEL_BENIGN, Session

ALLOW = "allow"
RESTRICT = "restrict"
BLOCK = "block"

DEFAULT_MAX_BENIGN_BLOCK_RATE = 0.01
DEFAULT_MAX_BENIGN_RESTRICT_RATE = 0.05


@dataclass(frozen=True)
class Thresholds:
    tau1: float
    tau2: float

    def __post_init__(self):
        if not (0.0 <= self.tau1 <= self.tau2 <= 1.0):
            raise ValueError(f"bad-thresholds: need 0 <= tau1 <= tau2 <= 1, got {self.tau1}, {self.tau2}")

    def to_dict(self) -> dict:
        return {"tau1": self.tau1, "tau2": self.tau2}

    @classmethod
    def from_dict(cls, obj: dict) -> "Thresholds":
        return cls(tau1=float(obj["tau1"]), tau2=float(obj["tau2"]))


@dataclass(frozen=True)
class Decision:
    verdict: str
    risk: float
    thresholds: Thresholds


def decide(risk: float, thresholds: Thresholds) -> Decision:
    if not 0.0 <= risk <= 1.0:
        raise ValueError(f"risk must be in [0, 1], got {risk}")
    if risk >= thresholds.tau2:
        verdict = BLOCK
    elif risk >= thresholds.tau1:
        verdict = RESTRICT
    else:
        verdict = ALLOW
    return Decision(verdict=verdict, risk=risk, thresholds=thresholds)


@dataclass(frozen=True)
class CalibrationResult:
    thresholds: Thresholds
    benign_block_rate: float
    benign_restrict_rate: float
    asr_reduction: float
    block_infeasible: bool
    restrict_infeasible: bool
    constraints: dict

    def to_dict(self) -> dict:
        return {
            "tau1": self.thresholds.tau1,
            "tau2": self.thresholds.tau2,
            "benign_block_rate": self.benign_block_rate,
            "benign_restrict_rate": self.benign_restrict_rate,
            "asr_reduction": self.asr_reduction,
            "block_infeasible": self.block_infeasible,
            "restrict_infeasible": self.restrict_infeasible,
            "calibration_constraints": self.constraints,
        }


def _benign_exceed_rate(benign_maxes: Sequence[float], tau: float) -> float:
    if not benign_maxes:
        return 0.0
    return sum(1 for m in benign_maxes if m >= tau) / len(benign_maxes)


def _prevented_rate(attack_prefix_maxes: Sequence[float], tau: float) -> float:
    if not attack_prefix_maxes:
        return 0.0
    return sum(1 for m in attack_prefix_maxes if m >= tau) / len(attack_prefix_maxes)


def calibrate(
    scored_sessions: Sequence[tuple[Session, Sequence[float]]],
    max_benign_block_rate: float = DEFAULT_MAX_BENIGN_BLOCK_RATE,
    max_benign_restrict_rate: float = DEFAULT_MAX_BENIGN_RESTRICT_RATE,
) -> CalibrationResult:
    """Choose tau1/tau2 from per-turn risk scores on the validation split.

    A benign session counts against the caps as soon as any of its prefixes
    crosses the threshold; an attack session counts as prevented when some
    prefix at or before its unsafe turn reaches the block threshold.
    """
    benign_maxes: list[float] = []
    attack_maxes: list[float] = []
    candidates: set[float] = set()
    for session, scores in scored_sessions:
        if len(scores) != len(session.turns):
            raise ValueError("score list length must match session turn count")
        candidates.update(scores)
        if session.label == LABEL_BENIGN:
            benign_maxes.append(max(scores))
        else:
            assert session.unsafe_turn is not None
            attack_maxes.append(max(scores[: session.unsafe_turn]))
    if not benign_maxes or not attack_maxes:
        raise ValueError("calibration requires both benign and adversarial sessions")

    # Smallest observed score under the cap; if none qualifies the policy
    # cannot block anything without over-blocking benign traffic.
    ordered = sorted(candidates)
    tau2 = None
    for tau in ordered:
        if _benign_exceed_rate(benign_maxes, tau) <= max_benign_block_rate:
            tau2 = tau
            break
    block_infeasible = tau2 is None
    if tau2 is None:
        tau2 = 1.0

    tau1 = None
    for tau in ordered:
        if tau > tau2:
            break
        if _benign_exceed_rate(benign_maxes, tau) <= max_benign_restrict_rate:
            tau1 = tau
            break
    restrict_infeasible = tau1 is None
    if tau1 is None:
        tau1 = tau2

    thresholds = Thresholds(tau1=min(tau1, tau2), tau2=tau2)
    return CalibrationResult(
        thresholds=thresholds,
        benign_block_rate=_benign_exceed_rate(benign_maxes, thresholds.tau2),
        benign_restrict_rate=_benign_exceed_rate(benign_maxes, thresholds.tau1),
        asr_reduction=_prevented_rate(attack_maxes, thresholds.tau2),
        block_infeasible=block_infeasible,
        restrict_infeasible=restrict_infeasible,
        constraints={
            "max_benign_block_rate": max_benign_block_rate,
            "max_benign_restrict_rate": max_benign_restrict_rate,
        },
    )
