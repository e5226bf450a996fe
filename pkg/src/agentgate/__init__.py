"""agentgate: behavioral risk scoring and pre-execution gating for
multi-turn LLM-agent sessions."""

__version__ = "0.1.0"

from .trace import Session, Tool, Turn, derive_label, tool_risk  # noqa: F401
from .policy import Decision, Thresholds, decide  # noqa: F401
