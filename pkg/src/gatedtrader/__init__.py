"""Anomaly-gated, multi-agent trading engine with a serialized deliberation pipeline."""

from .config import SessionConfig, load_config
from .journal import Journal
from .session import Session, SessionSummary

__all__ = ["Journal", "Session", "SessionConfig", "SessionSummary", "load_config"]
__version__ = "0.1.0"
