"""Live document-grounded assistant service."""

from .sessions import ApiError, AssistantConfig, SessionManager, SessionState, StudyLogEntry
from .service import create_app
from .store import EventStore

__all__ = [
    "ApiError",
    "AssistantConfig",
    "SessionManager",
    "SessionState",
    "StudyLogEntry",
    "EventStore",
    "create_app",
]
