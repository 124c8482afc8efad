"""Simulated subscription services and their event-feed plumbing."""

from .subscription import (
    MODE_DELTAS,
    MODE_EVENTS,
    BadCredentials,
    NoRecord,
    ServiceDescriptor,
    ServiceError,
    ServiceRecord,
    SubscriptionService,
    TokenExpired,
    UsernameTaken,
)
from .http import make_service_app
from .feed import follow_events, parse_event_line

__all__ = [
    "MODE_DELTAS",
    "MODE_EVENTS",
    "BadCredentials",
    "NoRecord",
    "ServiceDescriptor",
    "ServiceError",
    "ServiceRecord",
    "SubscriptionService",
    "TokenExpired",
    "UsernameTaken",
    "make_service_app",
    "follow_events",
    "parse_event_line",
]
