"""HTTP-facing node: SSO sessions, key proof, batch intake, state reads."""

from .auth import (
    AuthError,
    ChallengeStore,
    MockIdentityProvider,
    SessionManager,
    UserStore,
    verify_assertion,
)
from .service import NodeService
from .http import make_node_app

__all__ = [
    "AuthError",
    "ChallengeStore",
    "MockIdentityProvider",
    "SessionManager",
    "UserStore",
    "verify_assertion",
    "NodeService",
    "make_node_app",
]
