"""HTTP surface of a validator node."""

from __future__ import annotations

import asyncio

from fastapi import Body, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import Response, StreamingResponse

from ..canonical import canonical_dumps
from ..ledger import LedgerError
from .auth import AuthError, MockIdentityProvider, Session
from .service import NodeService, NotFound, event_matches

_POLL_SECONDS = 0.05


def _json(payload, status_code: int = 200) -> Response:
    return Response(
        content=canonical_dumps(payload),
        status_code=status_code,
        media_type="application/json",
    )


def make_node_app(
    service: NodeService, idps: dict[str, MockIdentityProvider] | None = None
) -> FastAPI:
    app = FastAPI(title=f"chainge node {service.node_name}", docs_url=None, redoc_url=None)
    idps = idps or {}

    @app.exception_handler(AuthError)
    async def _auth_error(_request: Request, exc: AuthError):
        return _json({"code": exc.code, "message": exc.message}, exc.http_status)

    @app.exception_handler(NotFound)
    async def _not_found(_request: Request, exc: NotFound):
        return _json({"code": exc.code, "message": exc.message}, exc.http_status)

    @app.exception_handler(LedgerError)
    async def _ledger_error(_request: Request, exc: LedgerError):
        return _json({"code": exc.code, "message": exc.message}, 400)

    @app.exception_handler(RequestValidationError)
    async def _bad_request(_request: Request, exc: RequestValidationError):
        return _json({"code": "MalformedRequest", "message": str(exc.errors()[:1])}, 400)

    def _session(request: Request) -> Session:
        header = request.headers.get("authorization", "")
        token = header[7:].strip() if header.lower().startswith("bearer ") else None
        return service.authenticate(token)

    # ------------------------------------------------------------- identity

    @app.post("/auth/sso")
    async def sso(body: dict = Body(...)):
        return _json(service.login(body.get("assertion", body)))

    @app.post("/auth/key")
    async def register_key(request: Request, body: dict = Body(...)):
        session = _session(request)
        return _json(service.register_key(session, body.get("publicKey", "")))

    @app.post("/auth/challenge")
    async def challenge(request: Request):
        session = _session(request)
        return _json(service.issue_challenge(session))

    @app.post("/auth/challenge/answer")
    async def challenge_answer(request: Request, body: dict = Body(...)):
        session = _session(request)
        return _json(
            service.answer_challenge(
                session, body.get("challenge", ""), body.get("signature", "")
            )
        )

    for name, idp in idps.items():

        def _bind(provider: MockIdentityProvider):
            async def issue(body: dict = Body(...)):
                subject = body.get("subject", "")
                if not isinstance(subject, str) or not subject:
                    return _json(
                        {"code": "BadSubject", "message": "subject must be a non-empty string"},
                        400,
                    )
                return _json({"assertion": provider.issue(subject)})

            return issue

        app.post(f"/idp/{name}/issue")(_bind(idp))

    # -------------------------------------------------------------- batches

    @app.post("/batches")
    async def submit_batch(request: Request, body: dict = Body(...)):
        _session(request)
        status = service.submit_batch(body.get("batch", body))
        if status.get("status") == "REJECTED":
            return _json(
                {"code": status.get("code", "Rejected"), "message": status.get("message", "")},
                400,
            )
        return _json(status)

    @app.get("/batches/{batch_id}/status")
    async def batch_status(request: Request, batch_id: str):
        _session(request)
        return _json(service.batch_status(batch_id))

    # ---------------------------------------------------------------- reads

    @app.get("/state/{address}")
    async def state_address(request: Request, address: str):
        session = _session(request)
        return _json(service.read_state(session, address))

    @app.get("/state")
    async def state_prefix(request: Request, prefix: str = Query("")):
        session = _session(request)
        return _json(service.read_prefix(session, prefix))

    @app.get("/blocks")
    async def blocks(request: Request, from_height: int = Query(0)):
        _session(request)
        return _json({"blocks": service.blocks(from_height)})

    # ---------------------------------------------------------------- events

    @app.get("/events")
    async def events(
        kinds: str = Query(""),
        prefix: str = Query(""),
        from_height: int | None = Query(None),
    ):
        # replication plane: consumers see only ciphertext and addresses,
        # so the stream is not session-gated
        kind_set = {k for k in kinds.split(",") if k} or None
        start = service.head_height() if from_height is None else from_height

        async def stream():
            cursor = start
            idle = 0.0
            while True:
                records = service.events_since(cursor)
                sent = False
                for record in records:
                    cursor = max(cursor, record.height)
                    if event_matches(record, kind_set, prefix or None):
                        yield (
                            f"id: {record.height}-{record.index}\n"
                            f"data: {record.encoded()}\n\n"
                        )
                        sent = True
                if sent:
                    idle = 0.0
                else:
                    await asyncio.sleep(_POLL_SECONDS)
                    idle += _POLL_SECONDS
                    if idle >= service.heartbeat_seconds:
                        idle = 0.0
                        yield ": heartbeat\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
