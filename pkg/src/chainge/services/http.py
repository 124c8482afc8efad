"""HTTP surface of a simulated subscription service."""

from __future__ import annotations

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import Response

from ..canonical import canonical_dumps
from .subscription import ServiceError, SubscriptionService


def _json(payload, status_code: int = 200) -> Response:
    return Response(
        content=canonical_dumps(payload),
        status_code=status_code,
        media_type="application/json",
    )


def make_service_app(service: SubscriptionService, endpoint: str = "") -> FastAPI:
    app = FastAPI(
        title=f"subscription service {service.subscription_type}",
        docs_url=None,
        redoc_url=None,
    )

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return _json({"code": exc.code, "message": exc.message}, exc.http_status)

    @app.exception_handler(RequestValidationError)
    async def _bad_request(_request: Request, exc: RequestValidationError):
        return _json({"code": "MalformedRequest", "message": str(exc.errors()[:1])}, 400)

    @app.get("/info")
    async def info():
        doc = service.descriptor(endpoint).to_dict()
        doc["mode"] = service.mode
        return _json(doc)

    @app.post("/accounts")
    async def create_account(body: dict = Body(...)):
        service_user_id = service.create_account(
            body.get("username", ""), body.get("password", "")
        )
        return _json({"serviceUserId": service_user_id}, 201)

    @app.post("/auth")
    async def authenticate(body: dict = Body(...)):
        return _json(service.authenticate(body.get("username", ""), body.get("password", "")))

    @app.get("/records/{service_user_id}")
    async def get_record(service_user_id: str):
        return _json(service.get_record(service_user_id).to_dict())

    return app
