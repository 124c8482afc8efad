"""HTTP plumbing for the CLI: node and service endpoints, error mapping.

Exit-code contract: 1 validation, 2 auth, 3 node/transport. Failures raise
CliError carrying the exit code so commands stay declarative.
"""

from __future__ import annotations

import time

import httpx

EXIT_VALIDATION = 1
EXIT_AUTH = 2
EXIT_NODE = 3

POLL_SECONDS = 0.2
TERMINAL_STATUSES = {"COMMITTED", "INVALID"}


class CliError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.message = message
        self.exit_code = exit_code


def _error_from_response(reply: httpx.Response) -> CliError:
    try:
        doc = reply.json()
        detail = f"{doc.get('code', reply.status_code)}: {doc.get('message', '')}"
    except ValueError:
        detail = f"HTTP {reply.status_code}"
    if reply.status_code in (401, 403):
        return CliError(detail, EXIT_AUTH)
    if reply.status_code >= 500:
        return CliError(detail, EXIT_NODE)
    return CliError(detail, EXIT_VALIDATION)


class _Http:
    def __init__(self, base_url: str, timeout: float):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def request(self, method: str, path: str, token: str = "", **kw) -> dict:
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        try:
            reply = httpx.request(
                method,
                f"{self.base_url}{path}",
                headers=headers,
                timeout=self.timeout,
                **kw,
            )
        except httpx.HTTPError as exc:
            raise CliError(f"cannot reach {self.base_url}: {exc}", EXIT_NODE) from exc
        if reply.status_code >= 400:
            raise _error_from_response(reply)
        return reply.json()


class NodeClient(_Http):
    def __init__(self, base_url: str, timeout: float = 30.0, token: str = ""):
        super().__init__(base_url, timeout)
        self.token = token

    def idp_issue(self, provider: str, subject: str) -> dict:
        return self.request(
            "POST", f"/idp/{provider}/issue", json={"subject": subject}
        )["assertion"]

    def sso_login(self, assertion: dict) -> dict:
        reply = self.request("POST", "/auth/sso", json={"assertion": assertion})
        self.token = reply["token"]
        return reply

    def register_key(self, public_key: str) -> dict:
        return self.request(
            "POST", "/auth/key", token=self.token, json={"publicKey": public_key}
        )

    def issue_challenge(self) -> str:
        return self.request("POST", "/auth/challenge", token=self.token)["challenge"]

    def answer_challenge(self, challenge: str, signature: str) -> dict:
        return self.request(
            "POST",
            "/auth/challenge/answer",
            token=self.token,
            json={"challenge": challenge, "signature": signature},
        )

    def submit_batch(self, batch: dict) -> dict:
        return self.request("POST", "/batches", token=self.token, json={"batch": batch})

    def batch_status(self, batch_id: str) -> dict:
        return self.request("GET", f"/batches/{batch_id}/status", token=self.token)

    def read_state(self, address: str) -> dict:
        return self.request("GET", f"/state/{address}", token=self.token)

    def wait_terminal(self, batch_id: str, budget: float) -> dict:
        deadline = time.monotonic() + budget
        status = self.batch_status(batch_id)
        while status["status"] not in TERMINAL_STATUSES:
            if time.monotonic() >= deadline:
                raise CliError(
                    f"batch {batch_id[:16]} still {status['status']} after {budget:.0f}s",
                    EXIT_NODE,
                )
            time.sleep(POLL_SECONDS)
            status = self.batch_status(batch_id)
        return status


class ServiceClient(_Http):
    def __init__(self, base_url: str, timeout: float = 30.0):
        super().__init__(base_url, timeout)

    def info(self) -> dict:
        doc = self.request("GET", "/info")
        doc["endpoint"] = self.base_url
        return doc

    def create_account(self, username: str, password: str) -> dict:
        return self.request(
            "POST", "/accounts", json={"username": username, "password": password}
        )

    def authenticate(self, username: str, password: str) -> dict:
        return self.request(
            "POST", "/auth", json={"username": username, "password": password}
        )
