"""SSE follower: keeps a subscription service fed from a node's /events."""

from __future__ import annotations

import logging
from typing import Callable

import httpx

from ..canonical import canonical_loads
from ..ledger import EventRecord

log = logging.getLogger(__name__)

RETRY_SECONDS = 0.5


def parse_event_line(line: str) -> EventRecord | None:
    if not line.startswith("data: "):
        return None
    doc = canonical_loads(line[6:])
    return EventRecord(
        height=doc["height"],
        index=doc["index"],
        kind=doc["kind"],
        attributes=tuple((k, v) for k, v in doc["attributes"]),
        data=doc["data"],
    )


def follow_events(
    base_url: str,
    params: dict,
    on_record: Callable[[EventRecord], None],
    should_stop: Callable[[], bool],
    from_height: int = 0,
) -> None:
    """Stream events, reconnecting from the last seen height until told
    to stop. Runs in the caller's thread; give it a daemon thread."""
    cursor = from_height
    while not should_stop():
        query = dict(params, from_height=cursor)
        try:
            with httpx.Client(timeout=httpx.Timeout(5.0, read=30.0)) as client:
                with client.stream("GET", f"{base_url}/events", params=query) as reply:
                    reply.raise_for_status()
                    for line in reply.iter_lines():
                        if should_stop():
                            return
                        record = parse_event_line(line)
                        if record is None:
                            continue
                        on_record(record)
                        cursor = max(cursor, record.height)
        except httpx.HTTPError as exc:
            log.debug("event stream dropped (%s); reconnecting", exc)
        if not should_stop():
            import time

            time.sleep(RETRY_SECONDS)
