"""Python bindings for the climate-intervention emulation workbench."""

import json as _json

from ._climemu import (  # noqa: F401
    ClimemuError,
    Session,
    csv_escape,
    csv_header,
    default_projections,
    default_sites_json,
    fnv1a64,
    grid,
    run_cli,
    vertex_count,
)


def request(session, method, path, query=None, body=None):
    """Calls the API in-process and decodes a JSON body."""
    payload = "" if body is None else (body if isinstance(body, str) else _json.dumps(body))
    status, content_type, text = session.handle(method, path, query or {}, payload)
    if content_type.startswith("application/json"):
        return status, _json.loads(text)
    return status, text
