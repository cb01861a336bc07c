"""Optional remote instruction interpreter over HTTP.

Sends {"prompt": ..., "image_b64": ...} as JSON POST and expects
{"text": ...} back.  Any transport failure, non-2xx status, timeout, or
malformed payload maps to InterpreterUnavailable so callers can fall back to
the built-in rule engine.  Requests on one client are serialized by a lock,
making a shared instance thread-safe.
"""

from __future__ import annotations

import base64
import json
import threading
import urllib.error
import urllib.request

from .errors import InterpreterUnavailable


class RemoteInterpreter:
    def __init__(self, endpoint: str, timeout: float = 10.0, retries: int = 2):
        if not endpoint:
            raise InterpreterUnavailable("no endpoint configured")
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self._lock = threading.Lock()

    def query(self, prompt: str, image) -> str:
        """Prompt + image (bytes or str) -> response text."""
        if isinstance(image, bytes):
            image_b64 = base64.b64encode(image).decode("ascii")
        else:
            image_b64 = base64.b64encode(str(image).encode("utf-8")).decode("ascii")
        body = json.dumps({"prompt": prompt, "image_b64": image_b64}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint, data=body,
            headers={"Content-Type": "application/json"}, method="POST")
        last_error = None
        with self._lock:
            for _attempt in range(1 + self.retries):
                try:
                    with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                        if not 200 <= resp.status < 300:
                            raise InterpreterUnavailable(
                                f"interpreter returned HTTP {resp.status}")
                        payload = resp.read()
                    try:
                        obj = json.loads(payload)
                    except json.JSONDecodeError as exc:
                        raise InterpreterUnavailable(
                            f"interpreter sent malformed JSON: {exc}") from exc
                    if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
                        raise InterpreterUnavailable(
                            "interpreter response missing string field 'text'")
                    return obj["text"]
                except InterpreterUnavailable as exc:
                    last_error = exc
                except (urllib.error.URLError, urllib.error.HTTPError,
                        TimeoutError, OSError) as exc:
                    last_error = InterpreterUnavailable(
                        f"interpreter request failed: {exc}")
        raise last_error
