"""HTTP client for external labeling and embedding services.

The protocol is a small JSON contract (documented in docs/formats.md):

* ``POST {base}/classify`` body ``{"turns": [{"text", "weight"}, ...]}``
  with turns newest-first and half-decay weights; response
  ``{"labels": [...], "probs": [...]}``.
* ``POST {base}/embed`` body ``{"texts": [...]}``; response
  ``{"vectors": [[...], ...]}``.

Transport failures and 5xx responses are retried with exponential
backoff; anything else fails fast. Responses are validated before use,
so a misbehaving server can never produce an invalid Prediction.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import httpx
import numpy as np

from .classifier import Prediction
from .context import ContextWindow


class RemoteError(Exception):
    """Remote call failed after retries."""


class ProtocolError(RemoteError):
    """The server answered, but the payload violates the contract."""


@dataclass
class RemoteConfig:
    endpoint: str
    retries: int = 3
    backoff_s: float = 0.2
    timeout_s: float = 10.0
    concurrency: int = 8


def _post_with_retry(config: RemoteConfig, path: str, body: dict, client=None) -> dict:
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=config.timeout_s)
    try:
        last_error = None
        for attempt in range(config.retries):
            try:
                response = client.post(config.endpoint.rstrip("/") + path, json=body)
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if response.status_code >= 500:
                    last_error = RemoteError(
                        f"server error {response.status_code} from {path}"
                    )
                elif response.status_code >= 400:
                    raise RemoteError(
                        f"request rejected ({response.status_code}): {response.text[:200]}"
                    )
                else:
                    return response.json()
            if attempt + 1 < config.retries and config.backoff_s > 0:
                time.sleep(config.backoff_s * (2**attempt))
        raise RemoteError(
            f"{path} failed after {config.retries} attempts: {last_error}"
        )
    finally:
        if own_client:
            client.close()


def window_request_body(window: ContextWindow) -> dict:
    """Turns serialized newest-first with their half-decay weights."""
    turns = window.turns()
    weights = window.weights()
    return {
        "turns": [
            {"text": turn.text, "weight": weight}
            for turn, weight in zip(reversed(turns), reversed(weights))
        ]
    }


def classify_remote(
    config: RemoteConfig, window: ContextWindow, client=None
) -> Prediction:
    payload = _post_with_retry(config, "/classify", window_request_body(window), client)
    try:
        labels = tuple(str(x) for x in payload["labels"])
        probs = [float(p) for p in payload["probs"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed classify response: {exc}") from exc
    if len(labels) != len(probs) or not labels:
        raise ProtocolError("labels and probs must be equal-length and non-empty")
    if any(not np.isfinite(p) or p < 0 for p in probs):
        raise ProtocolError("probabilities must be finite and non-negative")
    total = sum(probs)
    if abs(total - 1.0) > 1e-6:
        raise ProtocolError(f"distribution sums to {total}, not 1")
    best = max(range(len(probs)), key=probs.__getitem__)
    return Prediction(
        top=labels[best],
        confidence=probs[best],
        distribution=tuple(probs),
        labels=labels,
    )


def classify_many(
    config: RemoteConfig, windows: list[ContextWindow], client=None
) -> list[Prediction]:
    """Classify with bounded concurrent in-flight requests."""
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=config.timeout_s)
    try:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            return list(
                pool.map(lambda w: classify_remote(config, w, client), windows)
            )
    finally:
        if own_client:
            client.close()


def embed_remote(config: RemoteConfig, texts: list[str], client=None) -> np.ndarray:
    payload = _post_with_retry(config, "/embed", {"texts": list(texts)}, client)
    try:
        vectors = np.asarray(payload["vectors"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed embed response: {exc}") from exc
    if vectors.ndim != 2 or vectors.shape[0] != len(texts):
        raise ProtocolError(
            f"expected {len(texts)} vectors, got shape {vectors.shape}"
        )
    if not np.all(np.isfinite(vectors)):
        raise ProtocolError("embedding vectors must be finite")
    return vectors
