"""HTTP client for external model-backed scorers (Q2 variants, optional
specificity override).

Wire protocol: ``POST {base_url}/score`` with body
``{"metric": <name>, "items": [{"utterance", "knowledge", "reference"}]}``;
the response must be ``{"scores": [<float in [0,1]>, ...]}`` with one score
per item. Any other response shape is a protocol error. Unreachable or
timing-out endpoints are handled per the endpoint's unavailable policy.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import httpx

from .dialogue import RewardVector

KNOWN_METRICS = frozenset({"k_prec", "q2_f1", "q2_nli", "specificity"})


class ScorerError(Exception):
    """Base class for scorer client failures."""


class ScorerUnavailable(ScorerError):
    """The endpoint could not be reached (and the policy is fail)."""


class ScorerProtocolError(ScorerError):
    """The endpoint answered with an invalid response."""


class UnavailablePolicy(str, Enum):
    OMIT = "omit"
    FAIL = "fail"


@dataclass(frozen=True)
class ScorerEndpoint:
    base_url: str
    metric_names: frozenset[str]
    timeout: float = 30.0
    unavailable_policy: UnavailablePolicy = UnavailablePolicy.OMIT

    def __post_init__(self) -> None:
        if not self.metric_names:
            raise ValueError("metric_names must be non-empty")
        unknown = self.metric_names - KNOWN_METRICS
        if unknown:
            raise ValueError(f"unknown scorer metrics: {sorted(unknown)}")


@dataclass(frozen=True)
class ScoreItem:
    utterance: str
    knowledge: str
    reference: str | None = None


def _fetch_metric(
    endpoint: ScorerEndpoint,
    metric: str,
    items: list[ScoreItem],
    client: httpx.Client,
) -> list[float] | None:
    """One metric's scores for all items, or None when unavailable under the
    omit policy."""
    url = endpoint.base_url.rstrip("/") + "/score"
    body = {
        "metric": metric,
        "items": [
            {"utterance": it.utterance, "knowledge": it.knowledge, "reference": it.reference}
            for it in items
        ],
    }
    try:
        response = client.post(url, json=body, timeout=endpoint.timeout)
    except (httpx.TimeoutException, httpx.TransportError) as exc:
        if endpoint.unavailable_policy is UnavailablePolicy.FAIL:
            raise ScorerUnavailable(f"scorer {url} unreachable for {metric}: {exc}") from exc
        return None
    if response.status_code >= 500:
        if endpoint.unavailable_policy is UnavailablePolicy.FAIL:
            raise ScorerUnavailable(f"scorer {url} returned {response.status_code} for {metric}")
        return None
    if response.status_code != 200:
        raise ScorerProtocolError(f"scorer {url} returned {response.status_code} for {metric}")

    try:
        payload = response.json()
        scores = payload["scores"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ScorerProtocolError(f"scorer response for {metric} is not {{'scores': [...]}}") from exc
    if not isinstance(scores, list) or len(scores) != len(items):
        raise ScorerProtocolError(
            f"scorer returned {len(scores) if isinstance(scores, list) else 'non-list'} "
            f"scores for {len(items)} items ({metric})"
        )
    out: list[float] = []
    for s in scores:
        if not isinstance(s, (int, float)) or isinstance(s, bool) or not 0.0 <= s <= 1.0:
            raise ScorerProtocolError(f"scorer score {s!r} outside [0, 1] for {metric}")
        out.append(float(s))
    return out


def request_scores(
    endpoint: ScorerEndpoint,
    items: list[ScoreItem],
    client: httpx.Client | None = None,
) -> list[RewardVector]:
    """Score every item for every metric the endpoint is configured for.

    Returns one partial :class:`RewardVector` per item, in input order.
    Under the omit policy, unavailable metrics are simply absent from the
    vectors; under fail, unavailability raises :class:`ScorerUnavailable`.
    """
    if not items:
        raise ValueError("items must be non-empty")
    owns_client = client is None
    client = client or httpx.Client()
    try:
        per_metric: dict[str, list[float]] = {}
        for metric in sorted(endpoint.metric_names):
            scores = _fetch_metric(endpoint, metric, items, client)
            if scores is not None:
                per_metric[metric] = scores
        return [
            RewardVector(**{metric: scores[i] for metric, scores in per_metric.items()})
            for i in range(len(items))
        ]
    finally:
        if owns_client:
            client.close()
