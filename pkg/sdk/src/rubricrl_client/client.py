"""HTTP client for the reward service's /v1/score endpoint.

Training loops hand over equal-length lists of problem ids and trajectory
texts; the client splits them into chunks the server will accept, retries
transient failures, and folds the responses back into arrays aligned with
the inputs. The wire contract is pinned in the service repository's
INTERFACE.md; this module hardcodes nothing about reward semantics beyond
the field names it reads.
"""

import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import httpx
import numpy as np

# Major wire version this client understands; checked against /v1/health
# once per client instance before the first scoring call.
INTERFACE_VERSION = "1"


class ClientError(Exception):
    """Base class for everything this client raises on purpose."""


class IncompatibleInterface(ClientError):
    """The server reports a wire version this client was not built for."""


class ServiceUnavailable(ClientError):
    """Connection failures or 503s persisted through every retry."""


class RequestRejected(ClientError):
    """The server rejected the request (4xx); retrying would not help."""

    def __init__(self, status: int, detail: Any):
        super().__init__(f"request rejected with status {status}: {detail}")
        self.status = status
        self.detail = detail


@dataclass(frozen=True)
class ClientConfig:
    """Connection settings.

    token_env names an environment variable holding the bearer token; empty
    disables auth. max_batch caps items per request (the server enforces its
    own cap too). parallel_chunks > 1 issues chunk requests concurrently;
    responses are still folded in input order.
    """

    base_url: str
    token_env: str = ""
    request_timeout: float = 30.0
    max_retries: int = 3
    max_batch: int = 256
    backoff: float = 0.25
    parallel_chunks: int = 1

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.max_retries < 1:
            raise ValueError(f"max_retries must be >= 1, got {self.max_retries}")
        if self.request_timeout <= 0:
            raise ValueError(f"request_timeout must be > 0, got {self.request_timeout}")
        if self.parallel_chunks < 1:
            raise ValueError(f"parallel_chunks must be >= 1, got {self.parallel_chunks}")


@dataclass(eq=False)
class ScoreResult:
    """Arrays aligned with the score() inputs.

    rewards: float64, NaN at positions the judge failed on.
    advantages: float64 aligned the same way, or None when grouping was not
    requested. Items whose problem formed no group in their chunk (single
    occurrence, or all siblings failed) are NaN.
    failures: one dict per failed item: index (input position), the server's
    trajectory_id, and its reason string.
    """

    rewards: np.ndarray
    advantages: Optional[np.ndarray]
    failures: list = field(default_factory=list)


def _position(trajectory_id: str) -> int:
    return int(trajectory_id.rsplit(":", 1)[1])


class RewardClient:
    """Synchronous client; one instance is safe for concurrent calls.

    The scoring endpoint is pure, so retries never duplicate side effects.
    """

    def __init__(self, config: ClientConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.request_timeout,
            transport=transport,
        )
        self._version_lock = threading.Lock()
        self._version_checked = False

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "RewardClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _headers(self) -> dict:
        if not self.config.token_env:
            return {}
        token = os.environ.get(self.config.token_env, "")
        return {"Authorization": f"Bearer {token}"} if token else {}

    def _request(self, method: str, path: str, json_body: Optional[dict] = None) -> httpx.Response:
        last_error: Optional[Exception] = None
        for attempt in range(self.config.max_retries):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                response = self._http.request(method, path, json=json_body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if response.status_code == 503:
                last_error = ServiceUnavailable(f"503 from {path}: {response.text}")
                continue
            if 400 <= response.status_code < 500:
                detail: Any
                try:
                    detail = response.json().get("detail")
                except ValueError:
                    detail = response.text
                raise RequestRejected(response.status_code, detail)
            return response
        raise ServiceUnavailable(
            f"{method} {path} failed after {self.config.max_retries} attempts"
        ) from last_error

    def health(self) -> dict:
        return self._request("GET", "/v1/health").json()

    def _ensure_compatible(self) -> None:
        if self._version_checked:
            return
        with self._version_lock:
            if self._version_checked:
                return
            reported = str(self.health().get("interface_version"))
            if reported != INTERFACE_VERSION:
                raise IncompatibleInterface(
                    f"server speaks interface version {reported!r}, "
                    f"this client requires {INTERFACE_VERSION!r}"
                )
            self._version_checked = True

    def _score_chunk(self, items: list, lambda_override: Optional[float], grouped: bool) -> dict:
        body: dict = {"items": items, "group_by_problem": grouped}
        if lambda_override is not None:
            body["lambda_override"] = lambda_override
        return self._request("POST", "/v1/score", json_body=body).json()

    def score(
        self,
        problem_ids: Sequence[str],
        texts: Sequence[str],
        lambda_override: Optional[float] = None,
        group_by_problem: bool = False,
    ) -> ScoreResult:
        """Score trajectories; outputs align with input positions.

        Inputs are split into chunks of at most max_batch items, so the
        server normalizes advantage groups within each chunk, not across
        the whole call; keep a rollout group inside one chunk if that
        distinction matters.
        """
        if len(problem_ids) != len(texts):
            raise ValueError(
                f"problem_ids and texts must have equal length, "
                f"got {len(problem_ids)} and {len(texts)}"
            )
        n = len(problem_ids)
        if n == 0:
            raise ValueError("scoring requires at least one item")
        self._ensure_compatible()

        offsets = list(range(0, n, self.config.max_batch))
        chunks = [
            [
                {"problem_id": str(problem_ids[i]), "raw_text": str(texts[i])}
                for i in range(start, min(start + self.config.max_batch, n))
            ]
            for start in offsets
        ]
        if self.config.parallel_chunks > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.config.parallel_chunks) as pool:
                bodies = list(
                    pool.map(lambda c: self._score_chunk(c, lambda_override, group_by_problem), chunks)
                )
        else:
            bodies = [self._score_chunk(c, lambda_override, group_by_problem) for c in chunks]

        rewards = np.full(n, np.nan, dtype=np.float64)
        advantages = np.full(n, np.nan, dtype=np.float64) if group_by_problem else None
        failures: list = []
        for offset, body in zip(offsets, bodies):
            # group advantages are listed in record order within each problem
            group_iters = {
                group["problem_id"]: iter(group["advantages"])
                for group in (body.get("advantage_groups") or ())
            }
            for record in body["records"]:
                index = offset + _position(record["trajectory_id"])
                rewards[index] = record["combined_reward"]
                if advantages is not None:
                    problem_id = record["trajectory_id"].rsplit(":", 1)[0]
                    advantages[index] = next(group_iters.get(problem_id, iter(())), np.nan)
            for failure in body["judge_failures"]:
                failures.append({"index": offset + _position(failure["trajectory_id"]), **failure})
        return ScoreResult(rewards=rewards, advantages=advantages, failures=failures)
