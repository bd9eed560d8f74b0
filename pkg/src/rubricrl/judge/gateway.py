"""Judge gateway: renders prompts, calls a judge endpoint, parses verdicts.

One retry loop covers both failure kinds: transport errors and unparseable
output are each retried up to max_retries times, then surfaced as typed
errors. Failures are never converted into scores; silently zeroing a
failed judgment would bias group advantages.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence, TypeVar

import httpx

from ..errors import (
    InvariantViolation,
    JudgeUnavailable,
    UnparseableVerdict,
)
from ..records import RubricCriterion, RubricSet, Trajectory
from .templates import SCORING_TEMPLATES, TemplateId, TemplateStore

T = TypeVar("T")


@dataclass(frozen=True)
class JudgeRequest:
    """One judge call: a template id plus the slot values to render it with."""

    template_id: TemplateId
    slots: Mapping[str, str]
    max_output_tokens: int = 512
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_output_tokens < 1:
            raise InvariantViolation("JudgeRequest", "max_output_tokens must be >= 1")
        if self.temperature < 0:
            raise InvariantViolation("JudgeRequest", "temperature must be >= 0")
        if self.template_id in SCORING_TEMPLATES and self.temperature != 0:
            raise InvariantViolation(
                "JudgeRequest",
                f"scoring template {self.template_id.value} requires temperature 0",
            )


@dataclass(frozen=True)
class JudgeVerdicts:
    """Ordered per-criterion booleans plus the raw judge output they came from."""

    verdicts: tuple[bool, ...]
    raw_response: str


@dataclass(frozen=True)
class JudgeEndpointConfig:
    """Connection settings for a remote chat-completion judge."""

    base_url: str
    model_name: str
    api_key_env: str = "JUDGE_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 8
    cache_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise InvariantViolation("JudgeEndpointConfig", "max_concurrency must be >= 1")
        if not (self.timeout > 0):
            raise InvariantViolation("JudgeEndpointConfig", "timeout must be > 0")
        if self.max_retries < 0:
            raise InvariantViolation("JudgeEndpointConfig", "max_retries must be >= 0")


class JudgeClient(Protocol):
    """Transport interface: one rendered prompt in, one completion text out."""

    def complete(self, request: JudgeRequest, prompt: str) -> str: ...


# Output parsers ---------------------------------------------------------

_VERDICT_LINE = re.compile(r"^\s*(\d+)\s*[:.)\-]\s*(yes|no)\b", re.IGNORECASE | re.MULTILINE)
_FRACTION = re.compile(r"(\d+(?:\.\d+)?)\s*/\s*(\d+(?:\.\d+)?)")
_PERCENT = re.compile(r"(\d+(?:\.\d+)?)\s*%")
_REAL = re.compile(r"\d+(?:\.\d+)?")
_INCONSISTENT = re.compile(r"\bINCONSISTENT\b", re.IGNORECASE)
_CONSISTENT = re.compile(r"\bCONSISTENT\b", re.IGNORECASE)


def parse_verdicts(text: str, expected_count: int) -> tuple[bool, ...]:
    """Parse "index: YES|NO" lines; requires indices 1..expected_count exactly.

    Surrounding prose is ignored. A repeated index with a conflicting value
    is unparseable; a missing or extra index is unparseable.
    """
    found: dict[int, bool] = {}
    for m in _VERDICT_LINE.finditer(text):
        idx = int(m.group(1))
        value = m.group(2).lower() == "yes"
        if idx in found and found[idx] != value:
            raise UnparseableVerdict(f"conflicting verdicts for criterion {idx}")
        found[idx] = value
    expected = set(range(1, expected_count + 1))
    if set(found) != expected:
        raise UnparseableVerdict(
            f"expected verdict indices 1..{expected_count}, got {sorted(found)}"
        )
    return tuple(found[i] for i in range(1, expected_count + 1))


def parse_holistic(text: str) -> float:
    """Parse a scalar score: "a/b" fraction, "p%" percent, or a bare real.

    The last match wins (the judge's final statement is its commitment);
    the result is clamped to [0, 1].
    """
    fractions = list(_FRACTION.finditer(text))
    if fractions:
        num, den = float(fractions[-1].group(1)), float(fractions[-1].group(2))
        if den == 0:
            raise UnparseableVerdict("zero denominator in score fraction")
        return min(1.0, max(0.0, num / den))
    percents = list(_PERCENT.finditer(text))
    if percents:
        return min(1.0, max(0.0, float(percents[-1].group(1)) / 100.0))
    reals = list(_REAL.finditer(text))
    if reals:
        return min(1.0, max(0.0, float(reals[-1].group(0))))
    raise UnparseableVerdict("no numeric score found in judge output")


def parse_faithfulness(text: str) -> bool:
    """True iff the judge declared the reasoning CONSISTENT with its answer."""
    if _INCONSISTENT.search(text):
        return False
    if _CONSISTENT.search(text):
        return True
    raise UnparseableVerdict("expected CONSISTENT or INCONSISTENT in judge output")


def render_criteria(criteria: Sequence[RubricCriterion]) -> str:
    return "\n".join(f"{c.index}. {c.text}" for c in criteria)


# Remote transport --------------------------------------------------------


class RemoteJudgeClient:
    """Chat-completion transport speaking the common JSON wire format.

    The request body is serialized once per call with sorted keys, so the
    bytes are identical when the gateway retries. Any connection problem or
    non-200 status surfaces as JudgeUnavailable; retry policy lives in the
    gateway, not here.
    """

    def __init__(self, config: JudgeEndpointConfig):
        self.config = config
        self._client = httpx.Client(timeout=config.timeout)
        self._cache_dir = Path(config.cache_dir) if config.cache_dir else None
        if self._cache_dir:
            self._cache_dir.mkdir(parents=True, exist_ok=True)

    def build_body(self, request: JudgeRequest, prompt: str) -> bytes:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def complete(self, request: JudgeRequest, prompt: str) -> str:
        body = self.build_body(request, prompt)
        cache_path = None
        if self._cache_dir:
            digest = hashlib.sha256(body).hexdigest()
            cache_path = self._cache_dir / f"{digest}.txt"
            if cache_path.exists():
                return cache_path.read_text(encoding="utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.api_key_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            response = self._client.post(url, content=body, headers=headers)
        except httpx.HTTPError as exc:
            raise JudgeUnavailable(f"judge endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise JudgeUnavailable(f"judge endpoint returned status {response.status_code}")
        try:
            text = response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise JudgeUnavailable(f"malformed completion payload: {exc}") from exc
        if cache_path is not None:
            tmp = cache_path.with_suffix(".tmp")
            tmp.write_text(text, encoding="utf-8")
            tmp.replace(cache_path)
        return text

    def close(self) -> None:
        self._client.close()


# Gateway ------------------------------------------------------------------


class JudgeGateway:
    """Thread-safe front door to one judge: bounded concurrency plus retries."""

    def __init__(
        self,
        client: JudgeClient,
        templates: Optional[TemplateStore] = None,
        max_retries: int = 3,
        max_concurrency: int = 8,
        retry_backoff: float = 0.0,
    ):
        if max_concurrency < 1:
            raise InvariantViolation("JudgeGateway", "max_concurrency must be >= 1")
        if max_retries < 0:
            raise InvariantViolation("JudgeGateway", "max_retries must be >= 0")
        self.client = client
        self.templates = templates or TemplateStore.default()
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        self._slots = threading.BoundedSemaphore(max_concurrency)

    @classmethod
    def from_endpoint(
        cls, config: JudgeEndpointConfig, templates: Optional[TemplateStore] = None,
        retry_backoff: float = 0.5,
    ) -> "JudgeGateway":
        return cls(
            RemoteJudgeClient(config),
            templates=templates,
            max_retries=config.max_retries,
            max_concurrency=config.max_concurrency,
            retry_backoff=retry_backoff,
        )

    def request_with_parse(self, request: JudgeRequest, parser: Callable[[str], T]) -> tuple[T, str]:
        """Render once, then attempt transport+parse up to 1+max_retries times.

        The rendered prompt (and therefore the transport body) is identical
        across attempts. Raises the last error when attempts are exhausted.
        """
        prompt = self.templates.render(request.template_id, request.slots)
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt and self.retry_backoff > 0:
                time.sleep(self.retry_backoff * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    raw = self.client.complete(request, prompt)
            except JudgeUnavailable as exc:
                last_error = exc
                continue
            try:
                return parser(raw), raw
            except UnparseableVerdict as exc:
                last_error = exc
                continue
        assert last_error is not None
        raise last_error

    def score_against_rubrics(self, trajectory: Trajectory, rubrics: RubricSet) -> JudgeVerdicts:
        """One boolean per criterion, judged from the trajectory text alone."""
        if not rubrics.criteria:
            raise InvariantViolation("RubricSet", "criteria must be non-empty")
        m = len(rubrics.criteria)
        request = JudgeRequest(
            template_id=TemplateId.RUBRIC_SCORING,
            slots={
                "criteria": render_criteria(rubrics.criteria),
                "trajectory": trajectory.raw_text,
                "problem_id": trajectory.problem_id,
                "trajectory_id": trajectory.trajectory_id,
            },
            max_output_tokens=32 * m + 64,
            temperature=0.0,
        )
        verdicts, raw = self.request_with_parse(request, lambda text: parse_verdicts(text, m))
        return JudgeVerdicts(verdicts=verdicts, raw_response=raw)

    def holistic_score(self, trajectory: Trajectory) -> float:
        """Single scalar quality score in [0, 1] for the whole trajectory."""
        if not trajectory.raw_text:
            raise InvariantViolation("Trajectory", "raw_text must be non-empty for scoring")
        request = JudgeRequest(
            template_id=TemplateId.HOLISTIC_SCORING,
            slots={
                "trajectory": trajectory.raw_text,
                "problem_id": trajectory.problem_id,
                "trajectory_id": trajectory.trajectory_id,
            },
            max_output_tokens=64,
            temperature=0.0,
        )
        score, _ = self.request_with_parse(request, parse_holistic)
        return score

    def check_faithfulness(self, trajectory: Trajectory) -> bool:
        """True iff the judge finds the reasoning consistent with the answer."""
        if not trajectory.raw_text:
            raise InvariantViolation("Trajectory", "raw_text must be non-empty for scoring")
        request = JudgeRequest(
            template_id=TemplateId.FAITHFULNESS_CHECK,
            slots={
                "trajectory": trajectory.raw_text,
                "problem_id": trajectory.problem_id,
                "trajectory_id": trajectory.trajectory_id,
            },
            max_output_tokens=16,
            temperature=0.0,
        )
        consistent, _ = self.request_with_parse(request, parse_faithfulness)
        return consistent
