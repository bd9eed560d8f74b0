"""Batch reward scoring over HTTP: corpus + rubric store + judge behind one API.

The service is stateless across requests: the corpus and rubric store are
read-only between explicit reloads, and the judge cache is content
addressed, so restarts mid-training are safe. With a deterministic judge,
identical request bodies produce identical response bytes.

Wire format: UTF-8 JSON whose field names mirror the core record types
exactly (see INTERFACE.md at the repository root).
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import INTERFACE_VERSION
from .engine import NoRubricPolicy, RewardConfig, combine, group_advantages, rubric_reward
from .errors import InvariantViolation, JudgeUnavailable, UnparseableVerdict
from .forge import RubricStore
from .judge.gateway import JudgeEndpointConfig, JudgeGateway, JudgeRequest
from .judge.mock import MockJudge, MockJudgeSpec
from .judge.templates import TemplateId
from .records import AdvantageGroup, ProblemInstance, RewardRecord, Trajectory, load_corpus
from .verifier import VerifierConfig, answer_reward

logger = logging.getLogger("rubricrl.service")

# Judge reachability probes are cached at most this long.
PROBE_MAX_AGE_SECONDS = 30.0


def _resolve(base: Path, value: str) -> str:
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


@dataclass(frozen=True)
class JudgeSettings:
    """Which judge to talk to: the deterministic mock or a remote endpoint."""

    mode: str = "mock"
    mock_rules_path: Optional[str] = None
    endpoint: Optional[JudgeEndpointConfig] = None
    max_retries: int = 3
    max_concurrency: int = 8

    def __post_init__(self) -> None:
        if self.mode not in ("mock", "remote"):
            raise InvariantViolation("JudgeSettings", f"unknown judge mode {self.mode!r}")
        if self.mode == "remote" and self.endpoint is None:
            raise InvariantViolation("JudgeSettings", "remote judge mode needs base_url and model_name")

    @classmethod
    def from_table(cls, judge: dict, base: Path) -> "JudgeSettings":
        mode = judge.get("mode", "mock")
        endpoint = None
        mock_rules = None
        if mode == "remote":
            cache_dir = judge.get("cache_dir")
            endpoint = JudgeEndpointConfig(
                base_url=str(judge["base_url"]),
                model_name=str(judge["model_name"]),
                api_key_env=str(judge.get("api_key_env", "JUDGE_API_KEY")),
                timeout=float(judge.get("timeout", 30.0)),
                max_retries=int(judge.get("max_retries", 3)),
                max_concurrency=int(judge.get("max_concurrency", 8)),
                cache_dir=_resolve(base, cache_dir) if cache_dir else None,
            )
        elif "rules" in judge:
            mock_rules = _resolve(base, str(judge["rules"]))
        return cls(
            mode=mode,
            mock_rules_path=mock_rules,
            endpoint=endpoint,
            max_retries=int(judge.get("max_retries", 3)),
            max_concurrency=int(judge.get("max_concurrency", 8)),
        )


def build_gateway(settings: JudgeSettings) -> JudgeGateway:
    if settings.mode == "remote":
        assert settings.endpoint is not None
        return JudgeGateway.from_endpoint(settings.endpoint)
    spec = (
        MockJudgeSpec.from_json_file(settings.mock_rules_path)
        if settings.mock_rules_path
        else MockJudgeSpec()
    )
    # Mock failures are deterministic, so backoff between retries is waste.
    return JudgeGateway(
        MockJudge(spec),
        max_retries=settings.max_retries,
        max_concurrency=settings.max_concurrency,
        retry_backoff=0.0,
    )


def gateway_from_toml(path: str | Path) -> JudgeGateway:
    """Build a judge gateway from a TOML file with (or consisting of) a [judge] table."""
    config_path = Path(path)
    data = tomllib.loads(config_path.read_text(encoding="utf-8"))
    table = data.get("judge", data)
    return build_gateway(JudgeSettings.from_table(table, config_path.resolve().parent))


@dataclass(frozen=True)
class ServiceConfig:
    """Everything the service needs, loadable from one TOML file.

    Relative paths in the file resolve against the file's directory, so a
    config travels with the artifact directory it describes.
    """

    corpus_path: str
    rubric_dir: str
    port: int = 8100
    max_batch_size: int = 512
    fanout_workers: int = 8
    auth_token_env: str = ""
    reward: RewardConfig = field(default_factory=RewardConfig)
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    judge: JudgeSettings = field(default_factory=JudgeSettings)

    def __post_init__(self) -> None:
        if self.max_batch_size < 1:
            raise InvariantViolation("ServiceConfig", "max_batch_size must be >= 1")
        if self.fanout_workers < 1:
            raise InvariantViolation("ServiceConfig", "fanout_workers must be >= 1")

    @classmethod
    def from_toml(cls, path: str | Path) -> "ServiceConfig":
        config_path = Path(path)
        base = config_path.resolve().parent
        data = tomllib.loads(config_path.read_text(encoding="utf-8"))

        service = data.get("service", {})
        paths = data.get("paths", {})
        reward = data.get("reward", {})
        verifier = data.get("verifier", {})
        judge = data.get("judge", {})

        if "corpus" not in paths or "rubric_dir" not in paths:
            raise InvariantViolation("ServiceConfig", "paths.corpus and paths.rubric_dir are required")

        reward_cfg = RewardConfig(
            lambda_=float(reward.get("lambda", 0.5)),
            std_epsilon=float(reward.get("std_epsilon", 1e-8)),
            no_rubric_policy=NoRubricPolicy(reward.get("no_rubric_policy", "answer_only")),
        )
        verifier_kwargs = {}
        if "choice_pattern" in verifier:
            verifier_kwargs["choice_pattern"] = str(verifier["choice_pattern"])
        if "numeric_tolerance" in verifier:
            verifier_kwargs["numeric_tolerance"] = float(verifier["numeric_tolerance"])
        if "case_sensitive" in verifier:
            verifier_kwargs["case_sensitive"] = bool(verifier["case_sensitive"])
        verifier_cfg = VerifierConfig(**verifier_kwargs)

        return cls(
            corpus_path=_resolve(base, str(paths["corpus"])),
            rubric_dir=_resolve(base, str(paths["rubric_dir"])),
            port=int(service.get("port", 8100)),
            max_batch_size=int(service.get("max_batch_size", 512)),
            fanout_workers=int(service.get("fanout_workers", 8)),
            auth_token_env=str(service.get("auth_token_env", "")),
            reward=reward_cfg,
            verifier=verifier_cfg,
            judge=JudgeSettings.from_table(judge, base),
        )


class ScoreItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem_id: str
    raw_text: str


class ScoreBatchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    items: list[ScoreItem]
    lambda_override: Optional[float] = None
    group_by_problem: bool = False


class ServiceState:
    """Loaded corpus, rubric store, judge gateway, and the probe cache."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.gateway = build_gateway(config.judge)
        self.auth_token = os.environ.get(config.auth_token_env, "") if config.auth_token_env else ""
        self._reload_lock = threading.Lock()
        self._probe_lock = threading.Lock()
        self._probe_at = -math.inf
        self._probe_ok = False
        self.corpus: dict[str, ProblemInstance] = {}
        self.store: Optional[RubricStore] = None  # populated by reload()
        self.reload()

    def reload(self) -> None:
        """Re-read the corpus and rubric store from disk."""
        problems = load_corpus(self.config.corpus_path)
        store = RubricStore(self.config.rubric_dir)
        with self._reload_lock:
            self.corpus = {p.problem_id: p for p in problems}
            self.store = store

    def judge_reachable(self, max_age: float = PROBE_MAX_AGE_SECONDS) -> bool:
        """Single-attempt liveness probe, cached for max_age seconds."""
        now = time.monotonic()
        with self._probe_lock:
            if now - self._probe_at <= max_age:
                return self._probe_ok
        ok = self._probe_once()
        with self._probe_lock:
            self._probe_at = time.monotonic()
            self._probe_ok = ok
        return ok

    def _probe_once(self) -> bool:
        request = JudgeRequest(
            template_id=TemplateId.HOLISTIC_SCORING,
            slots={
                "trajectory": "health probe",
                "problem_id": "__health__",
                "trajectory_id": "__health__",
            },
            max_output_tokens=16,
            temperature=0.0,
        )
        prompt = self.gateway.templates.render(request.template_id, request.slots)
        try:
            self.gateway.client.complete(request, prompt)
        except JudgeUnavailable:
            return False
        return True

    def score_batch(
        self, items: Sequence[ScoreItem], cfg: RewardConfig
    ) -> list[tuple[str, Optional[RewardRecord], Optional[dict[str, str]]]]:
        """Score every item; one (problem_id, record, failure) triple per item.

        Exactly one of record/failure is set. Results are in input order
        regardless of fan-out scheduling; trajectory ids encode the input
        position so identical bodies produce identical ids.
        """
        corpus = self.corpus
        store = self.store

        def one(index: int, item: ScoreItem):
            problem = corpus[item.problem_id]
            trajectory_id = f"{item.problem_id}:{index:05d}"
            trajectory = Trajectory.from_text(trajectory_id, item.problem_id, item.raw_text)
            ans = answer_reward(trajectory, problem.gold_answer, problem.answer_kind, self.config.verifier)
            rubrics = store.get(item.problem_id)
            if rubrics is None:
                if cfg.no_rubric_policy is NoRubricPolicy.ERROR:
                    return item.problem_id, None, {"trajectory_id": trajectory_id, "reason": "missing_rubric"}
                record = RewardRecord(
                    trajectory_id=trajectory_id,
                    answer_reward=ans,
                    rubric_reward=None,
                    verdicts=(),
                    combined_reward=combine(ans, None, cfg),
                    lambda_used=cfg.lambda_,
                )
                return item.problem_id, record, None
            try:
                verdicts = self.gateway.score_against_rubrics(trajectory, rubrics).verdicts
            except JudgeUnavailable as exc:
                return item.problem_id, None, {"trajectory_id": trajectory_id, "reason": f"judge_unavailable: {exc}"}
            except UnparseableVerdict as exc:
                return item.problem_id, None, {"trajectory_id": trajectory_id, "reason": f"unparseable: {exc}"}
            fraction = rubric_reward(verdicts)
            record = RewardRecord(
                trajectory_id=trajectory_id,
                answer_reward=ans,
                rubric_reward=fraction,
                verdicts=verdicts,
                combined_reward=combine(ans, fraction, cfg),
                lambda_used=cfg.lambda_,
            )
            return item.problem_id, record, None

        indexed = list(enumerate(items))
        workers = min(self.config.fanout_workers, len(indexed))
        if workers <= 1:
            return [one(i, item) for i, item in indexed]
        # Contiguous blocks keep per-task overhead low; concatenating the
        # block results restores input order exactly.
        block_size = -(-len(indexed) // workers)
        blocks = [indexed[s : s + block_size] for s in range(0, len(indexed), block_size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored_blocks = pool.map(lambda block: [one(i, item) for i, item in block], blocks)
            return [triple for block in scored_blocks for triple in block]


def advantage_groups_for(
    pairs: Sequence[tuple[str, RewardRecord]], cfg: RewardConfig
) -> list[AdvantageGroup]:
    """Group combined rewards by problem (first-appearance order); G >= 2 only."""
    ordered: dict[str, list[float]] = {}
    for problem_id, record in pairs:
        ordered.setdefault(problem_id, []).append(record.combined_reward)
    return [
        group_advantages(rewards, cfg, problem_id=problem_id)
        for problem_id, rewards in ordered.items()
        if len(rewards) >= 2
    ]


def _error(status: int, detail) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": detail})


def create_app(config: ServiceConfig) -> FastAPI:
    state = ServiceState(config)
    app = FastAPI(title="rubricrl reward service", version=INTERFACE_VERSION)
    app.state.service = state

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        errors = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        return _error(400, {"reason": "malformed_request", "errors": errors})

    @app.middleware("http")
    async def shared_token_auth(request: Request, call_next):
        if state.auth_token and request.url.path != "/v1/health":
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {state.auth_token}":
                return _error(401, "unauthorized")
        return await call_next(request)

    # Added last so it is outermost: auth rejections get logged too.
    @app.middleware("http")
    async def access_log(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        line = {
            "duration_ms": round((time.perf_counter() - start) * 1000.0, 3),
            "method": request.method,
            "path": request.url.path,
            "status": response.status_code,
            "ts": round(time.time(), 3),
        }
        logger.info(json.dumps(line, sort_keys=True))
        return response

    @app.post("/v1/score")
    def score(body: ScoreBatchRequest):
        if not body.items:
            return _error(400, {"reason": "empty_batch"})
        if len(body.items) > state.config.max_batch_size:
            return _error(
                400,
                {
                    "reason": "oversized_batch",
                    "size": len(body.items),
                    "max_batch_size": state.config.max_batch_size,
                },
            )
        if body.lambda_override is not None and not (0.0 <= body.lambda_override <= 1.0):
            return _error(400, {"reason": "lambda_out_of_range", "value": body.lambda_override})
        unknown = sorted({item.problem_id for item in body.items if item.problem_id not in state.corpus})
        if unknown:
            return JSONResponse(
                status_code=404,
                content={"detail": {"reason": "unknown_problem", "problem_ids": unknown}},
            )

        cfg = (
            state.config.reward
            if body.lambda_override is None
            else replace(state.config.reward, lambda_=float(body.lambda_override))
        )
        outcomes = state.score_batch(body.items, cfg)
        records = [(pid, record) for pid, record, _ in outcomes if record is not None]
        failures = [failure for _, _, failure in outcomes if failure is not None]

        if not records and failures and all(f["reason"].startswith("judge_unavailable") for f in failures):
            return JSONResponse(
                status_code=503,
                content={"detail": {"reason": "judge_unavailable", "judge_failures": failures}},
            )

        payload = {
            "records": [record.to_dict() for _, record in records],
            "advantage_groups": (
                [group.to_dict() for group in advantage_groups_for(records, cfg)]
                if body.group_by_problem
                else None
            ),
            "judge_failures": failures,
        }
        return JSONResponse(content=payload)

    @app.get("/v1/rubrics/{problem_id}")
    def get_rubrics(problem_id: str):
        rubric_set = state.store.get(problem_id)
        if rubric_set is not None:
            return JSONResponse(content=rubric_set.to_dict())
        reason = "no_rubric" if problem_id in state.corpus else "unknown_problem"
        return JSONResponse(
            status_code=404, content={"detail": {"reason": reason, "problem_id": problem_id}}
        )

    @app.get("/v1/health")
    def health():
        reachable = state.judge_reachable()
        return JSONResponse(
            content={
                "status": "ok" if reachable else "degraded",
                "judge_reachable": reachable,
                "rubric_count": len(state.store),
                "corpus_count": len(state.corpus),
                "interface_version": INTERFACE_VERSION,
            }
        )

    @app.post("/-/reload")
    def reload_store():
        state.reload()
        return JSONResponse(
            content={
                "reloaded": True,
                "rubric_count": len(state.store),
                "corpus_count": len(state.corpus),
            }
        )

    return app


def create_app_from_toml(path: str | Path) -> FastAPI:
    return create_app(ServiceConfig.from_toml(path))
