"""Uniform interface to a generative judge, remote or mocked."""

from .gateway import (
    JudgeClient,
    JudgeEndpointConfig,
    JudgeGateway,
    JudgeRequest,
    JudgeVerdicts,
    RemoteJudgeClient,
    parse_faithfulness,
    parse_holistic,
    parse_verdicts,
    render_criteria,
)
from .mock import MockJudge, MockJudgeSpec
from .templates import SCORING_TEMPLATES, TemplateId, TemplateStore

__all__ = [
    "JudgeClient",
    "JudgeEndpointConfig",
    "JudgeGateway",
    "JudgeRequest",
    "JudgeVerdicts",
    "MockJudge",
    "MockJudgeSpec",
    "RemoteJudgeClient",
    "SCORING_TEMPLATES",
    "TemplateId",
    "TemplateStore",
    "parse_faithfulness",
    "parse_holistic",
    "parse_verdicts",
    "render_criteria",
]
