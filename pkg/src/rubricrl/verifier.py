"""Outcome reward: extract a final answer from a trajectory and match it to gold.

Extraction and matching are deterministic and rule-based so the training
loop never blocks on a model call for the binary answer reward. All
functions are pure.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import InvariantViolation, NoAnswerFound
from .records import AnswerKind, Trajectory

# Phrases that introduce a model's committed answer. Ordered alternation is
# irrelevant: we only care about the LAST marker occurrence in the text.
_ANSWER_MARKER = re.compile(
    r"(?:final\s+answer|the\s+answer\s+is|correct\s+option|answer|ans|option)\s*(?:is)?\s*[:=]?",
    re.IGNORECASE,
)

# \boxed{...} is treated as a marker+span in one: common in math traces.
_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")

_TRAILING_PUNCT = re.compile(r"[\s.,;:!?]+$")
_WS = re.compile(r"\s+")

# A number, optionally signed, with optional decimal part and exponent.
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

# Trailing unit tokens allowed after a number ("12 cm", "45 degrees").
_TRAILING_UNIT = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*[a-zA-Z°%]+\.?$")


@dataclass(frozen=True)
class VerifierConfig:
    """Extraction pattern and matching tolerances for the answer verifier."""

    choice_pattern: str = r"\b([A-Z])\b"
    numeric_tolerance: float = 1e-6
    case_sensitive: bool = False

    def __post_init__(self) -> None:
        if not (self.numeric_tolerance > 0):
            raise InvariantViolation("VerifierConfig", "numeric_tolerance must be > 0")
        try:
            pat = re.compile(self.choice_pattern)
        except re.error as exc:
            raise InvariantViolation("VerifierConfig", f"choice_pattern does not compile: {exc}")
        if pat.groups < 1:
            raise InvariantViolation("VerifierConfig", "choice_pattern must have a capture group")


DEFAULT_VERIFIER_CONFIG = VerifierConfig()

# Standalone letters likely to be prose words rather than option labels.
# Only applied when no answer marker anchors the search.
_PROSE_LETTERS = frozenset("AI")


def _last_marker_end(text: str) -> int | None:
    """End offset of the last answer marker (or \\boxed content start), if any."""
    last = None
    for m in _ANSWER_MARKER.finditer(text):
        last = m
    boxed = None
    for b in _BOXED.finditer(text):
        boxed = b
    if last is None and boxed is None:
        return None
    if boxed is not None and (last is None or boxed.start() > last.start()):
        return boxed.start(1)
    return last.end()


def _extract_choice(text: str, cfg: VerifierConfig) -> str:
    pattern = re.compile(cfg.choice_pattern)
    marker_end = _last_marker_end(text)
    if marker_end is not None:
        region = text[marker_end:]
        candidates = [m.group(1) for m in pattern.finditer(region)]
        if candidates:
            return candidates[-1]
        # Fall through: marker present but no letter after it; search whole text.
    candidates = [
        m.group(1)
        for m in pattern.finditer(text)
        if m.group(1) not in _PROSE_LETTERS
    ]
    if not candidates:
        raise NoAnswerFound("no option letter found in trajectory text")
    return candidates[-1]


def _extract_free_form(text: str) -> str:
    marker_end = _last_marker_end(text)
    if marker_end is None:
        raise NoAnswerFound("no answer marker found in trajectory text")
    boxed = None
    for b in _BOXED.finditer(text):
        boxed = b
    if boxed is not None and boxed.start(1) == marker_end:
        span = boxed.group(1)
    else:
        # Take the rest of the marker's line; if empty, the next non-empty line.
        rest = text[marker_end:]
        line, _, remainder = rest.partition("\n")
        span = line.strip()
        while not span and remainder:
            line, _, remainder = remainder.partition("\n")
            span = line.strip()
    span = _TRAILING_PUNCT.sub("", span).strip()
    if not span:
        raise NoAnswerFound("answer marker present but no answer span follows it")
    return span


def extract_final_answer(trajectory: Trajectory, kind: AnswerKind, cfg: VerifierConfig | None = None) -> str:
    """Pull the committed final answer out of a trajectory's raw text.

    Last match wins: trajectories often restate options mid-reasoning, and
    the final statement is the model's commitment.
    """
    cfg = cfg or DEFAULT_VERIFIER_CONFIG
    text = trajectory.raw_text
    if not text:
        raise NoAnswerFound("trajectory raw_text is empty")
    if kind is AnswerKind.MULTIPLE_CHOICE:
        return _extract_choice(text, cfg)
    return _extract_free_form(text)


def normalize_free_form(text: str, case_sensitive: bool = False) -> str:
    """Normalize a free-form answer span for string comparison."""
    out = text.strip()
    out = _TRAILING_PUNCT.sub("", out)
    out = _WS.sub(" ", out)
    if out.startswith("$"):
        stripped = out[1:].strip()
        if _NUMBER.match(stripped.replace(",", "")):
            out = stripped
    unit_match = _TRAILING_UNIT.match(out)
    if unit_match:
        out = unit_match.group(1)
    out = out.replace(",", "") if _NUMBER.match(out.replace(",", "")) else out
    if not case_sensitive:
        out = out.lower()
    return out


def _as_number(text: str) -> float | None:
    if _NUMBER.match(text):
        try:
            return float(text)
        except ValueError:
            return None
    return None


def verify(
    predicted: str | None,
    gold: str,
    kind: AnswerKind,
    cfg: VerifierConfig | None = None,
) -> float:
    """Binary outcome reward: 1.0 iff predicted matches gold under kind rules."""
    cfg = cfg or DEFAULT_VERIFIER_CONFIG
    if not gold:
        raise InvariantViolation("VerifierConfig", "gold answer must be non-empty")
    if predicted is None:
        return 0.0
    if kind is AnswerKind.MULTIPLE_CHOICE:
        return 1.0 if predicted.strip().upper() == gold.strip().upper() else 0.0
    p = normalize_free_form(predicted, cfg.case_sensitive)
    g = normalize_free_form(gold, cfg.case_sensitive)
    pn, gn = _as_number(p), _as_number(g)
    if pn is not None and gn is not None:
        tol = cfg.numeric_tolerance
        return 1.0 if math.isclose(pn, gn, rel_tol=tol, abs_tol=tol) else 0.0
    return 1.0 if p == g else 0.0


def answer_reward(trajectory: Trajectory, gold: str, kind: AnswerKind, cfg: VerifierConfig | None = None) -> float:
    """extract + verify in one step; NoAnswerFound maps to reward 0."""
    try:
        predicted = extract_final_answer(trajectory, kind, cfg)
    except NoAnswerFound:
        return 0.0
    return verify(predicted, gold, kind, cfg)
