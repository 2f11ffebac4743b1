"""PROGRESS block wire format: prompt rendering, parsing and emission.

The marker strings below are a public contract. Changing any byte of them
is a breaking change.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

START_MARKER = "===PROGRESS==="
END_MARKER = "===END_PROGRESS==="
REASON_OPEN = "<reason>"
REASON_CLOSE = "</reason>"
VALUE_OPEN = "<value>"
VALUE_CLOSE = "</value>"

RESERVED = (START_MARKER, END_MARKER, REASON_OPEN, REASON_CLOSE, VALUE_OPEN, VALUE_CLOSE)

PROGRESS_PROMPT = (
    "In this THINK step, I will first summarize what has changed since the previous THINK step,\n"
    "then analyze whether these changes constitute significant progress toward the final objective.\n"
    "\n"
    "Summary of new actions and results since the previous THINK step:\n"
    "- \n"
    "\n"
    "Impact of these changes on progress toward the objective:\n"
    "- \n"
    "\n"
    "Now I will make an explicit binary judgment about progress.\n"
    "\n"
    "IMPORTANT: In the PROGRESS block below, I MUST strictly follow this structural format:\n"
    "===PROGRESS===\n"
    "<reason> one or two sentences explaining whether there is significant progress and why </reason>\n"
    "<value>TRUE or FALSE only</value>\n"
    "===END_PROGRESS===\n"
    "\n"
    "and finish the generation immediately without any further content. "
    "Ignore the original requirements for the think tool.\n"
    "\n"
    "Now I write the actual PROGRESS block following this structural format:\n"
    "===PROGRESS===\n"
    "<reason>"
)

# The prompt leaves the block open; a model continuing it emits only the tail.
PROMPT_TAIL = START_MARKER + "\n" + REASON_OPEN

STRICTNESS_REMINDER = (
    "Your previous reply did not contain a valid PROGRESS block. Reply with exactly one "
    "PROGRESS block in the format above, with <value> set to TRUE or FALSE only."
)

EXCERPT_CHARS = 80


class FailureKind(enum.Enum):
    MISSING_START_MARKER = "MissingStartMarker"
    MISSING_END_MARKER = "MissingEndMarker"
    MISSING_REASON_TAG = "MissingReasonTag"
    MISSING_VALUE_TAG = "MissingValueTag"
    INVALID_VALUE_TOKEN = "InvalidValueToken"
    EMPTY_RATIONALE = "EmptyRationale"


@dataclass(frozen=True)
class ProgressAssessment:
    """Self-reported progress: a short rationale and a TRUE/FALSE verdict.

    The rationale is stored stripped so that emit/parse round-trips exactly.
    """

    rationale: str
    value: bool

    def __post_init__(self):
        stripped = self.rationale.strip()
        if not stripped:
            raise ValueError("rationale must be non-empty after trimming")
        object.__setattr__(self, "rationale", stripped)

    def to_dict(self) -> dict:
        return {"rationale": self.rationale, "value": self.value}

    @classmethod
    def from_dict(cls, data: dict) -> "ProgressAssessment":
        return cls(data["rationale"], bool(data["value"]))


@dataclass(frozen=True)
class ParseFailure:
    kind: FailureKind
    offset: int
    excerpt: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "offset": self.offset, "excerpt": self.excerpt}

    @classmethod
    def from_dict(cls, data: dict) -> "ParseFailure":
        return cls(FailureKind(data["kind"]), int(data["offset"]), data["excerpt"])


def render_progress_prompt(context_summary: str = "") -> str:
    """Return the progress-check instruction with ``context_summary`` in front of it."""
    if not context_summary:
        return PROGRESS_PROMPT
    return context_summary + "\n\n" + PROGRESS_PROMPT


def _fail(kind: FailureKind, raw: str, offset: int) -> ParseFailure:
    offset = max(0, min(offset, len(raw)))
    return ParseFailure(kind, offset, raw[offset : offset + EXCERPT_CHARS])


def parse_progress_block(raw: str, lenient: bool = False) -> ProgressAssessment | ParseFailure:
    """Parse the last complete PROGRESS block in ``raw``.

    Never raises. Failures are classified in marker order: start marker,
    end marker, reason tag, value tag, value token, empty rationale.
    With ``lenient`` the value token is matched case-insensitively.
    """
    end = raw.rfind(END_MARKER)
    if end == -1:
        start = raw.rfind(START_MARKER)
        if start == -1:
            return _fail(FailureKind.MISSING_START_MARKER, raw, 0)
        return _fail(FailureKind.MISSING_END_MARKER, raw, start)
    start = raw.rfind(START_MARKER, 0, end)
    if start == -1:
        return _fail(FailureKind.MISSING_START_MARKER, raw, end)

    body_start = start + len(START_MARKER)
    r_open = raw.find(REASON_OPEN, body_start, end)
    r_close = -1 if r_open == -1 else raw.find(REASON_CLOSE, r_open + len(REASON_OPEN), end)
    if r_open == -1 or r_close == -1:
        return _fail(FailureKind.MISSING_REASON_TAG, raw, body_start if r_open == -1 else r_open)

    after_reason = r_close + len(REASON_CLOSE)
    v_open = raw.find(VALUE_OPEN, after_reason, end)
    v_close = -1 if v_open == -1 else raw.find(VALUE_CLOSE, v_open + len(VALUE_OPEN), end)
    if v_open == -1 or v_close == -1:
        return _fail(FailureKind.MISSING_VALUE_TAG, raw, after_reason if v_open == -1 else v_open)

    token = raw[v_open + len(VALUE_OPEN) : v_close].strip()
    if lenient:
        token = token.upper()
    if token == "TRUE":
        value = True
    elif token == "FALSE":
        value = False
    else:
        return _fail(FailureKind.INVALID_VALUE_TOKEN, raw, v_open)

    rationale = raw[r_open + len(REASON_OPEN) : r_close].strip()
    if not rationale:
        return _fail(FailureKind.EMPTY_RATIONALE, raw, r_open)
    return ProgressAssessment(rationale, value)


def emit_progress_block(assessment: ProgressAssessment) -> str:
    value = "TRUE" if assessment.value else "FALSE"
    return (
        f"{START_MARKER}\n"
        f"{REASON_OPEN} {assessment.rationale} {REASON_CLOSE}\n"
        f"{VALUE_OPEN}{value}{VALUE_CLOSE}\n"
        f"{END_MARKER}"
    )


def reattach_prompt_tail(completion: str) -> str:
    """Restore the block opening for completions that continue the prompt.

    The progress prompt ends inside an open block, so a compliant model
    reply starts with the rationale text and has no start marker of its own.
    """
    if START_MARKER in completion or END_MARKER not in completion:
        return completion
    return PROMPT_TAIL + completion
