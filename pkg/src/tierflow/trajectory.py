"""Trajectory records and their JSON-lines log format.

A log file holds one ``"record": "step"`` line per step followed by a single
``"record": "end"`` line carrying the termination reason and final answer.
"""

from __future__ import annotations

import enum
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .progress import ParseFailure, ProgressAssessment

SCHEMA_VERSION = 1


class Tier(enum.IntEnum):
    SMALL = 0
    LARGE = 1

    @property
    def label(self) -> str:
        return self.name


class Phase(enum.Enum):
    WARMUP = "Warmup"
    COLLABORATIVE = "Collaborative"
    FINALIZATION = "Finalization"


class Action(enum.Enum):
    THINK = "Think"
    TOOL_CALL = "ToolCall"
    ANSWER = "Answer"


class Termination(enum.Enum):
    ANSWER_FOUND = "AnswerFound"
    ITERATION_CAP_REACHED = "IterationCapReached"
    BACKEND_FAILURE = "BackendFailure"


@dataclass(frozen=True)
class StepRecord:
    index: int
    tier: Tier
    phase: Phase
    prompt_tokens: int
    completion_tokens: int
    latency: float
    progress: Optional[ProgressAssessment]
    level_after: int
    action: Action
    model: str = ""
    parse_failure: Optional[ParseFailure] = None

    @property
    def progress_value(self) -> bool:
        """Effective progress signal; an unparseable check counts as FALSE."""
        return self.progress.value if self.progress is not None else False

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "tier": self.tier.name,
            "model": self.model,
            "phase": self.phase.value,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency": self.latency,
            "progress": None if self.progress is None else self.progress.to_dict(),
            "parse_failure": None if self.parse_failure is None else self.parse_failure.to_dict(),
            "level_after": self.level_after,
            "action": self.action.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StepRecord":
        return cls(
            index=int(data["index"]),
            tier=Tier[data["tier"]],
            phase=Phase(data["phase"]),
            prompt_tokens=int(data["prompt_tokens"]),
            completion_tokens=int(data["completion_tokens"]),
            latency=float(data["latency"]),
            progress=None if data.get("progress") is None else ProgressAssessment.from_dict(data["progress"]),
            level_after=int(data["level_after"]),
            action=Action(data["action"]),
            model=data.get("model", ""),
            parse_failure=None
            if data.get("parse_failure") is None
            else ParseFailure.from_dict(data["parse_failure"]),
        )


@dataclass
class Trajectory:
    id: str
    steps: list[StepRecord] = field(default_factory=list)
    termination: Termination = Termination.ITERATION_CAP_REACHED
    final_answer: Optional[str] = None
    error: Optional[str] = None

    @property
    def tiers(self) -> list[Tier]:
        return [s.tier for s in self.steps]

    @property
    def total_latency(self) -> float:
        return sum(s.latency for s in self.steps)

    @property
    def succeeded(self) -> bool:
        return self.termination is Termination.ANSWER_FOUND

    def to_records(self, config_hash: str = "") -> list[dict]:
        base = {"schema_version": SCHEMA_VERSION, "trajectory_id": self.id, "config_hash": config_hash}
        records = [{"record": "step", **base, **step.to_dict()} for step in self.steps]
        records.append(
            {
                "record": "end",
                **base,
                "termination": self.termination.value,
                "final_answer": self.final_answer,
                "n_steps": len(self.steps),
                "error": self.error,
            }
        )
        return records


def dumps_jsonl(trajectories: Iterable[Trajectory], config_hash: str = "") -> str:
    lines = []
    for traj in trajectories:
        for rec in traj.to_records(config_hash):
            lines.append(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectory_log(path, trajectories: Iterable[Trajectory], config_hash: str = "") -> None:
    atomic_write_text(path, dumps_jsonl(trajectories, config_hash))


def loads_jsonl(text: str) -> list[Trajectory]:
    by_id: dict[str, Trajectory] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        version = rec.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"line {lineno}: unsupported schema_version {version!r}")
        traj = by_id.setdefault(rec["trajectory_id"], Trajectory(rec["trajectory_id"]))
        if rec["record"] == "step":
            traj.steps.append(StepRecord.from_dict(rec))
        elif rec["record"] == "end":
            traj.termination = Termination(rec["termination"])
            traj.final_answer = rec.get("final_answer")
            traj.error = rec.get("error")
        else:
            raise ValueError(f"line {lineno}: unknown record type {rec['record']!r}")
    return list(by_id.values())


def read_trajectory_log(path) -> list[Trajectory]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read trajectory log {path}: {exc}") from exc
    return loads_jsonl(text)
