"""Two-tier escalation controller for a single agent trajectory.

The run has a warm-up phase on the large tier, then a collaborative phase
where the small tier drives and hands control to the large tier whenever
its progress check reports stagnation. How long the large tier keeps
control is set by the budget schedule at the moment of escalation.
"""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

from .backends import BackendFailure, GenerationParams, ModelBackend, ModelOutput, ToolRegistry, execute_tool
from .escalation import BudgetSchedule, LinearBounded, intervention_budget, update_level
from .progress import (
    END_MARKER,
    START_MARKER,
    STRICTNESS_REMINDER,
    ParseFailure,
    ProgressAssessment,
    parse_progress_block,
    reattach_prompt_tail,
    render_progress_prompt,
)
from .trajectory import Action, Phase, StepRecord, Termination, Tier, Trajectory

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 40
DEFAULT_WARMUP = 2
DEFAULT_ANSWER_MARKER = "FINAL_ANSWER:"
RATIONALE_LOG_LIMIT = 2000


class MalformedPolicy(enum.Enum):
    TREAT_AS_FALSE = "TreatAsFalse"
    RETRY_ONCE_THEN_FALSE = "RetryOnceThenFalse"


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    warmup_budget: int = DEFAULT_WARMUP
    schedule: BudgetSchedule = field(default_factory=LinearBounded)
    malformed_progress_policy: MalformedPolicy = MalformedPolicy.RETRY_ONCE_THEN_FALSE
    answer_marker: str = DEFAULT_ANSWER_MARKER
    lenient_progress: bool = False
    generation: GenerationParams = field(default_factory=GenerationParams)
    system_prompt: str = ""

    def validate(self) -> "RunConfig":
        if self.max_iterations < 1:
            raise ConfigError("max_iterations", f"must be a positive integer, got {self.max_iterations}")
        if self.warmup_budget < 1:
            raise ConfigError("warmup_budget", f"must be a positive integer, got {self.warmup_budget}")
        if self.warmup_budget > self.max_iterations:
            raise ConfigError(
                "warmup_budget",
                f"({self.warmup_budget}) must not exceed max_iterations ({self.max_iterations})",
            )
        if not self.answer_marker:
            raise ConfigError("answer_marker", "must be a non-empty string")
        return self


@dataclass(frozen=True)
class EscalationState:
    mode: Tier = Tier.LARGE
    level: int = 0
    strong_steps_used: int = 0
    active_budget: int = 1
    steps_total: int = 0


def step_transition(state: EscalationState, progress: bool, schedule: BudgetSchedule) -> EscalationState:
    """Apply one collaborative-phase progress signal to the controller state.

    The caller counts the step itself (``steps_total`` and, on the large
    tier, ``strong_steps_used``) before calling this.
    """
    level = update_level(state.level, progress)
    if state.mode is Tier.SMALL:
        if progress:
            return replace(state, level=level)
        return replace(
            state,
            mode=Tier.LARGE,
            level=level,
            strong_steps_used=0,
            active_budget=intervention_budget(schedule, level),
        )
    if progress or state.strong_steps_used >= state.active_budget:
        return replace(state, mode=Tier.SMALL, level=level, strong_steps_used=0)
    return replace(state, level=level)


# -- context ------------------------------------------------------------


@dataclass
class Context:
    """Shared message history. Progress-check exchanges are never stored here."""

    messages: list[dict] = field(default_factory=list)

    @classmethod
    def init(cls, task: str, system_prompt: str = "") -> "Context":
        ctx = cls()
        if system_prompt:
            ctx.messages.append({"role": "system", "content": system_prompt})
        ctx.messages.append({"role": "user", "content": task})
        return ctx

    def add_output(self, text: str) -> None:
        self.messages.append({"role": "assistant", "content": text})

    def add_observation(self, tool: str, observation: str) -> None:
        self.messages.append({"role": "user", "content": f"[{tool}] {observation}"})

    def last_output(self) -> Optional[str]:
        for msg in reversed(self.messages):
            if msg["role"] == "assistant":
                return msg["content"]
        return None


def is_final_answer(ctx: Context, marker: str = DEFAULT_ANSWER_MARKER) -> bool:
    out = ctx.last_output()
    return out is not None and marker in out


def extract_answer(ctx: Context, marker: str = DEFAULT_ANSWER_MARKER) -> str:
    out = ctx.last_output()
    if out is None or marker not in out:
        raise ContractViolation("extract_answer called on a context without an answer marker")
    answer = out[out.rindex(marker) + len(marker) :]
    # An inline progress block after the answer is not part of it.
    cut = answer.find(START_MARKER)
    if cut != -1:
        answer = answer[:cut]
    return answer.strip()


# -- execution ----------------------------------------------------------


def _truncate(assessment: Optional[ProgressAssessment]) -> Optional[ProgressAssessment]:
    if assessment is None or len(assessment.rationale) <= RATIONALE_LOG_LIMIT:
        return assessment
    return ProgressAssessment(assessment.rationale[:RATIONALE_LOG_LIMIT], assessment.value)


def _trajectory_id(task: str) -> str:
    return hashlib.sha1(task.encode("utf-8")).hexdigest()[:12]


class _Run:
    def __init__(self, config: RunConfig, backends: dict, trajectory: Trajectory, tools: ToolRegistry | None):
        self.config = config
        self.backends = backends
        self.traj = trajectory
        self.tools = tools or ToolRegistry()
        self.state = EscalationState(
            mode=Tier.LARGE, active_budget=intervention_budget(config.schedule, 0)
        )

    def _check_progress(self, backend: ModelBackend, ctx: Context, think: ModelOutput):
        """Return (assessment or None, failure or None, extra model outputs)."""
        lenient = self.config.lenient_progress
        if END_MARKER in think.text:
            inline = parse_progress_block(think.text, lenient)
            if isinstance(inline, ProgressAssessment):
                return inline, None, []

        extra = []
        prompt = render_progress_prompt("")
        attempts = 2 if self.config.malformed_progress_policy is MalformedPolicy.RETRY_ONCE_THEN_FALSE else 1
        failure: ParseFailure | None = None
        for attempt in range(attempts):
            content = prompt if attempt == 0 else STRICTNESS_REMINDER + "\n\n" + prompt
            out = backend.complete(ctx.messages + [{"role": "user", "content": content}], self.config.generation)
            extra.append(out)
            parsed = parse_progress_block(reattach_prompt_tail(out.text), lenient)
            if isinstance(parsed, ProgressAssessment):
                return parsed, None, extra
            failure = parsed
            log.info("malformed progress block (%s), attempt %d", parsed.kind.value, attempt + 1)
        return None, failure, extra

    def step(self, ctx: Context, tier: Tier, phase: Phase, with_tools: bool):
        """Run one THINK step plus its progress check; returns the effective progress value."""
        backend = self.backends[tier]
        think = backend.complete(ctx.messages, self.config.generation)
        ctx.add_output(think.text)
        called_tool = False
        if with_tools:
            for call in think.tool_calls:
                ctx.add_observation(call.name, execute_tool(call.name, call.arguments, self.tools))
                called_tool = True
        assessment, failure, extra = self._check_progress(backend, ctx, think)
        value = assessment.value if assessment is not None else False

        used = self.state.strong_steps_used + (1 if tier is Tier.LARGE else 0)
        self.state = replace(self.state, steps_total=self.state.steps_total + 1, strong_steps_used=used)
        if phase is Phase.WARMUP:
            self.state = replace(self.state, level=update_level(self.state.level, value))
        else:
            self.state = step_transition(self.state, value, self.config.schedule)

        if is_final_answer(ctx, self.config.answer_marker):
            action = Action.ANSWER
        elif called_tool:
            action = Action.TOOL_CALL
        else:
            action = Action.THINK
        outputs = [think] + extra
        self.traj.steps.append(
            StepRecord(
                index=len(self.traj.steps) + 1,
                tier=tier,
                phase=phase,
                prompt_tokens=sum(o.prompt_tokens for o in outputs),
                completion_tokens=sum(o.completion_tokens for o in outputs),
                latency=sum(o.latency for o in outputs),
                progress=_truncate(assessment),
                level_after=self.state.level,
                action=action,
                model=getattr(backend, "label", tier.name),
                parse_failure=failure,
            )
        )
        return value

    def warmup(self, ctx: Context) -> Optional[str]:
        marker = self.config.answer_marker
        while self.state.strong_steps_used < self.config.warmup_budget:
            if self.state.steps_total >= self.config.max_iterations:
                return None
            value = self.step(ctx, Tier.LARGE, Phase.WARMUP, with_tools=False)
            if value and is_final_answer(ctx, marker):
                return extract_answer(ctx, marker)
        self.state = replace(self.state, mode=Tier.SMALL, strong_steps_used=0)
        return None

    def collaborate(self, ctx: Context) -> Optional[str]:
        marker = self.config.answer_marker
        while not is_final_answer(ctx, marker):
            if self.state.steps_total >= self.config.max_iterations:
                return None
            self.step(ctx, self.state.mode, Phase.COLLABORATIVE, with_tools=True)
        return extract_answer(ctx, marker)


def run_warmup(
    config: RunConfig,
    backend_large: ModelBackend,
    context: Context,
    trajectory: Trajectory | None = None,
) -> tuple[Context, Optional[str]]:
    """Run up to ``warmup_budget`` large-tier THINK steps.

    Returns early with the answer if a step reports progress and the
    context carries the answer marker. Steps are appended to ``trajectory``
    when one is given.
    """
    config.validate()
    run = _Run(config, {Tier.LARGE: backend_large}, trajectory or Trajectory("warmup"), None)
    return context, run.warmup(context)


def run_trajectory(
    config: RunConfig,
    backends: tuple[ModelBackend, ModelBackend],
    task: str,
    trajectory_id: str | None = None,
    tools: ToolRegistry | None = None,
) -> Trajectory:
    """Drive one task to an answer, the iteration cap, or a backend failure.

    ``backends`` is ``(small, large)``.
    """
    config.validate()
    small, large = backends
    traj = Trajectory(trajectory_id or _trajectory_id(task))
    run = _Run(config, {Tier.SMALL: small, Tier.LARGE: large}, traj, tools)
    ctx = Context.init(task, config.system_prompt)
    try:
        answer = run.warmup(ctx)
        if answer is None:
            answer = run.collaborate(ctx)
    except BackendFailure as exc:
        log.warning("trajectory %s: backend failure: %s", traj.id, exc)
        traj.termination = Termination.BACKEND_FAILURE
        traj.error = str(exc)
        return traj
    if answer is None:
        traj.termination = Termination.ITERATION_CAP_REACHED
    else:
        traj.termination = Termination.ANSWER_FOUND
        traj.final_answer = answer
    return traj


__all__ = [
    "ConfigError",
    "Context",
    "ContractViolation",
    "EscalationState",
    "MalformedPolicy",
    "RunConfig",
    "extract_answer",
    "is_final_answer",
    "run_trajectory",
    "run_warmup",
    "step_transition",
]
