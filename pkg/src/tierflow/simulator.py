"""Synthetic trajectory simulator for comparing routing policies.

A world is a sequence of segments. Each step consumes one progress unit of
the current segment with probability ``p_small`` or ``p_large`` depending on
the tier that ran it. The Collab policy is driven by the controller's own
``step_transition``, so simulated and live escalation behave identically.

Randomness: every trajectory pre-draws a ``(max_steps, 3)`` block of
uniforms from its seed. Column 0 decides progress, column 1 the Random
policy's tier choice, column 2 the progress-check noise flip. Each step
reads only its own row, so draws never shift when code changes around them,
and every policy sees the same draws for a given trial seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .controller import EscalationState, step_transition
from .escalation import BudgetSchedule, LinearBounded, intervention_budget, update_level
from .metrics import MetricSummary, summarize
from .progress import ProgressAssessment
from .trajectory import Action, Phase, StepRecord, Termination, Tier, Trajectory

DEFAULT_MAX_STEPS = 40

_PROGRESS = ProgressAssessment("simulated: progress made", True)
_STALLED = ProgressAssessment("simulated: no progress", False)


@dataclass(frozen=True)
class Segment:
    length: int
    p_small: float
    p_large: float

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"segment length must be positive, got {self.length}")
        if not 0.0 <= self.p_small <= self.p_large <= 1.0:
            raise ValueError(f"need 0 <= p_small <= p_large <= 1, got {self.p_small}, {self.p_large}")


@dataclass(frozen=True)
class WorldModel:
    segments: tuple[Segment, ...]
    latency_small: float = 1.0
    latency_large: float = 3.0
    tokens_small: int = 100
    tokens_large: int = 100
    noise: float = 0.0
    name: str = "world"

    def __post_init__(self):
        if not self.segments:
            raise ValueError("world needs at least one segment")
        if not 0 < self.latency_small < self.latency_large:
            raise ValueError("need 0 < latency_small < latency_large")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise must be a probability, got {self.noise}")

    @classmethod
    def from_dict(cls, data: dict) -> "WorldModel":
        segs = tuple(Segment(int(s["length"]), float(s["p_small"]), float(s["p_large"])) for s in data["segments"])
        return cls(
            segments=segs,
            latency_small=float(data.get("latency_small", 1.0)),
            latency_large=float(data.get("latency_large", 3.0)),
            tokens_small=int(data.get("tokens_small", 100)),
            tokens_large=int(data.get("tokens_large", 100)),
            noise=float(data.get("noise", 0.0)),
            name=str(data.get("name", "world")),
        )


# -- policies ------------------------------------------------------------


@dataclass(frozen=True)
class AlwaysSmall:
    label: str = "small"


@dataclass(frozen=True)
class AlwaysLarge:
    label: str = "large"


@dataclass(frozen=True)
class RandomPolicy:
    p_large: float = 0.5
    label: str = "random"

    def __post_init__(self):
        if not 0.0 <= self.p_large <= 1.0:
            raise ValueError(f"p_large must be in [0, 1], got {self.p_large}")


@dataclass(frozen=True)
class Collab:
    schedule: BudgetSchedule = field(default_factory=LinearBounded)
    warmup: int = 2
    label: str = "collab"

    def __post_init__(self):
        if self.warmup < 0:
            raise ValueError(f"warmup must be non-negative, got {self.warmup}")


Policy = Union[AlwaysSmall, AlwaysLarge, RandomPolicy, Collab]


def policy_from_dict(data: dict) -> Policy:
    from .escalation import schedule_from_dict

    kind = data["kind"]
    label = data.get("label")
    extra = {"label": label} if label else {}
    if kind == "small":
        return AlwaysSmall(**extra)
    if kind == "large":
        return AlwaysLarge(**extra)
    if kind == "random":
        return RandomPolicy(float(data.get("p_large", 0.5)), **extra)
    if kind == "collab":
        return Collab(schedule_from_dict(data.get("schedule", {})), int(data.get("warmup", 2)), **extra)
    raise ValueError(f"unknown policy kind {kind!r}")


# -- simulation ----------------------------------------------------------


def simulate_trajectory(
    world: WorldModel,
    policy: Policy,
    seed,
    max_steps: int = DEFAULT_MAX_STEPS,
    trajectory_id: str | None = None,
) -> Trajectory:
    if max_steps < 1:
        raise ValueError("max_steps must be positive")
    draws = np.random.default_rng(seed).random((max_steps, 3))
    traj = Trajectory(trajectory_id or f"{policy.label}-{seed}")

    collab = isinstance(policy, Collab)
    state = EscalationState(mode=Tier.LARGE, active_budget=intervention_budget(policy.schedule, 0)) if collab else None
    if collab and policy.warmup == 0:
        state = replace(state, mode=Tier.SMALL)
    warmup_left = policy.warmup if collab else 0

    seg_idx, remaining = 0, world.segments[0].length
    for t in range(max_steps):
        u_progress, u_choice, u_noise = draws[t]
        if collab:
            tier = state.mode
        elif isinstance(policy, AlwaysLarge):
            tier = Tier.LARGE
        elif isinstance(policy, RandomPolicy):
            tier = Tier.LARGE if u_choice < policy.p_large else Tier.SMALL
        else:
            tier = Tier.SMALL

        seg = world.segments[seg_idx]
        progressed = bool(u_progress < (seg.p_large if tier is Tier.LARGE else seg.p_small))
        reported = progressed != bool(u_noise < world.noise)
        if progressed:
            remaining -= 1
            if remaining == 0:
                seg_idx += 1
                if seg_idx < len(world.segments):
                    remaining = world.segments[seg_idx].length
        done = seg_idx == len(world.segments)

        phase = Phase.COLLABORATIVE
        if collab:
            used = state.strong_steps_used + (tier is Tier.LARGE)
            state = replace(state, steps_total=state.steps_total + 1, strong_steps_used=used)
            if warmup_left > 0:
                phase = Phase.WARMUP
                warmup_left -= 1
                state = replace(state, level=update_level(state.level, reported))
                if warmup_left == 0:
                    state = replace(state, mode=Tier.SMALL, strong_steps_used=0)
            else:
                state = step_transition(state, reported, policy.schedule)
            level = state.level
        else:
            level = update_level(traj.steps[-1].level_after if traj.steps else 0, reported)

        large = tier is Tier.LARGE
        traj.steps.append(
            StepRecord(
                index=t + 1,
                tier=tier,
                phase=phase,
                prompt_tokens=0,
                completion_tokens=world.tokens_large if large else world.tokens_small,
                latency=world.latency_large if large else world.latency_small,
                progress=_PROGRESS if reported else _STALLED,
                level_after=level,
                action=Action.ANSWER if done else Action.THINK,
                model=tier.name,
            )
        )
        if done:
            traj.termination = Termination.ANSWER_FOUND
            traj.final_answer = "solved"
            return traj
    traj.termination = Termination.ITERATION_CAP_REACHED
    return traj


def trial_seed(seed: int, trial: int) -> list[int]:
    return [seed, trial]


@dataclass
class ExperimentResult:
    summaries: dict[str, MetricSummary]
    baseline_label: str
    trajectories: dict[str, list[Trajectory]] = field(default_factory=dict)

    def ordered(self) -> list[MetricSummary]:
        return list(self.summaries.values())


def run_experiment(
    world: WorldModel,
    policies: Sequence[Policy],
    n_trials: int,
    seed: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    workers: int = 1,
    keep_trajectories: bool = False,
) -> ExperimentResult:
    """Simulate every policy over ``n_trials`` seeded trials and summarize.

    Speedup is measured against an AlwaysLarge run over the same trials;
    one is simulated even if it is not among ``policies``. Trial ``i`` uses
    the same seed for every policy.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise ValueError(f"policy labels must be unique, got {labels}")

    def run_policy(policy: Policy) -> list[Trajectory]:
        return [
            simulate_trajectory(world, policy, trial_seed(seed, i), max_steps, f"{policy.label}-{i}")
            for i in range(n_trials)
        ]

    baseline = next((p for p in policies if isinstance(p, AlwaysLarge)), None)
    to_run = list(policies) if baseline is not None else [*policies, AlwaysLarge(label="__baseline_large")]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_policy, to_run))
    else:
        runs = [run_policy(p) for p in to_run]
    by_label = {p.label: r for p, r in zip(to_run, runs)}
    base_label = baseline.label if baseline is not None else "__baseline_large"
    base_latency = sum(t.total_latency for t in by_label[base_label])

    summaries = {label: summarize(label, by_label[label], base_latency) for label in labels}
    kept = {label: by_label[label] for label in labels} if keep_trajectories else {}
    return ExperimentResult(summaries, base_label, kept)
