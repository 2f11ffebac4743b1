"""Two-tier model orchestration with self-evaluated progress and escalation budgets."""

from .controller import Context, EscalationState, RunConfig, run_trajectory, step_transition
from .escalation import LinearBounded, Sigmoid, Static, intervention_budget, update_level
from .progress import ProgressAssessment, emit_progress_block, parse_progress_block, render_progress_prompt
from .trajectory import Tier, Trajectory

__version__ = "0.1.0"

__all__ = [
    "Context",
    "EscalationState",
    "LinearBounded",
    "ProgressAssessment",
    "RunConfig",
    "Sigmoid",
    "Static",
    "Tier",
    "Trajectory",
    "emit_progress_block",
    "intervention_budget",
    "parse_progress_block",
    "render_progress_prompt",
    "run_trajectory",
    "step_transition",
    "update_level",
]
