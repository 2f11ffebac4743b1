from tierflow.progress import ProgressAssessment
from tierflow.trajectory import Action, Phase, StepRecord, Termination, Tier, Trajectory

_T = ProgressAssessment("ok", True)


def make_traj(tiers: str, tid="t", tokens=None, latencies=None, answer=True):
    """Trajectory from a tier string like 'SSLS'."""
    steps = []
    for i, c in enumerate(tiers):
        tier = Tier.LARGE if c == "L" else Tier.SMALL
        steps.append(
            StepRecord(
                index=i + 1,
                tier=tier,
                phase=Phase.COLLABORATIVE,
                prompt_tokens=0,
                completion_tokens=tokens[i] if tokens else 10,
                latency=latencies[i] if latencies else (3.0 if tier is Tier.LARGE else 1.0),
                progress=_T,
                level_after=0,
                action=Action.THINK,
            )
        )
    t = Trajectory(tid, steps)
    if answer:
        t.termination, t.final_answer = Termination.ANSWER_FOUND, "x"
    return t
