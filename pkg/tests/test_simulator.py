import math

import numpy as np
import pytest

from tierflow import controller, simulator
from tierflow.config import fixture_path, load_config_file
from tierflow.escalation import LinearBounded, Static
from tierflow.simulator import (
    AlwaysLarge,
    AlwaysSmall,
    Collab,
    RandomPolicy,
    Segment,
    WorldModel,
    policy_from_dict,
    run_experiment,
    simulate_trajectory,
)
from tierflow.trajectory import Phase, Termination, Tier

from reference import budget_linear


def letters(traj):
    return "".join("L" if t is Tier.LARGE else "S" for t in traj.tiers)


def test_deterministic_small_world():
    w = WorldModel((Segment(3, 1.0, 1.0),), latency_small=1.5, latency_large=4.0)
    t = simulate_trajectory(w, AlwaysSmall(), seed=0)
    assert len(t.steps) == 3
    assert t.total_latency == 3 * 1.5
    assert t.termination is Termination.ANSWER_FOUND


def test_collab_escalation_hand_trace():
    w = WorldModel((Segment(3, 0.0, 1.0),), 1.0, 3.0)
    t = simulate_trajectory(w, Collab(LinearBounded(2, 2, 8), warmup=0), seed=11)
    # S fails -> escalate; L progresses -> back to S; three times over.
    assert letters(t) == "SLSLSL"
    assert [s.level_after for s in t.steps] == [1, 0, 1, 0, 1, 0]
    assert t.termination is Termination.ANSWER_FOUND


def _oracle_collab(world, b0, k, bmax, warmup, seed, max_steps):
    """Independent replay of the simulator dynamics for a Collab policy."""
    u = np.random.default_rng(seed).random((max_steps, 3))[:, 0]
    budget = budget_linear(b0, k, bmax)
    seg, left = 0, world.segments[0].length
    tiers, level, mode, used, b_l = [], 0, "L", 0, None
    for t in range(max_steps):
        tier = mode if t >= warmup else "L"
        p = world.segments[seg].p_large if tier == "L" else world.segments[seg].p_small
        ok = u[t] < p
        tiers.append(tier)
        if ok:
            left -= 1
            if left == 0:
                seg += 1
                if seg == len(world.segments):
                    break
                left = world.segments[seg].length
        level = 0 if ok else level + 1
        if t < warmup:
            if t == warmup - 1:
                mode = "S"
            continue
        if tier == "S":
            if not ok:
                mode, used, b_l = "L", 0, budget(level)
        else:
            used += 1
            if ok or used >= b_l:
                mode = "S"
    return "".join(tiers)


@pytest.mark.parametrize("seed", range(25))
def test_collab_matches_independent_replay(seed):
    world = WorldModel.from_dict(load_config_file(fixture_path("default_world.yaml")))
    t = simulate_trajectory(world, Collab(LinearBounded(2, 2, 8), warmup=2), seed, 40)
    assert letters(t) == _oracle_collab(world, 2, 2, 8, 2, seed, 40)


def test_random_zero_is_always_small():
    w = WorldModel((Segment(4, 0.5, 0.9), Segment(2, 0.1, 0.8)), 1.0, 3.0)
    for seed in range(50):
        a = simulate_trajectory(w, RandomPolicy(0.0), seed, 40, "x")
        b = simulate_trajectory(w, AlwaysSmall(), seed, 40, "x")
        assert a.steps == b.steps and a.termination == b.termination


def test_reproducible():
    w = WorldModel((Segment(4, 0.5, 0.9),), 1.0, 3.0)
    for policy in [RandomPolicy(0.3), Collab(), AlwaysLarge()]:
        assert simulate_trajectory(w, policy, 5).steps == simulate_trajectory(w, policy, 5).steps


def test_collab_warmup_phase_labels():
    w = WorldModel((Segment(30, 0.9, 0.9),), 1.0, 3.0)
    t = simulate_trajectory(w, Collab(Static(2), warmup=3), 0, 10)
    assert [s.phase for s in t.steps[:4]] == [Phase.WARMUP] * 3 + [Phase.COLLABORATIVE]
    assert letters(t)[:3] == "LLL"


def test_noise_flips_reports_only():
    w = WorldModel((Segment(5, 1.0, 1.0),), 1.0, 3.0, noise=1.0)
    t = simulate_trajectory(w, AlwaysSmall(), 0)
    assert len(t.steps) == 5
    assert all(not s.progress_value for s in t.steps)


def test_speedup_self_and_latency_ratio():
    w = WorldModel((Segment(6, 1.0, 1.0),), latency_small=1.25, latency_large=4.0)
    r = run_experiment(w, [AlwaysLarge(), AlwaysSmall()], n_trials=5, seed=1)
    assert r.summaries["large"].speedup_vs_baseline == 1.0
    assert r.summaries["small"].speedup_vs_baseline == 4.0 / 1.25


def test_baseline_added_when_missing():
    w = WorldModel((Segment(2, 1.0, 1.0),), 1.0, 2.0)
    r = run_experiment(w, [AlwaysSmall()], 3, 0)
    assert list(r.summaries) == ["small"]
    assert r.summaries["small"].speedup_vs_baseline == 2.0


def test_workers_do_not_change_results():
    w = WorldModel((Segment(5, 0.4, 0.9),), 1.0, 3.0)
    pols = [AlwaysSmall(), AlwaysLarge(), RandomPolicy(0.5), Collab()]
    a = run_experiment(w, pols, 50, 3, workers=1)
    b = run_experiment(w, pols, 50, 3, workers=4)
    assert a.summaries == b.summaries


def test_stochastic_dominance():
    w = WorldModel((Segment(8, 0.3, 0.7), Segment(6, 0.5, 0.9)), 1.0, 3.0)
    r = run_experiment(w, [AlwaysSmall(), AlwaysLarge()], 500, 9)
    ps, pl = r.summaries["small"].success_rate, r.summaries["large"].success_rate
    se = math.sqrt(ps * (1 - ps) / 500 + pl * (1 - pl) / 500)
    assert pl - ps >= -3 * se


def test_validation():
    with pytest.raises(ValueError):
        Segment(0, 0.1, 0.2)
    with pytest.raises(ValueError):
        Segment(1, 0.5, 0.2)
    with pytest.raises(ValueError):
        WorldModel((Segment(1, 0.1, 0.2),), 3.0, 1.0)
    with pytest.raises(ValueError):
        WorldModel(())
    with pytest.raises(ValueError):
        RandomPolicy(1.5)
    with pytest.raises(ValueError):
        run_experiment(WorldModel((Segment(1, 0.1, 0.2),)), [AlwaysSmall()], 0, 1)


def test_policy_from_dict():
    p = policy_from_dict({"kind": "collab", "label": "dyn", "warmup": 1, "schedule": {"kind": "static", "b0": 3}})
    assert p == Collab(Static(3), 1, "dyn")
    assert policy_from_dict({"kind": "random", "p_large": 0.2}) == RandomPolicy(0.2)


def test_simulator_reuses_controller_transition():
    assert simulator.step_transition is controller.step_transition
