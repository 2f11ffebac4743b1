"""Straight-line reference interpreter for the escalation loop.

Written from the pseudocode alone; it shares no code with tierflow so it can
serve as an oracle for the controller and simulator.
"""

import mpmath

mpmath.mp.dps = 50


def budget_linear(b0, k, bmax):
    return lambda level: min(bmax, b0 + k * level)


def budget_static(b0):
    return lambda level: b0


def budget_sigmoid(b0, bmax, alpha, beta):
    def f(level):
        x = mpmath.mpf(alpha) * (level - mpmath.mpf(beta))
        raw = b0 + (bmax - b0) / (1 + mpmath.exp(-x))
        return min(bmax, int(mpmath.ceil(raw)))

    return f


def reference_tiers(script, warmup, budget, max_steps):
    """Tier letters ('S'/'L') chosen for each step of a progress script."""
    tiers = []
    level = 0
    i = 0
    large_steps_used = 0
    while large_steps_used < warmup and i < len(script) and len(tiers) < max_steps:
        tiers.append("L")
        value = script[i]
        i += 1
        large_steps_used += 1
        if value:
            level = 0
        else:
            level = level + 1
    mode = "S"
    b_l = None
    while i < len(script) and len(tiers) < max_steps:
        value = script[i]
        i += 1
        if value:
            level = 0
        else:
            level = level + 1
        if mode == "S":
            tiers.append("S")
            if not value:
                mode = "L"
                large_steps_used = 0
                b_l = budget(level)
        else:
            tiers.append("L")
            large_steps_used += 1
            if value:
                mode = "S"
            elif large_steps_used >= b_l:
                mode = "S"
    return tiers


def trailing_false_run(values):
    n = 0
    for v in reversed(values):
        if v:
            break
        n += 1
    return n
