"""Independent reference implementations used by the tests."""

import math

import numpy as np

from rounddz.signal import SignalState


def braking_distance_sim(v0, delta, a_dec, h=1e-3):
    """Stopping distance by time stepping: coast for the reaction time, then brake.

    Vectorized over parameter draws.  Each step is integrated exactly under
    the acceleration in force, and a step straddling a phase change or the
    stop is split, so the only approximation is the step grid itself.
    """
    v0, delta, a_dec = (np.asarray(a, dtype=float) for a in (v0, delta, a_dec))
    x = np.zeros_like(v0)
    v = v0.copy()
    t = 0.0
    t_end = float(np.max(delta + v0 / a_dec)) + 2 * h
    while t < t_end:
        coast = np.clip(delta - t, 0.0, h)  # part of this step still in the reaction phase
        x += v * coast
        brake = h - coast
        dt_b = np.minimum(brake, v / a_dec)
        x += v * dt_b - 0.5 * a_dec * dt_b**2
        v = np.maximum(v - a_dec * dt_b, 0.0)
        t += h
    return x


def algorithm1_truth_table(threats, tts, t_max, d_t):
    """Signal from (ttc, soc, id) triples, evaluated directly from the gate conditions."""
    gated = [(ttc, i, soc) for ttc, soc, i in threats if ttc < t_max and soc < d_t]
    if not gated:
        return SignalState.GREEN, None
    red = [g for g in gated if g[0] <= tts]
    if red:
        first = min(red)
        # an earlier yellow threat does not stop the scan from reaching a red one
        return SignalState.RED, first[1]
    return SignalState.YELLOW, min(gated)[1]


def trapezoid_auc(scores, labels):
    """AUC as the Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    pos, neg = s[y], s[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


def numeric_gradient(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def frame_set_iou(det, truth):
    """IoU over explicit sets of (agent, frame) pairs, intervals inclusive."""
    a = {(ag, f) for ag, f0, f1 in det for f in range(f0, f1 + 1)}
    b = {(ag, f) for ag, f0, f1 in truth for f in range(f0, f1 + 1)}
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def hypot(p, q):
    return math.hypot(p[0] - q[0], p[1] - q[1])
