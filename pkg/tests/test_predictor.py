import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rounddz.dilemma import DzParams, s_stop
from rounddz.errors import HorizonMismatchError, InsufficientHistoryError
from rounddz.geometry import Trajectory, Vec2
from rounddz.predictor import (
    DEFAULT_MODE_WEIGHTS,
    MODES,
    N_FEATURES,
    Mode,
    PredictedTrajectory,
    Predictor,
    PredictorConfig,
    displacement_errors,
    estimate_mode_distribution,
    predict_most_likely,
    rollout_mode,
)
from rounddz.signal import SignalState

from conftest import moving, straight_map
from test_signal import approacher, circulating

CFG = PredictorConfig()
DZ = DzParams()


def straight_history(x0, speed, n=4, dt=0.5, agent=1):
    return Trajectory(agent, dt, [(k * dt, moving(x0 + speed * k * dt, 0.0, speed, 0.0)) for k in range(n)])


def scored(scores):
    """Weights whose score vector is ``scores`` for any feature vector (bias column only)."""
    w = np.zeros((len(MODES), N_FEATURES))
    w[:, -1] = scores
    return w


def test_config_rejects_bad_values():
    for kw in ({"history_steps": 0}, {"horizon_steps": 0}, {"dt": 0.0}):
        with pytest.raises(ValueError):
            PredictorConfig(**kw)


def test_zero_weights_give_uniform():
    dist = estimate_mode_distribution(straight_history(0, 10), SignalState.GREEN, 20.0, CFG,
                                      np.zeros((3, N_FEATURES)))
    for p in dist.probabilities.values():
        assert p == pytest.approx(1 / 3, abs=1e-12)


def test_hand_softmax():
    dist = estimate_mode_distribution(straight_history(0, 10), SignalState.GREEN, 20.0, CFG, scored([2, 0, 0]))
    e2 = math.exp(2)
    expected = (e2 / (e2 + 2), 1 / (e2 + 2), 1 / (e2 + 2))
    assert [dist.probabilities[m] for m in MODES] == pytest.approx(expected, abs=1e-12)
    assert expected[0] == pytest.approx(0.787, abs=1e-3) and expected[1] == pytest.approx(0.107, abs=1e-3)


def test_distribution_is_deterministic():
    h = straight_history(0, 9)
    a = estimate_mode_distribution(h, SignalState.RED, 15.0, CFG)
    b = estimate_mode_distribution(h, SignalState.RED, 15.0, CFG, DEFAULT_MODE_WEIGHTS.copy())
    assert a.scores == b.scores and a.probabilities == b.probabilities


def test_short_history_rejected():
    with pytest.raises(InsufficientHistoryError):
        estimate_mode_distribution(straight_history(0, 10, n=3), SignalState.GREEN, 20.0, CFG)


@given(st.floats(0, 15), st.floats(-10, 60), st.sampled_from(list(SignalState)), st.booleans())
def test_distribution_normalized(speed, dist, signal, ablated):
    cfg = PredictorConfig(use_dz_features=not ablated)
    d = estimate_mode_distribution(straight_history(0, speed), signal, dist, cfg)
    assert abs(sum(d.probabilities.values()) - 1) < 1e-9
    assert all(0 <= p <= 1 for p in d.probabilities.values())


def test_proceed_rollout_example():
    leg = straight_map().legs[0]
    pred = rollout_mode(moving(10, 0, 10, 0), Mode.PROCEED, leg, DZ, CFG)
    assert [p.x for p in pred.positions] == pytest.approx([15, 20, 25, 30])
    assert all(p.y == pytest.approx(0) for p in pred.positions)
    assert len(pred.positions) == CFG.horizon_steps


def test_proceed_at_rest_stays_put():
    leg = straight_map().legs[0]
    pred = rollout_mode(moving(12, 0, 0, 0), Mode.PROCEED, leg, DZ, CFG)
    assert all(p.x == pytest.approx(12) and p.y == pytest.approx(0) for p in pred.positions)


def test_stop_rollout_pins_after_two_seconds():
    leg = straight_map().legs[0]
    cfg = PredictorConfig(horizon_steps=8)
    pred = rollout_mode(moving(0, 0, 8, 0), Mode.STOP, leg, DzParams(a_dec=4.0), cfg)
    xs = [p.x for p in pred.positions]
    for k, x in enumerate(xs):
        t = (k + 1) * 0.5
        assert x == pytest.approx(8 * t - 2 * t * t if t < 2 else 8.0)
    assert xs[3:] == pytest.approx([8.0] * 5)


def test_yield_rollout_holds_creep_speed():
    leg = straight_map().legs[0]
    cfg = PredictorConfig(horizon_steps=12)
    pred = rollout_mode(moving(0, 0, 6, 0), Mode.YIELD, leg, DZ, cfg)
    xs = np.array([0.0] + [p.x for p in pred.positions])
    v = np.diff(xs) / 0.5
    assert np.all(np.diff(v) <= 1e-9)
    assert v[-1] == pytest.approx(2.0)


@settings(max_examples=1000)
@given(st.floats(0.5, 20), st.floats(0.5, 2.0), st.floats(1.0, 8.0), st.floats(0, 1), st.integers(1, 12))
def test_stop_never_crosses_yield(v0, delta, a_dec, slack, horizon):
    rmap = straight_map(yield_x=250.0)  # longest stopping distance here is 200 m
    leg = rmap.legs[0]
    dz = DzParams(reaction_time=delta, a_dec=a_dec)
    d = s_stop(v0, dz) - v0 * delta + slack
    x0 = leg.yield_point.x - d
    pred = rollout_mode(moving(x0, 0, v0, 0), Mode.STOP, leg, dz, PredictorConfig(horizon_steps=horizon))
    assert all(p.x <= leg.yield_point.x + 1e-9 for p in pred.positions)


def test_argmax_selection_and_tie_break():
    rmap = straight_map()
    h = straight_history(0, 10)
    scene = {1: h.states[-1][1]}
    cases = [(np.log([0.2, 0.5, 0.3]), Mode.YIELD), ([0, 0, 0], Mode.PROCEED), ([0, 1, 1], Mode.YIELD)]
    for scores, mode in cases:
        assert predict_most_likely(h, scene, rmap, CFG, scored(scores)).mode is mode


def scene_at(rmap, d, v, ttc, speed):
    app = approacher(rmap, d, v)
    return {1: app, 2: circulating(rmap, ttc, speed)}


def history_into(rmap, d, v, agent=1):
    states = [(k * 0.5, approacher(rmap, d + v * 0.5 * (3 - k), v)) for k in range(4)]
    return Trajectory(agent, 0.5, states)


@settings(max_examples=100)
@given(st.floats(11, 30), st.floats(3, 12), st.floats(0.2, 3), st.floats(3, 9),
       st.lists(st.floats(-5, 5), min_size=len(MODES) * N_FEATURES, max_size=len(MODES) * N_FEATURES),
       st.floats(-1e3, 1e3))
def test_argmax_shift_invariance_is_bitwise(rmap, d, v, ttc, speed, w, c):
    weights = np.array(w).reshape(len(MODES), N_FEATURES)
    shifted = weights.copy()
    shifted[:, -1] += c  # the bias feature is 1, so every score moves by c
    h = history_into(rmap, d, v)
    scene = scene_at(rmap, d, v, ttc, speed)
    a = predict_most_likely(h, scene, rmap, CFG, weights)
    b = predict_most_likely(h, scene, rmap, CFG, shifted)
    sa = estimate_mode_distribution(h, SignalState.GREEN, d, CFG, weights).scores
    if sorted(sa)[-1] - sorted(sa)[-2] > 1e-9 * (1 + abs(c)):  # a near-tie may round either way after the shift
        assert a == b


def test_constant_velocity_truth_is_exact():
    rmap = straight_map()
    h = straight_history(0, 10)
    pred = rollout_mode(h.states[-1][1], Mode.PROCEED, rmap.legs[0], DZ, CFG)
    truth = [Vec2(15.0 + 5.0 * (k + 1), 0.0) for k in range(4)]
    ade, fde = displacement_errors(pred, truth)
    assert ade == 0.0 and fde == [0.0] * 4


@given(st.floats(0, 25), st.floats(0, 20))
def test_constant_velocity_truth_exact_anywhere(v, x0):
    rmap = straight_map()
    state = moving(x0, 0, v, 0)
    pred = rollout_mode(state, Mode.PROCEED, rmap.legs[0], DZ, CFG)
    truth = Trajectory(1, 0.5, [((k + 1) * 0.5, moving(x0 + v * (k + 1) * 0.5, 0, v, 0)) for k in range(4)])
    ade, fde = displacement_errors(pred, truth)
    assert ade == pytest.approx(0.0, abs=1e-9) and max(fde) == pytest.approx(0.0, abs=1e-9)


def make_pred(points):
    return PredictedTrajectory(tuple(Vec2(x, y) for x, y in points), 0.5, Mode.PROCEED, Vec2(0, 0))


def test_displacement_examples():
    pts = [(5, 0), (10, 0), (15, 0), (20, 0)]
    assert displacement_errors(make_pred(pts), pts) == (0.0, [0.0] * 4)
    ade, fde = displacement_errors(make_pred(pts), [(x, y + 1) for x, y in pts])
    assert ade == 1.0 and fde == [1.0] * 4
    ade, fde = displacement_errors(make_pred(pts), [(x + e, y) for (x, y), e in zip(pts, [0.5, 1, 1.5, 2])])
    assert ade == 1.25 and fde[-1] == 2.0


def test_displacement_horizon_mismatch():
    with pytest.raises(HorizonMismatchError):
        displacement_errors(make_pred([(0, 0)] * 4), [(0, 0)] * 3)


def test_parallel_prediction_matches_sequential(rmap):
    from concurrent.futures import ThreadPoolExecutor

    predictor = Predictor(rmap, CFG)
    jobs = [(history_into(rmap, d, 9), scene_at(rmap, d, 9, 1.0, 7)) for d in np.linspace(5, 40, 24)]
    seq = [predictor.predict(h, s) for h, s in jobs]
    with ThreadPoolExecutor(4) as pool:
        par = list(pool.map(lambda j: predictor.predict(*j), jobs))
    assert par == seq


def test_red_in_zone_predicts_stop_and_green_proceeds(rmap):
    predictor = Predictor(rmap, CFG)
    h = history_into(rmap, 13, 6)  # stopping distance at 6 m/s is 11.9 m
    assert predictor.predict(h, scene_at(rmap, 13, 6, 1.0, 7)).mode is Mode.STOP
    assert predictor.predict(h, {1: h.states[-1][1]}).mode is Mode.PROCEED
