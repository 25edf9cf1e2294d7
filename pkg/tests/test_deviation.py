import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from sklearn.linear_model import LogisticRegression

from rounddz.deviation import (
    DeviationSeries,
    DzDetection,
    MlpParams,
    TrainConfig,
    WindowSample,
    balance,
    build_training_set,
    detect,
    detect_windows,
    label_windows,
    merge_detections,
    mine_windows,
    mlp_forward,
    mlp_loss_and_grad,
    mlp_train,
    path_deviation,
    sliding_windows,
)
from rounddz.errors import DegenerateLabelsError, EmptyMiningResultError
from rounddz.geometry import Vec2, build_roundabout
from rounddz.predictor import Mode, PredictedTrajectory, Predictor
from rounddz.sim import ProfileDistribution, SimConfig, simulate

from oracles import numeric_gradient, relative_error

PTS = [(5.0, 0.0), (10.0, 0.0), (15.0, 0.0), (20.0, 0.0)]


def pred_of(points, origin=(0.0, 0.0)):
    return PredictedTrajectory(tuple(Vec2(*p) for p in points), 0.5, Mode.PROCEED, Vec2(*origin))


def _dev(per_step, ratio):
    return DeviationSeries(per_step, sum(per_step), ratio, (ratio,) * len(per_step))


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.uniform(2.0, 6.0, (n, 4)), rng.uniform(0.0, 0.5, (n, 4))])
    y = np.r_[np.ones(n), np.zeros(n)]
    return x, y


# -- path deviation ------------------------------------------------------------

def test_deviation_of_exact_prediction():
    d = path_deviation(pred_of(PTS), PTS)
    assert d.per_step == (0.0,) * 4 and d.total == 0.0 and d.ratio == 0.0


def test_deviation_hand_sum():
    truth = [(x + e, y) for (x, y), e in zip(PTS, [0.5, 1.0, 1.5, 2.0])]
    d = path_deviation(pred_of(PTS), truth)
    assert d.per_step == pytest.approx((0.5, 1.0, 1.5, 2.0))
    assert d.total == pytest.approx(5.0)


def test_deviation_ratio_is_relative_to_origin():
    truth = [(5.0 * (k + 1), 0.0) for k in range(4)]
    pred = [(x, 1.0) for x, _ in truth]
    d = path_deviation(pred_of(pred), truth)
    assert d.ratio == pytest.approx(2.0 / math.sqrt(25 + 100 + 225 + 400))
    shifted = path_deviation(pred_of([(x + 100, y) for x, y in pred], (100.0, 0.0)),
                             [(x + 100, y) for x, y in truth])
    assert shifted.ratio == pytest.approx(d.ratio)


def test_stationary_truth_gives_infinite_ratio():
    d = path_deviation(pred_of(PTS, (0.0, 0.0)), [(0.0, 0.0)] * 4)
    assert d.ratio == math.inf
    still = path_deviation(pred_of([(0.0, 0.0)] * 4), [(0.0, 0.0)] * 4)
    assert still.ratio == 0.0


@given(hnp.arrays(float, (4, 2), elements=st.floats(-50, 50)), hnp.arrays(float, (4, 2), elements=st.floats(-50, 50)))
def test_deviation_sum_matches_steps(p, t):
    d = path_deviation(pred_of(p.tolist()), t.tolist())
    assert abs(d.total - sum(d.per_step)) < 1e-9
    assert all(e >= 0 for e in d.per_step) and len(d.per_step) == 4


# -- classifier ----------------------------------------------------------------

def test_forward_examples():
    assert mlp_forward(MlpParams.zeros(), [1, 2, 3, 4]) == pytest.approx(0.5)
    p = MlpParams.zeros()
    p.b2[:] = math.log(3)
    assert mlp_forward(p, [9, -9, 0, 1]) == pytest.approx(0.75)


@given(hnp.arrays(float, 4, elements=st.floats(-100, 100)), st.integers(0, 1000))
def test_forward_strictly_inside_unit_interval(x, seed):
    z = mlp_forward(MlpParams.init(seed), x)
    assert 0 < z < 1


def test_param_shapes_and_finiteness():
    p = MlpParams.init(3)
    assert p.w1.shape == (4, 32) and p.b1.shape == (32,) and p.w2.shape == (32, 1) and p.b2.shape == (1,)
    with pytest.raises(ValueError):
        MlpParams(np.full((4, 32), np.nan), np.zeros(32), np.zeros((32, 1)), np.zeros(1))


def test_init_is_uniform_in_fan_in_bounds():
    p = MlpParams.init(0)
    assert np.abs(p.w1).max() <= 0.5 and np.abs(p.b1).max() <= 0.5
    assert np.abs(p.w2).max() <= 1 / math.sqrt(32) and np.abs(p.b2).max() <= 1 / math.sqrt(32)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    params = MlpParams.init(seed)
    x = rng.uniform(0, 4, (16, 4))
    y = (rng.uniform(size=16) > 0.5).astype(float)

    def loss(v):
        return mlp_loss_and_grad(MlpParams.from_flat(v), x, y)[0]

    _, grad = mlp_loss_and_grad(params, x, y)
    assert relative_error(grad.flat(), numeric_gradient(loss, params.flat(), 1e-5)) < 1e-4


def test_separable_set_matches_logistic_oracle():
    x, y = separable()
    params, _ = mlp_train(x, y, TrainConfig(epochs=100, seed=0))
    acc = np.mean((mlp_forward(params, x) > 0.5) == (y > 0.5))
    oracle = LogisticRegression().fit(x, y).score(x, y)
    assert oracle == 1.0
    assert acc >= 0.99


def test_zero_learning_rate_keeps_init():
    x, y = separable(20)
    params, _ = mlp_train(x, y, TrainConfig(epochs=3, learning_rate=0.0, seed=4))
    assert np.array_equal(params.flat(), MlpParams.init(4).flat())


def test_training_is_deterministic():
    x, y = separable(50)
    a, la = mlp_train(x, y, TrainConfig(epochs=5, seed=9))
    b, lb = mlp_train(x, y, TrainConfig(epochs=5, seed=9))
    assert np.array_equal(a.flat(), b.flat()) and la == lb


@pytest.mark.parametrize("seed", range(5))
def test_loss_non_increasing_on_separable_set(seed):
    x, y = separable(seed=seed)
    _, losses = mlp_train(x, y, TrainConfig(epochs=100, learning_rate=0.1, seed=seed))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_single_class_rejected():
    with pytest.raises(DegenerateLabelsError):
        mlp_train(np.ones((5, 4)), np.ones(5), TrainConfig(epochs=1))


def test_train_config_validation():
    for kw in ({"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


# -- mining and balancing ------------------------------------------------------

def windows(spec):
    """(agent, frame, per_step, ratio, label) tuples to samples."""
    return [WindowSample(a, f, _dev(tuple(map(float, d)), r), lab) for a, f, d, r, lab in spec]


def test_perfect_predictions_mine_nothing():
    ws = windows([(1, f, (0, 0, 0, 0), 0.0, False) for f in range(10)])
    assert mine_windows(ws) == []
    with pytest.raises(EmptyMiningResultError):
        balance(ws)


def test_zero_threshold_keeps_everything():
    ws = windows([(1, f, (0, 0, 0, 0), 0.0, f % 2 == 0) for f in range(10)])
    assert mine_windows(ws, 0.0) == ws


def test_balance_takes_largest_non_dz():
    ws = windows([(1, 0, (3, 3, 3, 3), 1.0, True), (1, 1, (4, 4, 4, 4), 1.0, True),
                  (2, 0, (1, 1, 1, 1), 0.9, False), (2, 1, (5, 5, 5, 5), 0.9, False),
                  (2, 2, (2, 2, 2, 2), 0.9, False), (2, 3, (9, 9, 9, 9), 0.1, False)])
    ts = balance(ws)
    assert ts.counts() == (2, 2)
    assert sorted(w.deviation.total for w in ts.samples if not w.label) == [8.0, 20.0]


def test_balance_fills_from_unmined_before_dropping_dz():
    ws = windows([(1, 0, (3, 3, 3, 3), 1.0, True), (1, 1, (4, 4, 4, 4), 1.0, True),
                  (2, 0, (1, 1, 1, 1), 0.9, False), (2, 3, (9, 9, 9, 9), 0.1, False)])
    ts = balance(ws)
    assert ts.counts() == (2, 2)
    assert sorted(w.deviation.total for w in ts.samples if not w.label) == [4.0, 36.0]


@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 2), st.booleans()), min_size=1, max_size=60))
def test_balance_is_exact(rows):
    ws = windows([(k % 7, k, (d,) * 4, r, lab) for k, (d, r, lab) in enumerate(rows)])
    try:
        ts = balance(ws)
    except EmptyMiningResultError:
        assert not mine_windows(ws)
        return
    pos, neg = ts.counts()
    assert pos == neg


def test_labels_follow_truth_overlap():
    from rounddz.signal import DzEvent

    ws = windows([(1, f, (0, 0, 0, 0), 0.0, False) for f in range(10)])
    labeled = label_windows(ws, [DzEvent(1, 3.0, 3.5, 2, 6, 7)], horizon=4)
    # a window predicts the motion out of frames anchor .. anchor + 3
    assert [w.anchor_frame for w in labeled if w.label] == [3, 4, 5, 6, 7]


# -- detection -----------------------------------------------------------------

def test_merge_adjacent_hits():
    hits = [(1, 3, 0.6), (1, 4, 0.7), (1, 6, 0.9), (1, 9, 0.8), (2, 4, 0.55)]
    assert merge_detections(hits) == [DzDetection(1, 3, 6, 0.9), DzDetection(1, 9, 9, 0.8),
                                      DzDetection(2, 4, 4, 0.55)]


def test_detect_strict_threshold():
    ws = windows([(1, f, (2, 2, 2, 2), 1.0, False) for f in range(5)])
    assert detect_windows(ws, MlpParams.zeros()) == []


def test_detect_empty_input(rmap):
    assert detect([], Predictor(rmap), MlpParams.init(0)) == []


def test_detections_carry_positive_decisions():
    ws = windows([(1, f, (f, f, f, f), 1.0, False) for f in range(8)])
    p = MlpParams.zeros()
    p.w2[:] = 1.0
    p.b2[:] = -16.5  # sigmoid of hidden units sums above 16.5 only for large deviations
    p.w1[:] = 1.0
    dets = detect_windows(ws, p)
    assert dets and all(d.decision for d in dets)


@pytest.fixture(scope="module")
def small_run():
    rmap = build_roundabout()
    # every dilemma-zone driver brakes hard, so each truth event is an injected abnormal stop
    res = simulate(rmap, SimConfig(duration=900.0, seed=3, profiles=ProfileDistribution(dz_brake_probability=1.0)))
    return rmap, res


def test_simulated_training_set_is_balanced_and_truthful(small_run):
    rmap, res = small_run
    assert len(res.ground_truth_events) >= 3
    predictor = Predictor(rmap)
    ts = build_training_set(res.trajectories, predictor, res.ground_truth_events)
    pos, neg = ts.counts()
    assert pos == neg > 0
    spans = {}
    for e in res.ground_truth_events:
        spans.setdefault(e.agent_id, []).append((e.frame_start, e.frame_end))
    for w in ts.samples:
        if w.label:
            assert any(a <= w.anchor_frame + 3 and b >= w.anchor_frame for a, b in spans[w.agent_id])


def test_trained_detector_overlaps_injected_events(small_run):
    rmap, res = small_run
    predictor = Predictor(rmap)
    samples = label_windows(sliding_windows(res.trajectories, predictor), res.ground_truth_events, 4)
    ts = balance(samples)
    params, _ = mlp_train(ts.x, ts.y, TrainConfig(epochs=2000, seed=0))
    dets = detect_windows(samples, params)
    for e in res.ground_truth_events:
        assert any(d.agent_id == e.agent_id and d.frame_start <= e.frame_end + 4 and d.frame_end >= e.frame_start - 4
                   for d in dets), e
