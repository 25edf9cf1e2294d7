"""Scene-graph dilemma forecasting and maneuver advice.

Each frame becomes a graph whose nodes are vehicles and whose edges join
vehicles that are close or on a near-term collision course.  A small
message-passing network predicts, per vehicle, whether it is about to be in a
dilemma, whether it is about to cause one, and whether it will pass the yield
line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .deviation import TrainConfig, sigmoid
from .errors import DegenerateLabelsError
from .geometry import AgentState, RoundaboutMap, Trajectory, arc_distance_to_conflict, frame_index, in_circulating_lane
from .signal import DzEvent, SignalParams, SignalState, annotate, scenes_by_frame, time_to_collision

N_NODE_FEATURES = 7  # speed, lon. accel, distance, in-circulating, red, yellow, green
HEADS = ("p_dilemma", "p_causal", "p_pass")
FEATURE_SCALE = np.array([10.0, 4.0, 20.0, 1.0, 1.0, 1.0, 1.0])
EDGE_SCALE = 10.0
DIST_CLIP = (-20.0, 60.0)
MAX_ADVICE = 4.0  # m/s^2 safety cap


@dataclass(frozen=True)
class SceneGraph:
    agent_ids: tuple[int, ...]  # ascending
    features: np.ndarray  # (n, N_NODE_FEATURES), unscaled
    edges: tuple[tuple[int, int], ...]  # node index pairs, i < j
    edge_attr: tuple[float, ...]  # separation in meters

    def __len__(self) -> int:
        return len(self.agent_ids)

    def index(self, agent_id: int) -> int:
        return self.agent_ids.index(agent_id)


def _node_distance(state: AgentState, rmap: RoundaboutMap, dist_to_yield: float | None) -> float:
    if dist_to_yield is not None:
        d = dist_to_yield
    elif in_circulating_lane(state, rmap):
        d = min(arc_distance_to_conflict(state, leg, rmap) for leg in rmap.legs)
    else:
        d = 0.0
    return min(max(d, DIST_CLIP[0]), DIST_CLIP[1])


def build_scene_graph(scene: Mapping[int, AgentState], rmap: RoundaboutMap,
                      params: SignalParams | None = None) -> SceneGraph:
    """Nodes in ascending agent id; edges by proximity or a pending approach/circulating conflict."""
    params = params or SignalParams()
    ids = tuple(sorted(scene))
    feats = np.zeros((len(ids), N_NODE_FEATURES))
    infos = []
    circ = []
    for k, aid in enumerate(ids):
        st = scene[aid]
        info = annotate(st, scene, rmap, params)
        infos.append(info)
        on_circle = in_circulating_lane(st, rmap)
        circ.append(on_circle)
        feats[k, 0] = st.speed
        feats[k, 1] = st.longitudinal_acceleration
        feats[k, 2] = _node_distance(st, rmap, info.dist_to_yield)
        feats[k, 3] = float(on_circle)
        feats[k, 4 + [SignalState.RED, SignalState.YELLOW, SignalState.GREEN].index(info.signal)] = 1.0
    edges, attrs = [], []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = scene[ids[i]], scene[ids[j]]
            sep = (a.position - b.position).norm()
            linked = sep < params.d_t
            if not linked:
                for appr, other, is_circ in ((i, j, circ[j]), (j, i, circ[i])):
                    leg = infos[appr].leg
                    if leg is None or not is_circ or infos[appr].dist_to_yield is None or infos[appr].dist_to_yield <= 0:
                        continue
                    if time_to_collision(scene[ids[appr]], scene[ids[other]], leg, rmap) < params.t_max:
                        linked = True
                        break
            if linked:
                edges.append((i, j))
                attrs.append(sep)
    return SceneGraph(ids, feats, tuple(edges), tuple(attrs))


# -- network ------------------------------------------------------------------

@dataclass
class GnnParams:
    w_in: np.ndarray  # (hidden, features)
    b_in: np.ndarray
    w_self: list[np.ndarray]  # per round (hidden, hidden)
    w_msg: list[np.ndarray]
    w_edge: list[np.ndarray]  # per round (hidden,)
    b_msg: list[np.ndarray]
    b_upd: list[np.ndarray]
    w_out: np.ndarray  # (3, hidden)
    b_out: np.ndarray  # (3,)

    def __post_init__(self):
        if len(self.w_self) < 1:
            raise ValueError("at least one message-passing round required")
        if not all(len(x) == len(self.w_self) for x in (self.w_msg, self.w_edge, self.b_msg, self.b_upd)):
            raise ValueError("per-round parameter lists must have equal length")
        if not np.all(np.isfinite(self.flat())):
            raise ValueError("non-finite GNN parameters")

    @property
    def rounds(self) -> int:
        return len(self.w_self)

    @property
    def hidden(self) -> int:
        return self.w_in.shape[0]

    def _arrays(self) -> list[np.ndarray]:
        out = [self.w_in, self.b_in]
        for r in range(self.rounds):
            out += [self.w_self[r], self.w_msg[r], self.w_edge[r], self.b_msg[r], self.b_upd[r]]
        return out + [self.w_out, self.b_out]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    def with_flat(self, v: np.ndarray) -> "GnnParams":
        arrays, pos = [], 0
        for a in self._arrays():
            arrays.append(np.asarray(v[pos:pos + a.size], dtype=float).reshape(a.shape))
            pos += a.size
        return GnnParams._from_arrays(arrays, self.rounds)

    @classmethod
    def _from_arrays(cls, arrays: list[np.ndarray], rounds: int) -> "GnnParams":
        w_in, b_in = arrays[0], arrays[1]
        per = [arrays[2 + 5 * r:7 + 5 * r] for r in range(rounds)]
        return cls(w_in, b_in, [p[0] for p in per], [p[1] for p in per], [p[2] for p in per],
                   [p[3] for p in per], [p[4] for p in per], arrays[-2], arrays[-1])

    def copy(self) -> "GnnParams":
        return self.with_flat(self.flat().copy())

    @classmethod
    def zeros(cls, hidden: int = 16, rounds: int = 2) -> "GnnParams":
        return cls.init(0, hidden, rounds, scale=0.0)

    @classmethod
    def init(cls, seed: int, hidden: int = 16, rounds: int = 2, scale: float = 1.0) -> "GnnParams":
        rng = np.random.default_rng(seed)

        def u(shape, fan_in):
            k = scale / math.sqrt(fan_in)
            return rng.uniform(-k, k, shape)

        f = N_NODE_FEATURES
        arrays = [u((hidden, f), f), u(hidden, f)]
        for _ in range(rounds):
            arrays += [u((hidden, hidden), hidden), u((hidden, hidden), hidden), u(hidden, hidden),
                       u(hidden, hidden), u(hidden, hidden)]
        arrays += [u((len(HEADS), hidden), hidden), u(len(HEADS), hidden)]
        return cls._from_arrays(arrays, rounds)

    def to_dict(self) -> dict:
        return {"rounds": self.rounds, "hidden": self.hidden,
                "arrays": [a.tolist() for a in self._arrays()]}

    @classmethod
    def from_dict(cls, d: dict) -> "GnnParams":
        return cls._from_arrays([np.array(a, dtype=float) for a in d["arrays"]], int(d["rounds"]))


@dataclass(frozen=True)
class GraphBatch:
    """Several scene graphs stacked into one block-diagonal graph."""

    x: np.ndarray  # scaled node features
    mean_adj: sparse.csr_matrix  # row-normalized adjacency
    mean_edge: np.ndarray  # mean scaled edge attribute per node
    has_nbr: np.ndarray  # 1.0 where the node has at least one neighbor
    offsets: tuple[int, ...]


def batch_graphs(graphs: Sequence[SceneGraph]) -> GraphBatch:
    rows, cols, vals = [], [], []
    offsets, n = [], 0
    for g in graphs:
        offsets.append(n)
        for (i, j), sep in zip(g.edges, g.edge_attr):
            rows += [n + i, n + j]
            cols += [n + j, n + i]
            vals += [sep / EDGE_SCALE] * 2
        n += len(g)
    feats = [g.features for g in graphs if len(g)]
    x = (np.vstack(feats) if feats else np.zeros((0, N_NODE_FEATURES))) / FEATURE_SCALE
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    attr = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    mean_adj = sparse.diags(inv) @ adj
    mean_edge = inv * np.asarray(attr.sum(axis=1)).ravel()
    return GraphBatch(x, mean_adj.tocsr(), mean_edge, (deg > 0).astype(float), tuple(offsets))


def _forward(params: GnnParams, b: GraphBatch) -> tuple[np.ndarray, list[np.ndarray]]:
    h = np.tanh(b.x @ params.w_in.T + params.b_in)
    hs = [h]
    for r in range(params.rounds):
        pre = (h @ params.w_self[r].T + b.mean_adj @ (h @ params.w_msg[r].T)
               + np.outer(b.mean_edge, params.w_edge[r]) + np.outer(b.has_nbr, params.b_msg[r]) + params.b_upd[r])
        h = np.tanh(pre)
        hs.append(h)
    return sigmoid(h @ params.w_out.T + params.b_out), hs


@dataclass(frozen=True)
class NodeProbabilities:
    agent_ids: tuple[int, ...]
    p_dilemma: tuple[float, ...]
    p_causal: tuple[float, ...]
    p_pass: tuple[float, ...]

    def of(self, agent_id: int) -> tuple[float, float, float]:
        k = self.agent_ids.index(agent_id)
        return self.p_dilemma[k], self.p_causal[k], self.p_pass[k]


def forecast(graph: SceneGraph, params: GnnParams) -> NodeProbabilities:
    if len(graph) == 0:
        return NodeProbabilities((), (), (), ())
    p, _ = _forward(params, batch_graphs([graph]))
    cols = [tuple(float(v) for v in p[:, k]) for k in range(len(HEADS))]
    return NodeProbabilities(graph.agent_ids, *cols)


def forecast_batch(graphs: Sequence[SceneGraph], params: GnnParams) -> np.ndarray:
    """(total nodes, 3) probabilities for stacked graphs."""
    if not graphs or sum(len(g) for g in graphs) == 0:
        return np.zeros((0, len(HEADS)))
    return _forward(params, batch_graphs(graphs))[0]


def gnn_loss_and_grad(params: GnnParams, batch: GraphBatch, y: np.ndarray,
                      weights: np.ndarray | None = None) -> tuple[float, GnnParams]:
    """Mean (optionally weighted) binary cross-entropy over nodes and heads, with its gradient."""
    p, hs = _forward(params, batch)
    w = np.ones_like(y) if weights is None else weights
    n = y.size
    eps = 1e-12
    loss = float(-np.sum(w * (y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))) / n)
    dz = w * (p - y) / n
    h = hs[-1]
    g_out = dz.T @ h
    gb_out = dz.sum(axis=0)
    dh = dz @ params.w_out
    grads_round = []
    for r in reversed(range(params.rounds)):
        h_prev, h_cur = hs[r], hs[r + 1]
        da = dh * (1 - h_cur**2)
        agg = batch.mean_adj @ h_prev
        grads_round.append((da.T @ h_prev, da.T @ agg, da.T @ batch.mean_edge, da.T @ batch.has_nbr, da.sum(axis=0)))
        dh = da @ params.w_self[r] + batch.mean_adj.T @ (da @ params.w_msg[r])
    grads_round.reverse()
    da0 = dh * (1 - hs[0]**2)
    arrays = [da0.T @ batch.x, da0.sum(axis=0)]
    for gr in grads_round:
        arrays += list(gr)
    arrays += [g_out, gb_out]
    return loss, GnnParams._from_arrays(arrays, params.rounds)


# -- labels and training ----------------------------------------------------------

@dataclass(frozen=True)
class LabeledScene:
    frame: int
    graph: SceneGraph
    labels: np.ndarray  # (nodes, 3) in HEADS order


def _crossing_info(traj: Trajectory, rmap: RoundaboutMap, frames, params: SignalParams) -> dict[int, tuple[float | None, SignalState]]:
    out = {}
    for t, st in traj.states:
        f = frame_index(t, traj.dt)
        info = annotate(st, frames[f], rmap, params)
        out[f] = (info.dist_to_yield, info.signal)
    return out


def forecast_labels(trajectories: Iterable[Trajectory], events: Iterable[DzEvent], rmap: RoundaboutMap,
                    params: SignalParams | None = None, horizon: int = 4) -> dict[tuple[int, int], tuple[int, int, int]]:
    """Per (agent, frame) targets for the three heads.

    p_dilemma: the agent has a DZ event frame within the next ``horizon`` frames.
    p_causal: the agent is the recorded cause of an event with a frame in that window.
    p_pass: the agent crosses the yield line within the window and the signal
    it saw on its last frame before the line was not Red.
    """
    params = params or SignalParams()
    trajectories = list(trajectories)
    events = list(events)
    _, frames = scenes_by_frame(trajectories)
    dz_frames: dict[int, set[int]] = {}
    cause_frames: dict[int, set[int]] = {}
    for e in events:
        span = range(e.frame_start, e.frame_end + 1)
        dz_frames.setdefault(e.agent_id, set()).update(span)
        cause_frames.setdefault(e.cause_id, set()).update(span)
    labels = {}
    for traj in trajectories:
        info = _crossing_info(traj, rmap, frames, params)
        crossing = {}  # frame of the first state past the line -> pass allowed
        ordered = sorted(info)
        for prev, cur in zip(ordered, ordered[1:]):
            d0, sig0 = info[prev]
            d1, _ = info[cur]
            if d0 is not None and d0 > 0 and (d1 is None or d1 <= 0):
                crossing[cur] = sig0 is not SignalState.RED
        dz = dz_frames.get(traj.agent_id, set())
        cause = cause_frames.get(traj.agent_id, set())
        for f in ordered:
            window = range(f + 1, f + horizon + 1)
            labels[(traj.agent_id, f)] = (
                int(any(k in dz for k in window)),
                int(any(k in cause for k in window)),
                int(any(crossing.get(k, False) for k in window)),
            )
    return labels


def labeled_scenes(trajectories: Iterable[Trajectory], events: Iterable[DzEvent], rmap: RoundaboutMap,
                   params: SignalParams | None = None, horizon: int = 4, stride: int = 1) -> list[LabeledScene]:
    params = params or SignalParams()
    trajectories = list(trajectories)
    labels = forecast_labels(trajectories, events, rmap, params, horizon)
    _, frames = scenes_by_frame(trajectories)
    out = []
    for f in sorted(frames)[::stride]:
        g = build_scene_graph(frames[f], rmap, params)
        y = np.array([labels[(aid, f)] for aid in g.agent_ids], dtype=float).reshape(-1, len(HEADS))
        out.append(LabeledScene(f, g, y))
    return out


def head_weights(y: np.ndarray) -> np.ndarray:
    """Per-entry weights that give each head's positives and negatives equal total weight."""
    w = np.ones_like(y)
    for k in range(y.shape[1]):
        pos = y[:, k].sum()
        neg = len(y) - pos
        if pos > 0 and neg > 0:
            w[:, k] = np.where(y[:, k] > 0, 0.5 * len(y) / pos, 0.5 * len(y) / neg)
    return w


def train_forecaster(scenes: Sequence[LabeledScene], config: TrainConfig, hidden: int = 16, rounds: int = 2,
                     balance: bool = True, init: GnnParams | None = None) -> tuple[GnnParams, list[float]]:
    """Mini-batch gradient descent over scenes (``batch_size`` graphs per step)."""
    if not scenes:
        raise DegenerateLabelsError("no labeled scenes")
    all_y = np.vstack([s.labels for s in scenes])
    for k, name in enumerate(HEADS):
        if len(np.unique(all_y[:, k])) < 2:
            raise DegenerateLabelsError(f"labels for {name} contain a single class")
    params = (init or GnnParams.init(config.seed, hidden, rounds)).copy()
    rng = np.random.default_rng(config.seed + 1)
    weights = head_weights(all_y) if balance else None
    starts = np.cumsum([0] + [len(s.labels) for s in scenes])
    full = batch_graphs([s.graph for s in scenes])
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(scenes))
        for lo in range(0, len(scenes), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            b = batch_graphs([scenes[i].graph for i in idx])
            y = np.vstack([scenes[i].labels for i in idx])
            w = None if weights is None else np.vstack([weights[starts[i]:starts[i + 1]] for i in idx])
            _, grad = gnn_loss_and_grad(params, b, y, w)
            params = params.with_flat(params.flat() - config.learning_rate * grad.flat())
        loss, _ = gnn_loss_and_grad(params, full, all_y, weights)
        losses.append(loss)
    return params, losses


# -- maneuver advice --------------------------------------------------------------

class Action(str, Enum):
    ACCELERATE = "accelerate"
    DECELERATE = "decelerate"
    MAINTAIN = "maintain"


@dataclass(frozen=True)
class ManeuverAdvice:
    action: Action
    magnitude: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.magnitude <= MAX_ADVICE:
            raise ValueError(f"magnitude must be within [0, {MAX_ADVICE}]")

    @property
    def signed(self) -> float:
        sign = {Action.ACCELERATE: 1.0, Action.DECELERATE: -1.0, Action.MAINTAIN: 0.0}[self.action]
        return sign * self.magnitude


def advise_maneuver(p_dilemma: float, p_pass: float) -> ManeuverAdvice:
    if p_dilemma <= 0.5:
        return ManeuverAdvice(Action.MAINTAIN, 0.0)
    if p_pass > 0.5:
        return ManeuverAdvice(Action.ACCELERATE, 4.0)
    return ManeuverAdvice(Action.DECELERATE, 2.0)
