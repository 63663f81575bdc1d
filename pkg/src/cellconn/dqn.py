"""Q-learning over connection graphs.

One episode reassigns the reshuffled (cell-edge) UEs of a deployment, one
UE per step; the action space is every (cell, ue) pair with the UE still
unassigned and the cell in that UE's measurement report.  Updates follow
plain one-step TD with an experience buffer, no target network:

    y = r + gamma * max_a' Q(s', a')          (y = r at terminal steps)
    w <- w + alpha * mean_batch[(y - Q) dQ/dw]

Everything downstream of the seed is deterministic: a single generator
drives exploration and batch sampling, and ties are broken by index.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from cellconn.graph import (ConnectionGraph, capacity_matrix, connect,
                            initial_graph, input_features)
from cellconn.gnn import (GnnParams, backward, forward, init_params,
                          param_arrays, score_action)
from cellconn.metrics import (coverage, jain_index, reward_fair,
                              reward_throughput, sum_throughput)
from cellconn.netmodel import Deployment, measurement_report

REWARD_KINDS = ("throughput", "fair")


class DivergenceError(RuntimeError):
    """Raised when a TD update produces non-finite values."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the learner; defaults match the bundled benchmark."""

    n_deployments: int = 0              # 0 = use every deployment passed in
    episodes_per_deployment: int = 1
    epsilon: float = 0.1
    alpha: float = 0.1
    gamma: float = 1.0
    buffer_size: int = 8
    batch_size: int = 4
    reward_kind: str = "fair"
    lambda_fair: float = 0.5
    seed: int = 0
    gnn_layers: int = 2
    gnn_width: int = 8
    init_std: float = 0.01
    d_max_m: float = 250.0
    edge_threshold_db: float = 3.0
    grad_clip_norm: float | None = 10.0  # None disables clipping

    def validate(self) -> None:
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward_kind must be one of {REWARD_KINDS}, "
                             f"got {self.reward_kind!r}")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError(f"need buffer_size >= batch_size >= 1, got "
                             f"{self.buffer_size}/{self.batch_size}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")


@dataclass(frozen=True)
class EpisodeState:
    """Snapshot of one decision point: graph, pending UEs, action candidates.

    ``candidates`` maps each UE to the cells of its measurement report;
    ``cap`` is the deployment's capacity matrix (shared, never mutated).
    """

    graph: ConnectionGraph
    unassigned: tuple[int, ...]
    candidates: dict[int, tuple[int, ...]]
    cap: np.ndarray


@dataclass(frozen=True)
class Transition:
    state: EpisodeState
    action: tuple[int, int]  # (cell, ue)
    reward: float
    next_state: EpisodeState
    terminal: bool


class ReplayBuffer:
    """Fixed-size FIFO experience buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        """k transitions drawn uniformly without replacement."""
        if k > len(self._items):
            raise ValueError(f"cannot sample {k} from buffer of {len(self._items)}")
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


def legal_actions(s: EpisodeState) -> list[tuple[int, int]]:
    """All (cell, ue) pairs still available, ordered by (ue, cell)."""
    return [(cell, ue)
            for ue in s.unassigned
            for cell in sorted(s.candidates[ue])]


def best_action(p: GnnParams, s: EpisodeState,
                actions: Sequence[tuple[int, int]]) -> tuple[int, int]:
    """Highest-scoring action; exact ties go to the earliest (ue, cell) pair."""
    best = actions[0]
    best_q = -math.inf
    for a in actions:
        q = score_action(p, s.graph, s.cap, a[0], a[1])
        if q > best_q:
            best, best_q = a, q
    return best


def select_action(p: GnnParams, s: EpisodeState, epsilon: float,
                  rng: np.random.Generator | None) -> tuple[int, int]:
    """Epsilon-greedy pick among the legal actions of ``s``."""
    actions = legal_actions(s)
    if not actions:
        raise ValueError("no legal action: every UE is assigned or has no candidates")
    if epsilon > 0.0 and rng is not None and rng.random() < epsilon:
        return actions[int(rng.integers(len(actions)))]
    return best_action(p, s, actions)


def td_target(p: GnnParams, t: Transition, gamma: float) -> float:
    """One-step bootstrapped return; plain reward at terminal transitions."""
    if t.terminal:
        return t.reward
    nxt = t.next_state
    best = max(score_action(p, nxt.graph, nxt.cap, cell, ue)
               for cell, ue in legal_actions(nxt))
    return t.reward + gamma * best


def sgd_step(p: GnnParams, batch: Sequence[Transition], alpha: float,
             gamma: float, grad_clip_norm: float | None = 10.0) -> tuple[GnnParams, float]:
    """One semi-gradient update from a batch; returns (new params, mean TD loss).

    The per-transition directions (y - Q) dQ/dw are averaged, clipped to the
    given global norm, then applied once.  Targets are computed with the
    incoming parameters (no target network).

    Raises:
        DivergenceError: a target, score or gradient went non-finite.
    """
    direction = [np.zeros_like(a) for a in param_arrays(p)]
    loss = 0.0
    for t in batch:
        y = td_target(p, t, gamma)
        cell, ue = t.action
        g_next = connect(t.state.graph, cell, ue)
        trace = forward(p, g_next, input_features(g_next, t.state.cap))
        delta = y - trace.score
        if not math.isfinite(delta):
            raise DivergenceError(f"non-finite TD error: target={y}, q={trace.score}")
        grads = backward(p, trace)
        for d, g in zip(direction, param_arrays(grads)):
            d += (delta / len(batch)) * g
        loss += delta * delta / len(batch)

    norm = math.sqrt(sum(float(np.square(d).sum()) for d in direction))
    if not math.isfinite(norm):
        raise DivergenceError(f"non-finite gradient (norm={norm})")
    if grad_clip_norm is not None and norm > grad_clip_norm:
        direction = [d * (grad_clip_norm / norm) for d in direction]

    arrays = [a + alpha * d for a, d in zip(param_arrays(p), direction)]
    n = p.n_layers
    return GnnParams(w1=arrays[:n], w2=arrays[n:2 * n], w3=arrays[2 * n:3 * n],
                     w4=arrays[3 * n], w5=arrays[3 * n + 1]), loss


@dataclass(frozen=True)
class EpisodeRow:
    deployment_id: int
    episode: int
    ep_return: float
    u_throughput: float
    u_coverage: float
    u_jain: float
    epsilon_used: float
    loss_mean: float


@dataclass
class TrainLog:
    """Per-episode training records, writable as CSV."""

    rows: list[EpisodeRow] = field(default_factory=list)

    COLUMNS = ("deployment_id", "episode", "ep_return", "u_throughput",
               "u_coverage", "u_jain", "epsilon_used", "loss_mean")

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for r in self.rows:
                writer.writerow([r.deployment_id, r.episode, repr(r.ep_return),
                                 repr(r.u_throughput), repr(r.u_coverage),
                                 repr(r.u_jain), repr(r.epsilon_used),
                                 repr(r.loss_mean)])


def episode_candidates(dep: Deployment) -> dict[int, tuple[int, ...]]:
    """Measurement-report cells for every UE of a deployment."""
    return {j: measurement_report(dep, j).cells for j in range(dep.n_ues)}


def step_reward(kind: str, lam: float, g_prev: ConnectionGraph,
                g_next: ConnectionGraph, cap: np.ndarray) -> float:
    if kind == "throughput":
        return reward_throughput(g_prev, g_next, cap)
    return reward_fair(g_prev, g_next, cap, lam)


def run_episode(p: GnnParams, cfg: TrainConfig, state: EpisodeState,
                buffer: ReplayBuffer | None, rng: np.random.Generator | None,
                epsilon: float) -> tuple[GnnParams, float, list[float], ConnectionGraph]:
    """Play one episode; learn along the way when a buffer is given.

    Returns the (possibly updated) parameters, the episode return, the
    per-step TD losses (empty while the buffer is warming up), and the
    terminal graph.
    """
    ep_return = 0.0
    losses: list[float] = []
    while state.unassigned:
        cell, ue = select_action(p, state, epsilon, rng)
        g_next = connect(state.graph, cell, ue)
        r = step_reward(cfg.reward_kind, cfg.lambda_fair, state.graph, g_next, state.cap)
        remaining = tuple(j for j in state.unassigned if j != ue)
        next_state = EpisodeState(graph=g_next, unassigned=remaining,
                                  candidates=state.candidates, cap=state.cap)
        if buffer is not None:
            buffer.push(Transition(state=state, action=(cell, ue), reward=r,
                                   next_state=next_state, terminal=not remaining))
            if len(buffer) >= cfg.batch_size:
                batch = buffer.sample(cfg.batch_size, rng)
                p, loss = sgd_step(p, batch, cfg.alpha, cfg.gamma, cfg.grad_clip_norm)
                losses.append(loss)
        ep_return += r
        state = next_state
    return p, ep_return, losses, state.graph


def deployment_state(dep: Deployment, cfg: TrainConfig,
                     cap: np.ndarray | None = None,
                     candidates: dict[int, tuple[int, ...]] | None = None) -> EpisodeState:
    """Initial episode state for a deployment under the given config."""
    g0, reshuffled = initial_graph(dep, cfg.edge_threshold_db, cfg.d_max_m)
    return EpisodeState(graph=g0, unassigned=reshuffled,
                        candidates=candidates or episode_candidates(dep),
                        cap=cap if cap is not None else capacity_matrix(dep))


def train(cfg: TrainConfig, deployments: Iterable[Deployment]) -> tuple[GnnParams, TrainLog]:
    """Fit the Q-network across deployments.

    Deployments are visited in order, ``episodes_per_deployment`` episodes
    each; the experience buffer carries over between them.  Reproducible:
    the same config and deployments give bit-identical parameters and log.
    """
    cfg.validate()
    deployments = list(deployments)
    if cfg.n_deployments > 0:
        deployments = deployments[: cfg.n_deployments]
    if not deployments:
        raise ValueError("no deployments to train on")

    p = init_params(cfg.seed, cfg.gnn_layers, cfg.gnn_width, cfg.init_std)
    rng = np.random.default_rng([cfg.seed, 1])
    buffer = ReplayBuffer(cfg.buffer_size)
    log = TrainLog()

    for dep in deployments:
        cap = capacity_matrix(dep)
        candidates = episode_candidates(dep)
        for ep in range(cfg.episodes_per_deployment):
            state = deployment_state(dep, cfg, cap, candidates)
            p, ep_return, losses, final = run_episode(p, cfg, state, buffer, rng,
                                                      cfg.epsilon)
            log.rows.append(EpisodeRow(
                deployment_id=dep.seed, episode=ep, ep_return=ep_return,
                u_throughput=sum_throughput(final, cap),
                u_coverage=coverage(final, cap),
                u_jain=jain_index(final),
                epsilon_used=cfg.epsilon,
                loss_mean=float(np.mean(losses)) if losses else float("nan")))
    return p, log


def greedy_rollout(p: GnnParams, state: EpisodeState) -> ConnectionGraph:
    """Assign every pending UE greedily (epsilon = 0); returns the final graph."""
    while state.unassigned:
        cell, ue = select_action(p, state, 0.0, None)
        remaining = tuple(j for j in state.unassigned if j != ue)
        state = EpisodeState(graph=connect(state.graph, cell, ue),
                             unassigned=remaining, candidates=state.candidates,
                             cap=state.cap)
    return state.graph
