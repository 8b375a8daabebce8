"""Q-learning agents with experience replay and a target network.

One network serves both baselines: the goal-conditioned agent receives the
goal encoding as part of its input, while the plain agent gets the same input
with the goal block zeroed out, so the two differ in exactly one variable.
Training follows the classic recipe: epsilon-greedy acting with a per-step
linear anneal, uniform replay sampling, squared TD error against a
periodically synced frozen copy of the network, and a greedy test epoch after
every training epoch.  Runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .envs import GridworldEnv, GridworldState, StackEnv, StackState
from .geometry import grid_equal
from .shaping import ShapingMode, overlap_ratio


@dataclass(frozen=True)
class Transition:
    s: np.ndarray        # state encoding (uint8)
    g: np.ndarray        # goal encoding (uint8)
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear per-step interpolation, then constant."""

    start: float = 1.0
    end: float = 0.1
    anneal_steps: int = 20000

    def value(self, step: int) -> float:
        if step >= self.anneal_steps or self.anneal_steps <= 0:
            return self.end
        return self.start + (self.end - self.start) * step / self.anneal_steps


@dataclass
class AgentConfig:
    gamma: float = 0.99
    batch_size: int = 32
    target_update_every: int = 1000
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 100
    epoch_steps: int = 10000
    test_steps: int = 1000
    buffer_capacity: int = 200000
    anneal_epochs: int = 20
    goal_conditioned: bool = True
    learning_rate: float = 1e-3
    momentum: float = 0.9
    summed_input: bool = False   # feed background+foreground as one map
    eval_episode_cap: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        for name in ("batch_size", "target_update_every", "epochs",
                     "epoch_steps", "test_steps", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def gridworld_agent_config(size: int = 5, **overrides) -> AgentConfig:
    base = dict(gamma=0.9, epochs=100,
                epoch_steps=1000 if size == 5 else 3000,
                test_steps=100,
                buffer_capacity=20000 if size == 5 else 30000,
                learning_rate=0.03)
    base.update(overrides)
    return AgentConfig(**base)


def stacking_agent_config(**overrides) -> AgentConfig:
    # gamma 0.95 and a 250-step target sync: with the spec-suggested 0.99/1000
    # the sparse terminal reward never propagates within the step budget
    base = dict(gamma=0.95, epochs=100, epoch_steps=10000, test_steps=1000,
                buffer_capacity=200000, learning_rate=0.02,
                target_update_every=250)
    base.update(overrides)
    return AgentConfig(**base)


@dataclass(frozen=True)
class EvalReport:
    episodes: int
    success_ratio: float | None = None       # gridworld
    overlap_ratio_mean: float | None = None  # stacking (OR)
    success_rate: float | None = None        # stacking (SR)


def encode_state_parts(state: StackState | GridworldState,
                       cfg: AgentConfig) -> tuple[np.ndarray, np.ndarray]:
    """(state, goal) encodings as flat uint8 vectors, row-major, row 0 first."""
    if isinstance(state, StackState):
        bg = state.background.cells.ravel().astype(np.uint8)
        fg = state.foreground.cells.ravel().astype(np.uint8)
        s = (bg | fg) if cfg.summed_input else np.concatenate([bg, fg])
        return s, state.goal.cells.ravel().astype(np.uint8)
    n = state.size * state.size
    s = np.zeros(n, dtype=np.uint8)
    g = np.zeros(n, dtype=np.uint8)
    s[state.agent[1] * state.size + state.agent[0]] = 1
    g[state.goal[1] * state.size + state.goal[0]] = 1
    return s, g


def assemble_inputs(s: np.ndarray, g: np.ndarray, cfg: AgentConfig) -> np.ndarray:
    """Stack state and goal parts into network input; the goal block is
    zeroed for the goal-blind baseline."""
    s = np.atleast_2d(s)
    g = np.atleast_2d(g)
    if not cfg.goal_conditioned:
        g = np.zeros_like(g)
    return np.concatenate([s, g], axis=1).astype(np.float64)


def encode(state: StackState | GridworldState, goal, cfg: AgentConfig) -> np.ndarray:
    """Full network input for one state; ``goal`` is the state's goal."""
    s, g = encode_state_parts(state, cfg)
    del goal  # already carried by the state; kept for call-site clarity
    return assemble_inputs(s, g, cfg)[0]


def encoded_dims(env: StackEnv | GridworldEnv, cfg: AgentConfig) -> tuple[int, int]:
    if isinstance(env, StackEnv):
        cells = env.cfg.width * env.cfg.height
        return (cells if cfg.summed_input else 2 * cells), cells
    n = env.cfg.size * env.cfg.size
    return n, n


class ReplayBuffer:
    """Fixed-capacity FIFO ring over preallocated arrays; uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, goal_dim: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim), dtype=np.uint8)
        self.g = np.zeros((capacity, goal_dim), dtype=np.uint8)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity, dtype=np.float64)
        self.s_next = np.zeros((capacity, state_dim), dtype=np.uint8)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        i = self._next
        self.s[i] = t.s
        self.g[i] = t.g
        self.a[i] = t.a
        self.r[i] = t.r
        self.s_next[i] = t.s_next
        self.terminal[i] = t.terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=batch_size)
        return {"s": self.s[idx], "g": self.g[idx], "a": self.a[idx],
                "r": self.r[idx], "s_next": self.s_next[idx],
                "terminal": self.terminal[idx]}


def select_action(net: nn.Network, x: np.ndarray, epsilon: float,
                  rng: np.random.Generator, n_actions: int) -> int:
    """Epsilon-greedy with uniform tie-breaking among exact argmax ties."""
    if rng.random() < epsilon:
        return int(rng.integers(0, n_actions))
    q, _ = nn.forward(net, x)
    best = np.flatnonzero(q == q.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(0, len(best))])


def td_update(net: nn.Network, target_net: nn.Network, batch: dict,
              gamma: float, opt: nn.OptimizerState, cfg: AgentConfig) -> float:
    """One squared-TD-error gradient step on the taken actions; returns the
    batch TD loss before the update."""
    x_next = assemble_inputs(batch["s_next"], batch["g"], cfg)
    q_next, _ = nn.forward(target_net, x_next)
    targets = batch["r"] + gamma * q_next.max(axis=1) * ~batch["terminal"]
    x = assemble_inputs(batch["s"], batch["g"], cfg)
    q, cache = nn.forward(net, x)
    rows = np.arange(len(targets))
    err = q[rows, batch["a"]] - targets
    d_out = np.zeros_like(q)
    d_out[rows, batch["a"]] = 2.0 * err / len(targets)
    grads = nn.backward_from_output_grad(net, cache, d_out)
    nn.optimizer_step(net, grads, opt)
    return float(np.mean(err ** 2))


def sync_target(net: nn.Network) -> nn.Network:
    """Fresh frozen copy of the online network."""
    return net.copy()


def build_q_network(in_dim: int, n_actions: int, hidden: tuple[int, ...],
                    seed: int) -> nn.Network:
    specs = []
    prev = in_dim
    for width in hidden:
        specs.append(nn.LayerSpec(prev, width, nn.ACT_RELU))
        prev = width
    specs.append(nn.LayerSpec(prev, n_actions, nn.ACT_ID))
    return nn.net_init(tuple(specs), seed)


def _manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def evaluate_agent(env: StackEnv | GridworldEnv, net: nn.Network,
                   cfg: AgentConfig) -> EvalReport:
    """Greedy test epoch: run whole episodes until the step budget is spent.

    Gridworld success requires reaching the goal in exactly the Manhattan
    distance from the start; episodes are cut off (and count as failures)
    after eval_episode_cap steps since the environment itself never times out.
    Stacking reports mean overlap ratio and exact-reproduction rate of the
    final structures.
    """
    rng = np.random.default_rng([env.seed, 1])
    is_grid = isinstance(env, GridworldEnv)
    cap = cfg.eval_episode_cap
    if cap is None:
        cap = 4 * env.cfg.size ** 2 if is_grid else env.cfg.max_episode_steps + 1
    total_steps = 0
    successes = 0
    overlaps: list[float] = []
    exacts: list[bool] = []
    episodes = 0
    while total_steps < cfg.test_steps:
        state = env.reset()
        start = state
        steps = 0
        outcome = None
        while steps < cap:
            s, g = encode_state_parts(state, cfg)
            x = assemble_inputs(s, g, cfg)[0]
            action = select_action(net, x, 0.0, rng, env.n_actions)
            outcome = env.step(action)
            state = outcome.next
            steps += 1
            if outcome.terminal:
                break
        episodes += 1
        total_steps += steps
        if is_grid:
            if outcome is not None and outcome.terminal and \
                    steps == _manhattan(start.agent, start.goal):
                successes += 1
        else:
            overlaps.append(overlap_ratio(state.background, state.goal))
            exacts.append(grid_equal(state.background, state.goal))
    if is_grid:
        return EvalReport(episodes=episodes,
                          success_ratio=successes / episodes)
    return EvalReport(episodes=episodes,
                      overlap_ratio_mean=float(np.mean(overlaps)),
                      success_rate=float(np.mean(exacts)))


def train_agent(env: StackEnv | GridworldEnv, cfg: AgentConfig,
                shaping: ShapingMode = ShapingMode.NONE
                ) -> tuple[nn.Network, list[dict]]:
    """Full training run; returns the best-epoch model and per-epoch metrics.

    The best model is picked by test-epoch success rate (stacking) or success
    ratio (gridworld), ties resolved toward the earlier epoch.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    train_env = env.with_seed(int(seeds[0].generate_state(1)[0]))
    net = build_q_network(sum(encoded_dims(env, cfg)), env.n_actions,
                          cfg.hidden, int(seeds[1].generate_state(1)[0]))
    action_rng = np.random.default_rng(seeds[2])
    buffer_rng = np.random.default_rng(seeds[3])
    target = sync_target(net)
    opt = nn.OptimizerState(cfg.learning_rate, cfg.momentum)
    state_dim, goal_dim = encoded_dims(env, cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity, state_dim, goal_dim)
    schedule = EpsilonSchedule(anneal_steps=cfg.anneal_epochs * cfg.epoch_steps)

    is_grid = isinstance(env, GridworldEnv)
    metrics: list[dict] = []
    best_net = net.copy()
    best_metric = -1.0
    global_step = 0
    state = train_env.reset()
    episode_return = 0.0

    for epoch in range(cfg.epochs):
        epsilon_start = schedule.value(global_step)
        returns: list[float] = []
        losses: list[float] = []
        for _ in range(cfg.epoch_steps):
            eps = schedule.value(global_step)
            s_enc, g_enc = encode_state_parts(state, cfg)
            x = assemble_inputs(s_enc, g_enc, cfg)[0]
            action = select_action(net, x, eps, action_rng, env.n_actions)
            outcome = train_env.step(action)
            reward = outcome.reward + train_env.reward_shape(
                state, outcome.next, shaping)
            s2_enc, _ = encode_state_parts(outcome.next, cfg)
            buffer.push(Transition(s_enc, g_enc, action, reward, s2_enc,
                                   outcome.terminal))
            episode_return += reward
            state = outcome.next
            if outcome.terminal:
                returns.append(episode_return)
                episode_return = 0.0
                state = train_env.reset()
            if len(buffer) >= cfg.batch_size:
                batch = buffer.sample(cfg.batch_size, buffer_rng)
                losses.append(td_update(net, target, batch, cfg.gamma, opt, cfg))
            global_step += 1
            if global_step % cfg.target_update_every == 0:
                target = sync_target(net)
        eval_env = env.with_seed(int(seeds[4].generate_state(1)[0]) + epoch)
        report = evaluate_agent(eval_env, net, cfg)
        row = {"epoch": epoch, "epsilon": epsilon_start}
        if is_grid:
            row["success_ratio"] = report.success_ratio
            metric = report.success_ratio
        else:
            row["train_return_mean"] = (float(np.mean(returns))
                                        if returns else 0.0)
            row["test_or"] = report.overlap_ratio_mean
            row["test_sr"] = report.success_rate
            metric = report.success_rate
        metrics.append(row)
        if metric is not None and metric > best_metric:
            best_metric = metric
            best_net = net.copy()
    return best_net, metrics
