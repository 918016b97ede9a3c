"""Q-learning autonomous-exploration workload on the MAC energy models.

A robot with three quantized depth rays explores a walled grid arena. A
3-16-4 action-value network runs on the modeled MAC hardware (quantized
sign-magnitude weights, energy metered per MAC); training keeps float
shadow weights and re-quantizes after every semi-gradient step. All
randomness (weight init, exploration, replay sampling, drop-connect)
comes from one LFSR stream, so runs are bit-reproducible from the seed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from edgesim import macmodel as mm
from edgesim.stochsyn import DropMask, Lfsr, drop_mask, masked_weights

# headings are 45-degree steps counterclockwise from +x
HEADING_VECS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
N_HEADINGS = 8

ACTIONS = ("forward", "turn_left", "turn_right", "reverse")
N_ACTIONS = 4

DEPTH_BITS = 6
DEPTH_MAX = (1 << DEPTH_BITS) - 1
# rays relative to heading: -45, 0, +45 degrees
RAY_OFFSETS = (-1, 0, 1)

COLLISION_REWARD = -5.0
NEW_CELL_REWARD = 1.0

# integer hidden activations are rescaled to 6-bit operands by this shift
ACT_SHIFT = 5
# the float shadow net mirrors the integer rescale: y = min(GAIN * relu(a), 1)
ACT_GAIN = (DEPTH_MAX * DEPTH_MAX) / float((1 << ACT_SHIFT) * DEPTH_MAX)
# default sensor-conditioning horizon (cells); see proximity()
PROX_HORIZON = 8


class ArenaError(ValueError):
    pass


@dataclass(frozen=True)
class Arena:
    """Rectangular cell grid; obstacle set includes the full boundary."""

    width: int
    height: int
    obstacles: frozenset
    start: tuple

    def __post_init__(self):
        if self.start in self.obstacles:
            raise ArenaError(f"start cell {self.start} is an obstacle")
        for x in range(self.width):
            for y in (0, self.height - 1):
                if (x, y) not in self.obstacles:
                    raise ArenaError(f"boundary cell {(x, y)} must be an obstacle")
        for y in range(self.height):
            for x in (0, self.width - 1):
                if (x, y) not in self.obstacles:
                    raise ArenaError(f"boundary cell {(x, y)} must be an obstacle")

    def is_free(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and cell not in self.obstacles

    @property
    def free_cells(self) -> int:
        return self.width * self.height - len(self.obstacles)

    @classmethod
    def from_text(cls, text: str) -> "Arena":
        rows = [line for line in text.splitlines() if line.strip()]
        if not rows:
            raise ArenaError("empty arena description")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ArenaError("arena rows must all have the same width")
        obstacles = set()
        start = None
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                if ch == "#":
                    obstacles.add((x, y))
                elif ch == "S":
                    if start is not None:
                        raise ArenaError("arena has more than one start cell")
                    start = (x, y)
                elif ch != ".":
                    raise ArenaError(f"unexpected arena character {ch!r} at {(x, y)}")
        if start is None:
            raise ArenaError("arena has no start cell 'S'")
        return cls(width=width, height=len(rows), obstacles=frozenset(obstacles), start=start)

    @classmethod
    def from_file(cls, path) -> "Arena":
        return cls.from_text(Path(path).read_text())


DEFAULT_ARENA_TEXT = """\
############
#..........#
#..##......#
#..##......#
#......##..#
#......##..#
#..........#
#..###.....#
#..........#
#.......#..#
#S......#..#
############
"""


def default_arena() -> Arena:
    return Arena.from_text(DEFAULT_ARENA_TEXT)


@dataclass(frozen=True)
class RobotState:
    position: tuple
    heading: int  # index into HEADING_VECS


def sense(arena: Arena, state: RobotState) -> np.ndarray:
    """Quantized cell distance to the first obstacle along the -45/0/+45 rays,
    saturated at the 6-bit max range."""
    out = np.empty(3, dtype=np.int64)
    for i, off in enumerate(RAY_OFFSETS):
        dx, dy = HEADING_VECS[(state.heading + off) % N_HEADINGS]
        x, y = state.position
        dist = 0
        while dist < DEPTH_MAX:
            x += dx
            y += dy
            dist += 1
            if (x, y) in arena.obstacles:
                break
        out[i] = dist if (x, y) in arena.obstacles else DEPTH_MAX
    return out


def apply_action(arena: Arena, state: RobotState, action: int):
    """Returns (new state, collided). Moves into obstacles are refused."""
    if action == 1:
        return RobotState(state.position, (state.heading + 1) % N_HEADINGS), False
    if action == 2:
        return RobotState(state.position, (state.heading - 1) % N_HEADINGS), False
    dx, dy = HEADING_VECS[state.heading]
    if action == 3:
        dx, dy = -dx, -dy
    target = (state.position[0] + dx, state.position[1] + dy)
    if not arena.is_free(target):
        return state, True
    return RobotState(target, state.heading), False


# ---------------------------------------------------------------------------
# quantized action-value network


@dataclass
class QNetwork:
    """3-16-4 rectifier network; float shadow weights in [-1, 1], executed on
    the MAC models as 6-bit sign-magnitude operands.

    Instances are treated as immutable: training returns a new network, so
    the quantized view can be cached per instance.
    """

    w1: np.ndarray  # (hidden, 3)
    w2: np.ndarray  # (4, hidden)
    bits: int = DEPTH_BITS
    horizon: int = PROX_HORIZON

    @property
    def sizes(self):
        return (self.w1.shape[1], self.w1.shape[0], self.w2.shape[0])

    def quantized(self):
        """Sign/magnitude integer views of both layers (cached)."""
        cached = getattr(self, "_quant", None)
        if cached is None:
            full = (1 << self.bits) - 1
            mags, signs = [], []
            for w in (self.w1, self.w2):
                clipped = np.clip(w, -1.0, 1.0)
                mags.append((np.abs(clipped) * full + 0.5).astype(np.int64))
                signs.append(np.where(clipped < 0, -1, 1).astype(np.int64))
            cached = (mags, signs)
            self._quant = cached
        return cached


def init_network(lfsr: Lfsr, hidden: int = 16, scale: float = 0.3,
                 horizon: int = PROX_HORIZON):
    """LFSR-drawn init: first layer uniform in [-scale, scale], output layer
    uniform in [0, scale] (optimistic, so untried actions look worth taking)."""
    n1 = hidden * 3
    n2 = N_ACTIONS * hidden
    u, lfsr = lfsr.uniforms(n1 + n2)
    w1 = (u[:n1] * 2.0 - 1.0) * scale
    w2 = u[n1:] * scale
    return QNetwork(w1=w1.reshape(hidden, 3), w2=w2.reshape(N_ACTIONS, hidden),
                    horizon=horizon), lfsr


def _mac_array_energy(x_mag, w_mag, model, bits, params):
    """Total energy of pairing every weight with its input, per the model."""
    x_mag = np.asarray(x_mag)
    if model == "digital":
        return float(w_mag.size * mm.digital_energy(bits, params))
    if model == "tdms":
        return float(np.sum(mm.tdms_energy(w_mag * x_mag[None, :], bits, params)))
    if model == "hdms":
        return float(np.sum(mm.hdms_energy(x_mag[None, :].repeat(w_mag.shape[0], 0), w_mag, bits, params)))
    raise ValueError(f"unknown MAC model {model!r}")


def proximity(s, horizon: int = PROX_HORIZON) -> np.ndarray:
    """Depth readings enter the network as horizon-clipped proximities, so
    wall-adjacent states produce large, well-resolved operands while anything
    farther than the horizon reads zero (there the index-0 argmax tie favors
    going forward)."""
    d = np.asarray(s, dtype=np.int64)
    gain = DEPTH_MAX // max(horizon - 1, 1)
    return np.minimum(np.maximum((horizon - d) * gain, 0), DEPTH_MAX)


def arena_horizon(arena: "Arena") -> int:
    """Conditioning horizon matched to the arena scale, capped at the default."""
    return max(2, min(PROX_HORIZON, max(arena.width, arena.height) - 2))


def q_forward(net: QNetwork, s: np.ndarray, masks=None, model: str = "tdms",
              params: mm.EnergyParams | None = None):
    """Quantized layer-by-layer forward pass.

    Returns (action values as floats on the real-valued scale, energy_pj).
    Hidden integer activations are rectified and right-shifted back into
    6-bit operand range before the second layer.
    """
    if params is None:
        params = mm.default_params()
    x = proximity(s, net.horizon)
    (m1, m2), (s1, s2) = net.quantized()
    if masks is not None:
        mask1, mask2 = masks
        m1 = masked_weights(m1, mask1)
        m2 = masked_weights(m2, mask2)

    full = (1 << net.bits) - 1
    acc1 = (s1 * m1) @ x
    if np.any(np.abs(acc1) > mm.ACC_MAX):
        raise OverflowError("hidden-layer accumulator overflow")
    hidden = np.minimum(np.maximum(acc1, 0) >> ACT_SHIFT, full)
    acc2 = (s2 * m2) @ hidden
    if np.any(np.abs(acc2) > mm.ACC_MAX):
        raise OverflowError("output-layer accumulator overflow")

    energy = _mac_array_energy(x, m1, model, net.bits, params)
    energy += _mac_array_energy(hidden, m2, model, net.bits, params)
    scale = float(full * full)
    return acc2.astype(float) / scale, energy


def forward_float(net: QNetwork, x: np.ndarray):
    """Float shadow forward pass used by training; returns (q, hidden).

    Mirrors the integer path: rectify, apply the rescale gain, saturate at
    the 6-bit ceiling (1.0 on the real scale).
    """
    h = np.minimum(np.maximum(net.w1 @ x, 0.0) * ACT_GAIN, 1.0)
    return net.w2 @ h, h


def bellman_target(r: float, q_next_max: float, gamma: float, terminal: bool) -> float:
    if not 0 <= gamma < 1:
        raise ValueError(f"discount must be in [0, 1), got {gamma}")
    return r if terminal else r + gamma * q_next_max


def select_action(qvals, eps: float, lfsr: Lfsr):
    """Epsilon-greedy over the action values; ties go to the lowest index."""
    if not 0 <= eps <= 1:
        raise ValueError(f"exploration rate must be in [0, 1], got {eps}")
    u, lfsr = lfsr.uniform()
    if u < eps:
        action, lfsr = lfsr.randint(N_ACTIONS)
        return action, lfsr
    return int(np.argmax(qvals)), lfsr


@dataclass(frozen=True)
class Experience:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool

    def __post_init__(self):
        if not 0 <= self.a < N_ACTIONS:
            raise ValueError(f"action index {self.a} out of range")
        if not np.isfinite(self.r):
            raise ValueError("reward must be finite")


class Scratchpad:
    """Bounded experience store, oldest-first eviction, LFSR-driven sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._buf = deque(maxlen=capacity)

    def __len__(self):
        return len(self._buf)

    @property
    def capacity(self):
        return self._buf.maxlen

    def push(self, exp: Experience):
        self._buf.append(exp)

    def sample(self, n: int, lfsr: Lfsr):
        idx, lfsr = lfsr.randints(n, len(self._buf))
        return [self._buf[i] for i in idx], lfsr


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.02
    gamma: float = 0.9
    eps_start: float = 0.4
    eps_end: float = 0.12
    eps_decay: float = 0.93  # per episode
    capacity: int = 512
    batch_size: int = 8
    episodes: int = 80
    max_steps: int = 400
    drop_p: float = 0.25
    stochastic: bool = True
    convergence_window: int = 10
    convergence_frac: float = 0.7
    stop_at_convergence: bool = True

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if self.capacity < self.batch_size:
            raise ValueError("scratchpad capacity must be >= batch size")

    def epsilon(self, episode: int) -> float:
        return max(self.eps_end, self.eps_start * self.eps_decay**episode)


def train_step(net: QNetwork, batch, cfg: TrainConfig, masks=None) -> QNetwork:
    """One semi-gradient minibatch update toward the Bellman targets.

    Gradients are taken through the float shadow network (straight-through
    with respect to quantization); the batch-mean nudge is computed against
    the entry weights and applied once, then weights re-enter [-1, 1].

    With drop-connect masks, the prediction path runs on the masked weights
    and gradients flow only through kept connections; targets stay clean.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    xs = proximity(np.stack([e.s for e in batch]), net.horizon).astype(float) / DEPTH_MAX
    xn = proximity(np.stack([e.s_next for e in batch]), net.horizon).astype(float) / DEPTH_MAX
    actions = np.array([e.a for e in batch])
    rewards = np.array([e.r for e in batch])
    terminal = np.array([e.terminal for e in batch])

    w1, w2 = net.w1, net.w2
    if masks is not None:
        w1 = masked_weights(w1, masks[0])
        w2 = masked_weights(w2, masks[1])

    a1 = xs @ w1.T                               # (B, hidden) pre-activations
    h = np.minimum(np.maximum(a1, 0.0) * ACT_GAIN, 1.0)
    q = h @ w2.T                                 # (B, actions)
    a1n = xn @ net.w1.T
    h_next = np.minimum(np.maximum(a1n, 0.0) * ACT_GAIN, 1.0)
    q_next_max = (h_next @ net.w2.T).max(axis=1)
    targets = np.where(terminal, rewards, rewards + cfg.gamma * q_next_max)
    delta = targets - q[np.arange(len(batch)), actions]

    step = cfg.alpha / len(batch)
    d_w2 = np.zeros_like(net.w2)
    np.add.at(d_w2, actions, step * delta[:, None] * h)
    active = (a1 > 0.0) & (a1 * ACT_GAIN < 1.0)  # rectifier and saturation gate
    grad_h = step * delta[:, None] * w2[actions] * active * ACT_GAIN
    d_w1 = grad_h.T @ xs
    if masks is not None:
        d_w1 = d_w1 * masks[0].keep
        d_w2 = d_w2 * masks[1].keep

    w1 = np.clip(net.w1 + d_w1, -1.0, 1.0)
    w2 = np.clip(net.w2 + d_w2, -1.0, 1.0)
    return replace(net, w1=w1, w2=w2)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainingTrace:
    """Per-step and per-episode record of one training run."""

    iteration: np.ndarray
    episode: np.ndarray
    covered_cells: np.ndarray
    reward: np.ndarray
    energy_pj: np.ndarray
    episode_coverage: np.ndarray  # distinct cells covered per finished episode
    converged: bool
    convergence_episode: int  # -1 when the run never converged
    free_cells: int
    net: QNetwork = field(repr=False, default=None)

    def rows(self):
        for row in zip(self.iteration, self.episode, self.covered_cells,
                       self.reward, self.energy_pj):
            yield (int(row[0]), int(row[1]), int(row[2]), float(row[3]), float(row[4]))


def _sense_cache(arena: Arena):
    cache = {}
    for x in range(arena.width):
        for y in range(arena.height):
            if arena.is_free((x, y)):
                for h in range(N_HEADINGS):
                    cache[(x, y, h)] = sense(arena, RobotState((x, y), h))
    return cache


def run_training(arena: Arena, cfg: TrainConfig, seed: int, model: str = "tdms",
                 params: mm.EnergyParams | None = None) -> TrainingTrace:
    """Train the navigation policy; deterministic given the seed.

    Convergence: first episode whose moving-average coverage (window
    cfg.convergence_window) reaches cfg.convergence_frac of the free cells.
    The run stops there, or at the episode budget with converged=False.
    """
    if params is None:
        params = mm.default_params()
    lfsr = Lfsr(seed)
    net, lfsr = init_network(lfsr, horizon=arena_horizon(arena))
    pad = Scratchpad(cfg.capacity)
    depths = _sense_cache(arena)

    # stochastic synapses sit on the sensor fan-in (first layer), refreshed
    # every forward pass; the output layer always runs clean
    keep_all_w2 = DropMask(keep=np.ones(net.w2.shape, dtype=bool), p=0.0)

    it_rows, ep_rows, cov_rows, rew_rows, en_rows = [], [], [], [], []
    episode_coverage = []
    converged = False
    convergence_episode = -1
    iteration = 0
    target_cells = cfg.convergence_frac * arena.free_cells
    best_window = -1.0
    best_net = net

    for ep in range(cfg.episodes):
        state = RobotState(arena.start, 0)
        visited = {state.position}
        eps = cfg.epsilon(ep)
        for _ in range(cfg.max_steps):
            s = depths[(*state.position, state.heading)]
            masks = None
            if cfg.stochastic:
                m1, lfsr = drop_mask(net.w1.shape, cfg.drop_p, lfsr)
                masks = (m1, keep_all_w2)
            qvals, energy = q_forward(net, s, masks, model, params)
            action, lfsr = select_action(qvals, eps, lfsr)
            new_state, collided = apply_action(arena, state, action)
            reward = 0.0
            if collided:
                reward = COLLISION_REWARD
            elif new_state.position not in visited:
                visited.add(new_state.position)
                reward = NEW_CELL_REWARD
            terminal = len(visited) == arena.free_cells
            s_next = depths[(*new_state.position, new_state.heading)]
            pad.push(Experience(s, action, reward, s_next, terminal))

            if len(pad) >= cfg.batch_size:
                batch, lfsr = pad.sample(cfg.batch_size, lfsr)
                train_masks = None
                if cfg.stochastic:
                    m1, lfsr = drop_mask(net.w1.shape, cfg.drop_p, lfsr)
                    train_masks = (m1, keep_all_w2)
                net = train_step(net, batch, cfg, train_masks)

            it_rows.append(iteration)
            ep_rows.append(ep)
            cov_rows.append(len(visited))
            rew_rows.append(reward)
            en_rows.append(energy)
            iteration += 1
            state = new_state
            if terminal:
                break
        episode_coverage.append(len(visited))
        window = episode_coverage[-cfg.convergence_window:]
        if len(window) == cfg.convergence_window:
            avg = sum(window) / len(window)
            if avg > best_window:
                # keep the policy from the strongest window; late training
                # can drift after the replay buffer fills with stale zeros
                best_window = avg
                best_net = net
            if not converged and avg >= target_cells:
                converged = True
                convergence_episode = ep
                if cfg.stop_at_convergence:
                    break

    return TrainingTrace(
        iteration=np.array(it_rows), episode=np.array(ep_rows),
        covered_cells=np.array(cov_rows), reward=np.array(rew_rows),
        energy_pj=np.array(en_rows),
        episode_coverage=np.array(episode_coverage),
        converged=converged, convergence_episode=convergence_episode,
        free_cells=arena.free_cells, net=best_net,
    )


def run_policy(arena: Arena, net: QNetwork, eps: float, steps: int, seed: int,
               model: str = "tdms", params: mm.EnergyParams | None = None,
               stochastic: bool = False, drop_p: float = 0.25) -> int:
    """Run a trained policy for one evaluation episode; returns cells covered.

    With stochastic=True the synapse masks stay active, matching how a
    stochastic-hardware policy actually executes.
    """
    if params is None:
        params = mm.default_params()
    lfsr = Lfsr(seed)
    depths = _sense_cache(arena)
    keep_all_w2 = DropMask(keep=np.ones(net.w2.shape, dtype=bool), p=0.0)
    state = RobotState(arena.start, 0)
    visited = {state.position}
    for _ in range(steps):
        masks = None
        if stochastic:
            m1, lfsr = drop_mask(net.w1.shape, drop_p, lfsr)
            masks = (m1, keep_all_w2)
        qvals, _ = q_forward(net, depths[(*state.position, state.heading)],
                             masks, model, params)
        action, lfsr = select_action(qvals, eps, lfsr)
        state, _ = apply_action(arena, state, action)
        visited.add(state.position)
    return len(visited)
