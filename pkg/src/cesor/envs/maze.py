"""Guarded Maze: a noisy 8x8 grid where the short route crosses a guarded cell.

Each episode the guard is present with probability phi1 and, when present,
charges an exponentially distributed cost with mean phi2 on first entry.
"""
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..cem import Bernoulli, ExponentialMean, Product
from ..kernels.maze import MOVES, maze_rollout, soft_onehot_batch
from .base import EnvContract, EpisodeDone, RolloutBatch


class Strategy(str, enum.Enum):
    SHORT = "Short"
    LONG = "Long"
    STAY = "Stay"


@dataclass
class MazeLayout:
    walls: np.ndarray  # bool, indexed [x, y]
    guard: tuple
    target: tuple
    start_lo: tuple = (0.0, 0.0)
    start_hi: tuple = (4.0, 4.0)

    @property
    def size(self):
        return self.walls.shape[0]


def parse_layout(text: str) -> MazeLayout:
    """Rows top-first: ``.`` free, ``#`` wall, ``G`` guard, ``T`` target.

    Lines starting with ``# `` (hash then space) are comments.
    """
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [r for r in rows if r and not r.startswith("# ")]
    n = len(rows)
    if n < 2 or any(len(r) != n for r in rows):
        raise ValueError("layout must be a square grid of at least 2x2")
    walls = np.zeros((n, n), dtype=bool)
    guard = target = None
    for k, row in enumerate(rows):
        y = n - 1 - k
        for x, ch in enumerate(row):
            if ch == "#":
                walls[x, y] = True
            elif ch == "G":
                guard = (x, y)
            elif ch == "T":
                target = (x, y)
            elif ch != ".":
                raise ValueError(f"unknown layout character {ch!r}")
    if guard is None or target is None:
        raise ValueError("layout needs one guard cell G and one target cell T")
    half = n / 2.0
    return MazeLayout(walls, guard, target, (0.0, 0.0), (half, half))


def default_layout() -> MazeLayout:
    text = resources.files("cesor.data").joinpath("maze_default.txt").read_text(encoding="utf-8")
    return parse_layout(text)


def load_layout(path) -> MazeLayout:
    with open(path, encoding="utf-8") as fh:
        return parse_layout(fh.read())


@dataclass
class MazeConfig:
    layout: MazeLayout = field(default_factory=default_layout)
    noise_std: float = 0.2
    horizon: int = 160
    step_cost_cap: float = 32.0
    target_reward: float = 16.0
    guard_prob: float = 0.2
    guard_cost_mean: float = 32.0


# -- layout validation -------------------------------------------------------

def _bfs(walls, src, forbidden=None):
    n = walls.shape[0]
    dist = np.full((n, n), -1, dtype=np.int64)
    if walls[src]:
        return dist
    dist[src] = 0
    queue = deque([src])
    while queue:
        x, y = queue.popleft()
        for dx, dy in ((-1, 0), (1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < n and 0 <= ny < n and not walls[nx, ny] and dist[nx, ny] < 0 \
                    and (nx, ny) != forbidden:
                dist[nx, ny] = dist[x, y] + 1
                queue.append((nx, ny))
    return dist


@dataclass
class LayoutReport:
    passed: bool
    l_short: float
    l_long: float
    delta: float
    reasons: list
    start_cell: tuple


def maze_validate_layout(config) -> LayoutReport:
    """BFS route lengths from the start-region centroid, through and around the guard.

    Passes when the detour costs more than the expected guard charge but less
    than 40 steps, and both routes fit inside the step-cost cap.
    """
    if isinstance(config, MazeConfig):
        layout, cap = config.layout, config.step_cost_cap
        expected_charge = config.guard_prob * config.guard_cost_mean
    else:
        layout, cap, expected_charge = config, 32.0, 6.4
    walls = layout.walls
    cx = (layout.start_lo[0] + layout.start_hi[0]) / 2.0
    cy = (layout.start_lo[1] + layout.start_hi[1]) / 2.0
    start = (int(math.floor(cx)), int(math.floor(cy)))
    reasons = []
    if walls[start] or walls[layout.guard] or walls[layout.target]:
        reasons.append("start, guard or target cell is a wall")
        return LayoutReport(False, math.inf, math.inf, math.nan, reasons, start)
    to_guard = _bfs(walls, start, forbidden=layout.target)[layout.guard]
    guard_to_target = _bfs(walls, layout.guard)[layout.target]
    l_short = math.inf if to_guard < 0 or guard_to_target < 0 else float(to_guard + guard_to_target)
    around = _bfs(walls, start, forbidden=layout.guard)[layout.target]
    l_long = math.inf if around < 0 else float(around)
    if math.isinf(l_short):
        reasons.append("no route through the guard cell")
    if math.isinf(l_long):
        reasons.append("no route around the guard cell")
    delta = l_long - l_short if not reasons else math.nan
    if not reasons:
        if not expected_charge < delta < 40:
            reasons.append(f"detour length {delta:g} outside ({expected_charge:g}, 40)")
        if l_short > cap or l_long > cap:
            reasons.append(f"route longer than the step-cost cap {cap:g}")
    return LayoutReport(not reasons, l_short, l_long, delta, reasons, start)


# -- environment -------------------------------------------------------------

@dataclass
class MazeState:
    pos: np.ndarray
    t: int
    paid: float
    guard_cost: float
    noise: np.ndarray
    entered_guard: bool = False
    reached: bool = False
    done: bool = False


def maze_classify(reached: bool, entered_guard: bool) -> Strategy:
    if not reached:
        return Strategy.STAY
    return Strategy.SHORT if entered_guard else Strategy.LONG


def maze_observe_position(pos, n=8) -> np.ndarray:
    return soft_onehot_batch(np.asarray(pos, dtype=np.float64)[None, :], n)[0]


class GuardedMaze(EnvContract):
    name = "maze"
    n_actions = 4

    def __init__(self, config: MazeConfig = None):
        self.config = config or MazeConfig()
        lay = self.config.layout
        self.obs_dim = lay.size * lay.size
        self.horizon = self.config.horizon
        self._walls = lay.walls.astype(np.int8)

    @property
    def context_family(self):
        return Product([Bernoulli(self.config.guard_prob), ExponentialMean(self.config.guard_cost_mean)])

    def check_context(self, context):
        c = np.atleast_1d(np.asarray(context, dtype=np.float64))
        if c.shape != (2,) or c[0] not in (0.0, 1.0) or not c[1] >= 0:
            raise ValueError(f"maze context must be (guard in {{0, 1}}, cost >= 0), got {c}")
        return c

    def _draw_dynamics(self, rng):
        lay = self.config.layout
        start = rng.uniform(lay.start_lo, lay.start_hi)
        noise = rng.normal(0.0, self.config.noise_std, (self.horizon, 2))
        return start, noise

    def reset(self, context, rng):
        c = self.check_context(context)
        start, noise = self._draw_dynamics(rng)
        return MazeState(start, 0, 0.0, float(c[0] * c[1]), noise)

    def _blocked(self, x, y):
        n = self.config.layout.size
        if x < 0 or y < 0 or x >= n or y >= n:
            return True
        return bool(self._walls[int(math.floor(x)), int(math.floor(y))])

    def step(self, state: MazeState, action, rng=None):
        if state.done:
            raise EpisodeDone("step called on a finished maze episode")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid maze action {action}")
        cfg, lay = self.config, self.config.layout
        prop = state.pos + MOVES[action] + state.noise[state.t]
        pos = state.pos if self._blocked(prop[0], prop[1]) else prop
        r, paid = 0.0, state.paid
        if paid < cfg.step_cost_cap:
            r -= 1.0
            paid += 1.0
        cell = (int(math.floor(pos[0])), int(math.floor(pos[1])))
        entered = state.entered_guard
        if cell == tuple(lay.guard) and not entered:
            entered = True
            r -= state.guard_cost
        reached = cell == tuple(lay.target)
        if reached:
            r += cfg.target_reward
        t = state.t + 1
        done = reached or t == self.horizon
        new = MazeState(pos.copy(), t, paid, state.guard_cost, state.noise, entered, reached, done)
        return new, r, done

    def observe(self, state: MazeState):
        return maze_observe_position(state.pos, self.config.layout.size)

    def episode_info(self, state: MazeState):
        return {"strategy": maze_classify(state.reached, state.entered_guard).value}

    def rollout(self, params, contexts, rngs, temperature, want_score=True):
        C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        E, H = len(C), self.horizon
        action_u = np.empty((E, H))
        starts = np.empty((E, 2))
        noise = np.empty((E, H, 2))
        for e, rng in enumerate(rngs):
            action_u[e] = rng.random(H)
            starts[e], noise[e] = self._draw_dynamics(rng)
        lay, cfg = self.config.layout, self.config
        pos, actions, rewards, lengths, reached, entered, scores = maze_rollout(
            params.theta, params.spec.dims, self._walls, lay.guard, lay.target, starts, noise, action_u,
            C[:, 0] * C[:, 1], temperature, H, cfg.step_cost_cap, cfg.target_reward, want_score)
        n = lay.size
        states = [soft_onehot_batch(pos[e, : lengths[e]], n) for e in range(E)]
        strategy = np.where(~reached, Strategy.STAY.value,
                            np.where(entered, Strategy.SHORT.value, Strategy.LONG.value))
        info = {"strategy": strategy, "reached": reached, "entered_guard": entered}
        return RolloutBatch(states, actions, rewards, lengths, scores, info)
