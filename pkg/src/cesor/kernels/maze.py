"""Batched Guarded Maze rollouts: a numba loop and a vectorized numpy path.

Cells are unit squares; cell (x, y) covers [x, x+1) x [y, y+1) and its grid
point sits at the centre (x + 0.5, y + 0.5).  ``walls`` is indexed
``walls[x, y]`` and is non-zero for blocked cells.
"""
import math

import numpy as np

from .._accel import jit, use_numba
from . import nn

# left, right, up, down
MOVES = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


@jit
def soft_onehot(x, y, n, out):
    """Bilinear weights over the 4 grid points surrounding (x, y)."""
    for k in range(out.shape[0]):
        out[k] = 0.0
    gx = min(max(x - 0.5, 0.0), n - 1.0)
    gy = min(max(y - 0.5, 0.0), n - 1.0)
    i0 = min(int(math.floor(gx)), n - 2)
    j0 = min(int(math.floor(gy)), n - 2)
    fx = gx - i0
    fy = gy - j0
    out[j0 * n + i0] += (1.0 - fx) * (1.0 - fy)
    out[j0 * n + i0 + 1] += fx * (1.0 - fy)
    out[(j0 + 1) * n + i0] += (1.0 - fx) * fy
    out[(j0 + 1) * n + i0 + 1] += fx * fy


@jit
def _blocked(walls, n, x, y):
    if x < 0.0 or y < 0.0 or x >= n or y >= n:
        return True
    return walls[int(math.floor(x)), int(math.floor(y))] != 0


@jit
def maze_rollout_loop(theta, dims, walls, guard, target, start, noise, action_u,
                      guard_cost, temperature, horizon, cost_cap, target_reward, want_score):
    n = walls.shape[0]
    E = start.shape[0]
    n_params = theta.shape[0]
    positions = np.zeros((E, horizon, 2))
    actions = np.zeros((E, horizon), dtype=np.int64)
    rewards = np.zeros((E, horizon))
    lengths = np.zeros(E, dtype=np.int64)
    reached = np.zeros(E, dtype=np.bool_)
    entered = np.zeros(E, dtype=np.bool_)
    scores = np.zeros((E, n_params if want_score else 0))
    obs = np.zeros(n * n)
    h = np.zeros(max(dims[1], 1))
    y = np.zeros(dims[2])
    p = np.zeros(dims[2])
    mx = np.array([-1.0, 1.0, 0.0, 0.0])
    my = np.array([0.0, 0.0, 1.0, -1.0])
    for e in range(E):
        x0 = start[e, 0]
        y0 = start[e, 1]
        paid = 0.0
        for t in range(horizon):
            positions[e, t, 0] = x0
            positions[e, t, 1] = y0
            soft_onehot(x0, y0, n, obs)
            nn.mlp_logits(theta, dims, obs, h, y)
            nn.softmax_t(y, temperature, p)
            a = nn.pick_action(p, action_u[e, t])
            actions[e, t] = a
            if want_score:
                nn.score_accumulate(theta, dims, obs, h, p, a, temperature, scores[e])
            x1 = x0 + mx[a] + noise[e, t, 0]
            y1 = y0 + my[a] + noise[e, t, 1]
            if not _blocked(walls, n, x1, y1):
                x0 = x1
                y0 = y1
            r = 0.0
            if paid < cost_cap:
                r -= 1.0
                paid += 1.0
            cx = int(math.floor(x0))
            cy = int(math.floor(y0))
            if cx == guard[0] and cy == guard[1] and not entered[e]:
                entered[e] = True
                r -= guard_cost[e]
            done = False
            if cx == target[0] and cy == target[1]:
                r += target_reward
                reached[e] = True
                done = True
            rewards[e, t] = r
            if done or t + 1 == horizon:
                lengths[e] = t + 1
                break
    return positions, actions, rewards, lengths, reached, entered, scores


def soft_onehot_batch(xy, n):
    """Vectorized soft one-hot, shape (E, n*n)."""
    E = len(xy)
    out = np.zeros((E, n * n))
    gx = np.clip(xy[:, 0] - 0.5, 0.0, n - 1.0)
    gy = np.clip(xy[:, 1] - 0.5, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(gx).astype(np.int64), n - 2)
    j0 = np.minimum(np.floor(gy).astype(np.int64), n - 2)
    fx = gx - i0
    fy = gy - j0
    rows = np.arange(E)
    np.add.at(out, (rows, j0 * n + i0), (1.0 - fx) * (1.0 - fy))
    np.add.at(out, (rows, j0 * n + i0 + 1), fx * (1.0 - fy))
    np.add.at(out, (rows, (j0 + 1) * n + i0), (1.0 - fx) * fy)
    np.add.at(out, (rows, (j0 + 1) * n + i0 + 1), fx * fy)
    return out


def maze_rollout_numpy(theta, dims, walls, guard, target, start, noise, action_u,
                       guard_cost, temperature, horizon, cost_cap, target_reward, want_score):
    n = walls.shape[0]
    E = start.shape[0]
    positions = np.zeros((E, horizon, 2))
    actions = np.zeros((E, horizon), dtype=np.int64)
    rewards = np.zeros((E, horizon))
    lengths = np.zeros(E, dtype=np.int64)
    reached = np.zeros(E, dtype=bool)
    entered = np.zeros(E, dtype=bool)
    scores = np.zeros((E, theta.shape[0] if want_score else 0))
    pos = start.astype(np.float64).copy()
    paid = np.zeros(E)
    active = np.ones(E, dtype=bool)
    for t in range(horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = pos[idx]
        positions[idx, t] = cur
        obs = soft_onehot_batch(cur, n)
        h, y = nn.batch_logits(theta, dims, obs)
        p = nn.batch_softmax(y, temperature)
        a = nn.batch_pick(p, action_u[idx, t])
        actions[idx, t] = a
        if want_score:
            scores[idx] += nn.batch_score(theta, dims, obs, h, p, a, temperature)
        prop = cur + MOVES[a] + noise[idx, t]
        outside = (prop[:, 0] < 0) | (prop[:, 1] < 0) | (prop[:, 0] >= n) | (prop[:, 1] >= n)
        cx = np.clip(np.floor(prop[:, 0]).astype(np.int64), 0, n - 1)
        cy = np.clip(np.floor(prop[:, 1]).astype(np.int64), 0, n - 1)
        blocked = outside | (walls[cx, cy] != 0)
        cur = np.where(blocked[:, None], cur, prop)
        pos[idx] = cur
        r = np.where(paid[idx] < cost_cap, -1.0, 0.0)
        paid[idx] -= r
        cx = np.floor(cur[:, 0]).astype(np.int64)
        cy = np.floor(cur[:, 1]).astype(np.int64)
        at_guard = (cx == guard[0]) & (cy == guard[1]) & ~entered[idx]
        entered[idx[at_guard]] = True
        r = r - np.where(at_guard, guard_cost[idx], 0.0)
        hit = (cx == target[0]) & (cy == target[1])
        r = r + np.where(hit, target_reward, 0.0)
        reached[idx[hit]] = True
        rewards[idx, t] = r
        finished = hit | (t + 1 == horizon)
        lengths[idx[finished]] = t + 1
        active[idx[finished]] = False
    return positions, actions, rewards, lengths, reached, entered, scores


def maze_rollout(theta, dims, walls, guard, target, start, noise, action_u, guard_cost,
                 temperature, horizon, cost_cap=32.0, target_reward=16.0, want_score=True):
    """Roll out ``len(start)`` episodes on the active backend.

    Returns ``(positions, actions, rewards, lengths, reached, entered, scores)``;
    arrays are padded to ``horizon`` and valid up to ``lengths[e]``.
    """
    args = (
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(dims, dtype=np.int64),
        np.ascontiguousarray(walls, dtype=np.int8),
        np.ascontiguousarray(guard, dtype=np.int64),
        np.ascontiguousarray(target, dtype=np.int64),
        np.ascontiguousarray(start, dtype=np.float64),
        np.ascontiguousarray(noise, dtype=np.float64),
        np.ascontiguousarray(action_u, dtype=np.float64),
        np.ascontiguousarray(guard_cost, dtype=np.float64),
        float(temperature), int(horizon), float(cost_cap), float(target_reward), bool(want_score),
    )
    if use_numba():
        return maze_rollout_loop(*args)
    return maze_rollout_numpy(*args)
