"""Loop-form policy forward/backward used inside the rollout kernels.

``dims`` is ``[input_dim, hidden, n_actions]`` with ``hidden == 0`` for the
linear model; ``theta`` uses the flat layout of :mod:`cesor.policy`.
"""
import math

import numpy as np

from .._accel import jit


@jit
def mlp_logits(theta, dims, obs, h, y):
    """Write logits into ``y`` (and hidden activations into ``h``)."""
    n_in, n_h, n_out = dims[0], dims[1], dims[2]
    if n_h == 0:
        boff = n_out * n_in
        for a in range(n_out):
            acc = theta[boff + a]
            row = a * n_in
            for j in range(n_in):
                acc += theta[row + j] * obs[j]
            y[a] = acc
        return
    b1 = n_h * n_in
    w2 = b1 + n_h
    b2 = w2 + n_out * n_h
    for k in range(n_h):
        acc = theta[b1 + k]
        row = k * n_in
        for j in range(n_in):
            acc += theta[row + j] * obs[j]
        h[k] = math.tanh(acc)
    for a in range(n_out):
        acc = theta[b2 + a]
        row = w2 + a * n_h
        for k in range(n_h):
            acc += theta[row + k] * h[k]
        y[a] = acc


@jit
def softmax_t(y, temperature, p):
    """p = softmax(T*y); T == 0 puts all mass on the first argmax."""
    n = y.shape[0]
    best = 0
    for a in range(1, n):
        if y[a] > y[best]:
            best = a
    if temperature == 0.0:
        for a in range(n):
            p[a] = 0.0
        p[best] = 1.0
        return
    m = temperature * y[best]
    s = 0.0
    for a in range(n):
        p[a] = math.exp(temperature * y[a] - m)
        s += p[a]
    for a in range(n):
        p[a] /= s


@jit
def pick_action(p, u):
    """Inverse-CDF selection; identical rule to ``policy.sample_action_u``."""
    n = p.shape[0]
    c = 0.0
    for a in range(n - 1):
        c += p[a]
        if u < c:
            return a
    return n - 1


@jit
def score_accumulate(theta, dims, obs, h, p, action, temperature, score):
    """score += grad log pi(action | obs), given cached ``h`` and ``p``."""
    n_in, n_h, n_out = dims[0], dims[1], dims[2]
    if n_h == 0:
        boff = n_out * n_in
        for a in range(n_out):
            d = -temperature * p[a]
            if a == action:
                d += temperature
            row = a * n_in
            for j in range(n_in):
                score[row + j] += d * obs[j]
            score[boff + a] += d
        return
    b1 = n_h * n_in
    w2 = b1 + n_h
    b2 = w2 + n_out * n_h
    for k in range(n_h):
        dh = 0.0
        for a in range(n_out):
            d = -temperature * p[a]
            if a == action:
                d += temperature
            dh += theta[w2 + a * n_h + k] * d
        dh *= 1.0 - h[k] * h[k]
        row = k * n_in
        for j in range(n_in):
            score[row + j] += dh * obs[j]
        score[b1 + k] += dh
    for a in range(n_out):
        d = -temperature * p[a]
        if a == action:
            d += temperature
        row = w2 + a * n_h
        for k in range(n_h):
            score[row + k] += d * h[k]
        score[b2 + a] += d


# -- vectorized numpy counterparts (batch of observations) ------------------

def batch_logits(theta, dims, obs):
    """obs: (E, n_in) -> (hidden (E, n_h) or None, logits (E, n_out))."""
    n_in, n_h, n_out = int(dims[0]), int(dims[1]), int(dims[2])
    if n_h == 0:
        W = theta[: n_out * n_in].reshape(n_out, n_in)
        b = theta[n_out * n_in: n_out * n_in + n_out]
        return None, obs @ W.T + b
    W1 = theta[: n_h * n_in].reshape(n_h, n_in)
    b1 = theta[n_h * n_in: n_h * n_in + n_h]
    off = n_h * n_in + n_h
    W2 = theta[off: off + n_out * n_h].reshape(n_out, n_h)
    b2 = theta[off + n_out * n_h: off + n_out * n_h + n_out]
    h = np.tanh(obs @ W1.T + b1)
    return h, h @ W2.T + b2


def batch_softmax(y, temperature):
    p = np.zeros_like(y)
    if temperature == 0.0:
        p[np.arange(len(y)), np.argmax(y, axis=1)] = 1.0
        return p
    z = temperature * y - temperature * y.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def batch_pick(p, u):
    c = np.cumsum(p[:, :-1], axis=1)
    return np.sum(u[:, None] >= c, axis=1)


def batch_score(theta, dims, obs, h, p, actions, temperature):
    """Per-row grad log pi, shape (E, n_params)."""
    n_in, n_h, n_out = int(dims[0]), int(dims[1]), int(dims[2])
    E = len(obs)
    delta = -temperature * p
    delta[np.arange(E), actions] += temperature
    if n_h == 0:
        gW = (delta[:, :, None] * obs[:, None, :]).reshape(E, -1)
        return np.concatenate([gW, delta], axis=1)
    off = n_h * n_in + n_h
    W2 = theta[off: off + n_out * n_h].reshape(n_out, n_h)
    dh = (delta @ W2) * (1.0 - h * h)
    gW1 = (dh[:, :, None] * obs[:, None, :]).reshape(E, -1)
    gW2 = (delta[:, :, None] * h[:, None, :]).reshape(E, -1)
    return np.concatenate([gW1, dh, gW2, delta], axis=1)
