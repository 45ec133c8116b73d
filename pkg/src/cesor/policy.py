"""Softmax policies over a linear map or one tanh hidden layer.

Parameters live in a single flat float64 vector so that gradients, Adam
moments and the rollout kernels can all share one layout:

* linear:  W (n_actions x input_dim), b (n_actions)
* hidden:  W1 (hidden x input_dim), b1 (hidden), W2 (n_actions x hidden), b2 (n_actions)

Gradients are derived by hand; no autodiff is involved.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Trajectory


@dataclass(frozen=True)
class PolicySpec:
    input_dim: int
    n_actions: int
    hidden_dims: tuple = ()
    train_temperature: float = 1.0
    eval_temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.n_actions < 2:
            raise ValueError("a policy needs at least two actions")
        if len(self.hidden_dims) > 1:
            raise ValueError("at most one hidden layer is supported")
        if any(h < 0 for h in self.hidden_dims):
            raise ValueError("hidden sizes must be non-negative")
        if self.train_temperature < 0 or self.eval_temperature < 0:
            raise ValueError("temperatures must be non-negative")

    @property
    def hidden(self) -> int:
        """Width of the hidden layer, 0 for the linear model."""
        return self.hidden_dims[0] if self.hidden_dims else 0

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.input_dim, self.hidden, self.n_actions], dtype=np.int64)

    @property
    def layer_shapes(self):
        if self.hidden == 0:
            return [(self.n_actions, self.input_dim)]
        return [(self.hidden, self.input_dim), (self.n_actions, self.hidden)]

    @property
    def n_params(self) -> int:
        return sum(r * c + r for r, c in self.layer_shapes)

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "n_actions": self.n_actions,
            "hidden_dims": list(self.hidden_dims),
            "train_temperature": self.train_temperature,
            "eval_temperature": self.eval_temperature,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_dim=int(d["input_dim"]),
            n_actions=int(d["n_actions"]),
            hidden_dims=tuple(d.get("hidden_dims", ())),
            train_temperature=float(d.get("train_temperature", 1.0)),
            eval_temperature=float(d.get("eval_temperature", 0.0)),
        )


@dataclass
class PolicyParams:
    spec: PolicySpec
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got shape {self.theta.shape}"
            )
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("policy parameters must be finite")

    def layers(self):
        """List of (W, b) views into ``theta``."""
        out, off = [], 0
        for rows, cols in self.spec.layer_shapes:
            W = self.theta[off: off + rows * cols].reshape(rows, cols)
            off += rows * cols
            b = self.theta[off: off + rows]
            off += rows
            out.append((W, b))
        return out

    def copy(self):
        return PolicyParams(self.spec, self.theta.copy())

    # -- serialization -------------------------------------------------
    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers()],
        }

    @classmethod
    def from_dict(cls, d):
        spec = PolicySpec.from_dict(d["spec"])
        if len(d["layers"]) != len(spec.layer_shapes):
            raise ValueError("layer count does not match the policy spec")
        chunks = []
        for layer, (rows, cols) in zip(d["layers"], spec.layer_shapes):
            W = np.asarray(layer["W"], dtype=np.float64)
            b = np.asarray(layer["b"], dtype=np.float64)
            if W.shape != (rows, cols) or b.shape != (rows,):
                raise ValueError(f"layer shape mismatch: W{W.shape} b{b.shape}, expected ({rows}, {cols})")
            chunks += [W.ravel(), b]
        return cls(spec, np.concatenate(chunks))


def init_params(spec: PolicySpec, rng: np.random.Generator) -> PolicyParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    chunks = []
    for rows, cols in spec.layer_shapes:
        bound = 1.0 / math.sqrt(cols)
        chunks.append(rng.uniform(-bound, bound, size=rows * cols))
        chunks.append(np.zeros(rows))
    return PolicyParams(spec, np.concatenate(chunks))


def zero_params(spec: PolicySpec) -> PolicyParams:
    return PolicyParams(spec, np.zeros(spec.n_params))


def save_params(params: PolicyParams, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(params.to_dict(), fh)


def load_params(path) -> PolicyParams:
    with open(path, encoding="utf-8") as fh:
        return PolicyParams.from_dict(json.load(fh))


def _check_obs(params, obs):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (params.spec.input_dim,):
        raise ValueError(f"observation has shape {obs.shape}, expected ({params.spec.input_dim},)")
    return obs


def logits(params: PolicyParams, obs) -> np.ndarray:
    obs = _check_obs(params, obs)
    layers = params.layers()
    if len(layers) == 1:
        W, b = layers[0]
        return W @ obs + b
    (W1, b1), (W2, b2) = layers
    return W2 @ np.tanh(W1 @ obs + b1) + b2


def softmax_with_temperature(y, temperature):
    """exp(T*y) normalized; T == 0 gives a one-hot at the first argmax."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(np.isnan(y)):
        raise ValueError("NaN logits")
    if temperature == 0:
        p = np.zeros_like(y)
        p[int(np.argmax(y))] = 1.0
        return p
    z = temperature * y
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def action_probabilities(params: PolicyParams, obs, temperature: float) -> np.ndarray:
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    return softmax_with_temperature(logits(params, obs), temperature)


def sample_action(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw using one uniform from ``rng``."""
    return sample_action_u(probs, rng.random())


def sample_action_u(probs, u: float) -> int:
    """Inverse-CDF draw for a given uniform ``u`` in [0, 1).

    Matches the selection rule used inside the rollout kernels.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be a probability vector")
    c = 0.0
    last = len(probs) - 1
    for a in range(last):
        c += probs[a]
        if u < c:
            return a
    return last


def log_prob_gradient(params: PolicyParams, obs, action: int, temperature=None) -> np.ndarray:
    """Exact gradient of log pi(action | obs) w.r.t. the flat parameters.

    Taken at ``spec.train_temperature`` unless given.  For logits y and
    temperature T the output-layer error is T * (onehot(action) - pi).
    """
    spec = params.spec
    if not 0 <= action < spec.n_actions:
        raise ValueError(f"action {action} out of range for {spec.n_actions} actions")
    T = spec.train_temperature if temperature is None else temperature
    obs = _check_obs(params, obs)
    layers = params.layers()
    grads = []
    if len(layers) == 1:
        W, b = layers[0]
        pi = softmax_with_temperature(W @ obs + b, T) if T > 0 else np.zeros(spec.n_actions)
        delta = -T * pi
        delta[action] += T
        grads += [np.outer(delta, obs).ravel(), delta]
    else:
        (W1, b1), (W2, b2) = layers
        h = np.tanh(W1 @ obs + b1)
        pi = softmax_with_temperature(W2 @ h + b2, T) if T > 0 else np.zeros(spec.n_actions)
        delta = -T * pi
        delta[action] += T
        dh = (W2.T @ delta) * (1.0 - h * h)
        grads += [np.outer(dh, obs).ravel(), dh, np.outer(delta, h).ravel(), delta]
    return np.concatenate(grads)


def trajectory_score(params: PolicyParams, trajectory: Trajectory, temperature=None) -> np.ndarray:
    """Sum over steps of the log-probability gradients."""
    g = np.zeros(params.spec.n_params)
    for obs, a in zip(trajectory.states, trajectory.actions):
        g += log_prob_gradient(params, obs, int(a), temperature)
    return g


def log_prob(params: PolicyParams, obs, action: int, temperature=None) -> float:
    """log pi(action | obs); used by finite-difference checks."""
    T = params.spec.train_temperature if temperature is None else temperature
    z = T * logits(params, obs)
    m = z.max()
    return float(z[action] - m - np.log(np.sum(np.exp(z - m))))


def finite_difference_log_prob_gradient(params: PolicyParams, obs, action: int, eps: float = 1e-5,
                                        temperature=None) -> np.ndarray:
    """Central differences of log pi; a test oracle, never used for training."""
    theta = params.theta
    g = np.empty_like(theta)
    probe = params.copy()
    for i in range(theta.size):
        probe.theta[i] = theta[i] + eps
        up = log_prob(probe, obs, action, temperature)
        probe.theta[i] = theta[i] - eps
        down = log_prob(probe, obs, action, temperature)
        probe.theta[i] = theta[i]
        g[i] = (up - down) / (2.0 * eps)
    return g

