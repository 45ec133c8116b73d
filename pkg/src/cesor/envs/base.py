"""Shared environment contract and the per-episode random streams."""
from dataclasses import dataclass, field

import numpy as np

from ..policy import PolicyParams, action_probabilities, sample_action_u


class EpisodeDone(RuntimeError):
    """Raised when stepping an episode that has already terminated."""


@dataclass
class RolloutBatch:
    """Padded per-episode arrays from a batched rollout.

    ``states[e]`` holds the observation vectors of episode e, trimmed to its
    length; ``info`` carries env-specific per-episode diagnostics.
    """

    states: list
    actions: np.ndarray
    rewards: np.ndarray
    lengths: np.ndarray
    scores: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    def __len__(self):
        return len(self.lengths)


class EnvContract:
    """A context-MDP: ``reset(context, rng)``, ``step``, ``observe``.

    Subclasses also provide ``rollout`` to run many episodes at once with the
    compiled kernels.  Each episode consumes its generator in a fixed order:
    ``horizon`` action uniforms first, then whatever ``reset`` draws.  That
    makes :func:`run_episode` and ``rollout`` produce the same episodes.
    """

    name = "env"
    obs_dim = 0
    n_actions = 0
    horizon = 0

    @property
    def context_family(self):
        raise NotImplementedError

    def check_context(self, context):
        return np.atleast_1d(np.asarray(context, dtype=np.float64))

    def reset(self, context, rng):
        raise NotImplementedError

    def step(self, state, action, rng):
        raise NotImplementedError

    def observe(self, state) -> np.ndarray:
        raise NotImplementedError

    def rollout(self, params: PolicyParams, contexts, rngs, temperature, want_score=True) -> RolloutBatch:
        raise NotImplementedError

    def episode_info(self, state) -> dict:
        return {}


def episode_rng(master_seed, stream, iteration, index):
    """Independent generator for one episode, keyed by its position in the run."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(int(stream), int(iteration), int(index)))
    return np.random.default_rng(ss)


def run_episode(env: EnvContract, params: PolicyParams, context, rng, temperature, actions=None):
    """Single-episode reference rollout through the step API.

    With ``actions`` given the policy is bypassed (scripted replay); the
    action uniforms are still drawn so the dynamics stream is unchanged.
    Returns ``(observations, actions, rewards, final_state)``.
    """
    u = rng.random(env.horizon)
    state = env.reset(context, rng)
    obs, acts, rews = [], [], []
    done = False
    t = 0
    while not done:
        o = env.observe(state)
        if actions is None:
            a = sample_action_u(action_probabilities(params, o, temperature), u[t])
        else:
            if t >= len(actions):
                raise ValueError(f"scripted action list ended after {len(actions)} steps")
            a = int(actions[t])
        state, r, done = env.step(state, a, rng)
        obs.append(o)
        acts.append(a)
        rews.append(r)
        t += 1
    return np.array(obs), np.array(acts, dtype=np.int64), np.array(rews), state
