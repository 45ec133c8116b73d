"""One-step environment whose return is the context itself, for sampler tests."""
from dataclasses import dataclass

import numpy as np

from ..cem import BetaMean
from ..kernels import nn
from .base import EnvContract, EpisodeDone, RolloutBatch


def beta_toy_score(context) -> float:
    return float(np.atleast_1d(context)[0])


@dataclass
class ToyState:
    context: float
    done: bool = False


class BetaToy(EnvContract):
    """Context C ~ Beta(2 phi, 2 - 2 phi); any action; reward C; one step."""

    name = "beta_toy"
    obs_dim = 1
    n_actions = 2
    horizon = 1

    def __init__(self, phi0=0.5):
        self.phi0 = phi0

    @property
    def context_family(self):
        return BetaMean(self.phi0)

    def check_context(self, context):
        c = np.atleast_1d(np.asarray(context, dtype=np.float64))
        if c.shape != (1,) or not 0.0 < c[0] < 1.0:
            raise ValueError(f"toy context must lie in (0, 1), got {c}")
        return c

    def reset(self, context, rng):
        return ToyState(float(self.check_context(context)[0]))

    def step(self, state, action, rng=None):
        if state.done:
            raise EpisodeDone("toy episode already finished")
        return ToyState(state.context, True), state.context, True

    def observe(self, state):
        return np.ones(1)

    def rollout(self, params, contexts, rngs, temperature, want_score=True):
        C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        E = len(C)
        u = np.array([rng.random(1)[0] for rng in rngs])
        obs = np.ones((E, 1))
        h, y = nn.batch_logits(params.theta, params.spec.dims, obs)
        p = nn.batch_softmax(y, temperature)
        a = nn.batch_pick(p, u)
        scores = nn.batch_score(params.theta, params.spec.dims, obs, h, p, a, temperature) if want_score \
            else np.zeros((E, 0))
        return RolloutBatch([obs[e: e + 1] for e in range(E)], a[:, None], C[:, :1].copy(),
                            np.ones(E, dtype=np.int64), scores)
