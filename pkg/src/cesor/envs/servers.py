"""Server allocation: keep enough servers for bursty load without overpaying.

The context is the number of peak-load events in the episode; their seconds
are drawn uniformly (without replacement) at reset.
"""
from dataclasses import dataclass

import numpy as np

from ..cem import Binomial
from ..kernels import servers as K
from .base import EnvContract, EpisodeDone, RolloutBatch

PEAK_PROB = 1.0 / (3 * 24 * 3600)


@dataclass
class ServersConfig:
    episode_seconds: int = 3600
    peak_prob: float = PEAK_PROB

    def __post_init__(self):
        if self.episode_seconds < K.DECISION_INTERVAL or self.episode_seconds % K.DECISION_INTERVAL:
            raise ValueError("episode length must be a positive multiple of the decision interval")


@dataclass
class ServersState:
    fs: np.ndarray
    ist: np.ndarray
    srv: np.ndarray
    peaks: np.ndarray
    event_seed: int
    buffer: np.ndarray
    server_log: np.ndarray
    done: bool = False

    def copy(self):
        return ServersState(self.fs.copy(), self.ist.copy(), self.srv.copy(), self.peaks, self.event_seed,
                            self.buffer, self.server_log.copy(), self.done)

    @property
    def time(self):
        return int(self.ist[K.I_TIME])

    @property
    def n_servers(self):
        return int(self.ist[K.I_SERVERS])

    @property
    def queue(self):
        return int(self.ist[K.I_QUEUE])

    @property
    def waiting_time(self):
        return float(self.fs[K.F_TTS])

    @property
    def server_cost(self):
        return float(self.fs[K.F_COST])

    @property
    def counters(self):
        """(arrived, started service, finished service)."""
        return tuple(int(self.ist[i]) for i in (K.I_ARRIVED, K.I_STARTED, K.I_DONE))


def servers_observe(n_servers, queue) -> np.ndarray:
    out = np.zeros(K.OBS_DIM)
    out[n_servers - K.MIN_SERVERS] = 1.0
    out[-1] = queue / K.QUEUE_SCALE
    return out


class ServersAllocation(EnvContract):
    name = "servers"
    obs_dim = K.OBS_DIM
    n_actions = 3

    def __init__(self, config: ServersConfig = None):
        self.config = config or ServersConfig()
        self.seconds = self.config.episode_seconds
        self.horizon = self.seconds // K.DECISION_INTERVAL

    @property
    def context_family(self):
        return Binomial(self.seconds, self.config.peak_prob)

    def check_context(self, context):
        c = np.atleast_1d(np.asarray(context, dtype=np.float64))
        if c.shape != (1,) or c[0] != np.round(c[0]) or not 0 <= c[0] <= self.seconds:
            raise ValueError(f"servers context must be a peak count in 0..{self.seconds}, got {c}")
        return c

    def _draw_dynamics(self, k, rng):
        peaks = np.sort(rng.choice(self.seconds, size=k, replace=False)).astype(np.int64)
        event_seed = int(rng.integers(0, 2**63 - 1))
        return peaks, event_seed

    def reset(self, context, rng):
        k = int(self.check_context(context)[0])
        peaks, seed = self._draw_dynamics(k, rng)
        fs, ist, srv = K.initial_state()
        buf = np.random.default_rng(seed).random(K.buffer_size(self.seconds, k))
        return ServersState(fs, ist, srv, peaks, seed, buf, np.zeros(self.seconds, dtype=np.int64))

    def step(self, state: ServersState, action, rng=None):
        if state.done:
            raise EpisodeDone("step called on a finished servers episode")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid servers action {action}")
        while True:
            new = state.copy()
            K.apply_action(new.ist, new.srv, int(action))
            if K.simulate_interval(new.fs, new.ist, new.srv, new.peaks, new.buffer,
                                   K.DECISION_INTERVAL, new.server_log):
                break
            # out of uniforms: the longer buffer shares its prefix, so the path is unchanged
            state.buffer = np.random.default_rng(state.event_seed).random(2 * len(state.buffer))
        reward = -(new.waiting_time - state.waiting_time) - (new.server_cost - state.server_cost)
        new.done = new.time >= self.seconds
        return new, reward, new.done

    def observe(self, state: ServersState):
        return servers_observe(state.n_servers, state.queue)

    def episode_info(self, state: ServersState):
        return {"waiting_time": state.waiting_time, "server_cost": state.server_cost,
                "n_peaks": len(state.peaks)}

    def rollout(self, params, contexts, rngs, temperature, want_score=True):
        C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        E, H = len(C), self.horizon
        action_u = np.empty((E, H))
        peaks, seeds = [], np.empty(E, dtype=np.uint64)
        for e, rng in enumerate(rngs):
            action_u[e] = rng.random(H)
            p, s = self._draw_dynamics(int(C[e, 0]), rng)
            peaks.append(p)
            seeds[e] = s
        obs, actions, rewards, ok, tts, cost, counters, scores = K.servers_rollout(
            params.theta, params.spec.dims, temperature, self.seconds, peaks, seeds, action_u, want_score)
        states = [obs[e] for e in range(E)]
        n_servers = np.argmax(obs[:, :, : K.OBS_DIM - 1], axis=2) + K.MIN_SERVERS
        info = {"waiting_time": tts, "server_cost": cost, "n_peaks": C[:, 0].astype(np.int64),
                "n_servers": n_servers, "counters": counters}
        return RolloutBatch(states, actions, rewards, np.full(E, H, dtype=np.int64), scores, info)
