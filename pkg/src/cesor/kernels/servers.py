"""Event-driven simulation of the server-allocation queue.

Requests arrive as a Poisson process whose rate is an exponential moving
average of user interest; every busy server finishes at rate 1.  Within each
simulated second the arrival rate is constant, so events are drawn with the
Gillespie method from a pre-drawn buffer of uniforms.  A kernel that runs out
of uniforms reports failure instead of drawing more, so callers can retry
with a longer buffer taken from the same generator (same prefix, same path).

Per-episode state is packed into three small arrays so the same interval
kernel serves both the batch rollout and the single-episode environment:

* ``fs``  float64: [rate, waiting_time_total, server_cost_total]
* ``ist`` int64:   see the ``I_*`` indices below
* ``srv`` int64 (3, MAX_SERVERS): busy flag, ready-at second, removal pending
"""
import math

import numpy as np

from .._accel import jit, use_numba
from . import nn

MIN_SERVERS = 3
MAX_SERVERS = 10
INITIAL_SERVERS = 4
BASE_INTEREST = 3.0
PEAK_INTEREST = 900.0
EMA_WINDOW = 300.0
UPLOAD_DELAY = 120
DECISION_INTERVAL = 60
SERVER_COST = 2.0
QUEUE_SCALE = 30.0
OBS_DIM = MAX_SERVERS - MIN_SERVERS + 2

F_RATE, F_TTS, F_COST = 0, 1, 2
I_TIME, I_SERVERS, I_QUEUE, I_POS, I_PEAK, I_ARRIVED, I_STARTED, I_DONE = range(8)
N_FSTATE, N_ISTATE = 3, 8
ROW_BUSY, ROW_READY, ROW_REMOVING = 0, 1, 2


def initial_state():
    fs = np.zeros(N_FSTATE)
    fs[F_RATE] = BASE_INTEREST
    ist = np.zeros(N_ISTATE, dtype=np.int64)
    ist[I_SERVERS] = INITIAL_SERVERS
    srv = np.zeros((3, MAX_SERVERS), dtype=np.int64)
    return fs, ist, srv


def buffer_size(seconds, n_peaks):
    """Generous first guess at the number of uniforms an episode consumes."""
    return int(16 * seconds + 4000 * n_peaks + 1024)


@jit
def _start_service(ist, srv, i):
    srv[ROW_BUSY, i] = 1
    ist[I_STARTED] += 1


@jit
def apply_action(ist, srv, action):
    """0 removes the last server, 1 keeps, 2 adds one (ready after the upload delay)."""
    n = ist[I_SERVERS]
    last = n - 1
    if action == 0:
        if srv[ROW_REMOVING, last] == 1 or n <= MIN_SERVERS:
            return
        if srv[ROW_BUSY, last] == 1:
            srv[ROW_REMOVING, last] = 1
        else:
            srv[ROW_BUSY, last] = 0
            srv[ROW_READY, last] = 0
            ist[I_SERVERS] = n - 1
    elif action == 2:
        if srv[ROW_REMOVING, last] == 1:
            # re-adding while the last server drains just cancels its removal
            srv[ROW_REMOVING, last] = 0
        elif n < MAX_SERVERS:
            srv[ROW_BUSY, n] = 0
            srv[ROW_READY, n] = ist[I_TIME] + UPLOAD_DELAY
            srv[ROW_REMOVING, n] = 0
            ist[I_SERVERS] = n + 1


@jit
def simulate_interval(fs, ist, srv, peaks, buf, seconds, server_log):
    """Advance ``seconds`` simulated seconds; False if ``buf`` ran out.

    ``server_log[t]`` receives the paid server count at the start of second t
    when ``t < len(server_log)``.
    """
    for _ in range(seconds):
        t = ist[I_TIME]
        r = BASE_INTEREST
        while ist[I_PEAK] < peaks.shape[0] and peaks[ist[I_PEAK]] <= t:
            if peaks[ist[I_PEAK]] == t:
                r = PEAK_INTEREST
            ist[I_PEAK] += 1
        lam = (EMA_WINDOW - 1.0) / EMA_WINDOW * fs[F_RATE] + r / EMA_WINDOW
        fs[F_RATE] = lam
        n = ist[I_SERVERS]
        for i in range(n):
            if srv[ROW_READY, i] == t and srv[ROW_BUSY, i] == 0 and ist[I_QUEUE] > 0:
                ist[I_QUEUE] -= 1
                _start_service(ist, srv, i)
        fs[F_COST] += SERVER_COST * n
        if t < server_log.shape[0]:
            server_log[t] = n
        tau = 0.0
        while True:
            n = ist[I_SERVERS]
            nb = 0
            for i in range(n):
                nb += srv[ROW_BUSY, i]
            rate = lam + nb
            pos = ist[I_POS]
            if pos + 2 > buf.shape[0]:
                return False
            u1 = buf[pos]
            u2 = buf[pos + 1]
            ist[I_POS] = pos + 2
            dt = -math.log(1.0 - u1) / rate
            if tau + dt >= 1.0:
                fs[F_TTS] += ist[I_QUEUE] * (1.0 - tau)
                break
            fs[F_TTS] += ist[I_QUEUE] * dt
            tau += dt
            x = u2 * rate
            if x < lam:
                ist[I_ARRIVED] += 1
                free = -1
                for i in range(n):
                    if srv[ROW_BUSY, i] == 0 and srv[ROW_READY, i] <= t and srv[ROW_REMOVING, i] == 0:
                        free = i
                        break
                if free >= 0:
                    _start_service(ist, srv, free)
                else:
                    ist[I_QUEUE] += 1
            else:
                k = min(int(x - lam), nb - 1)
                who = -1
                for i in range(n):
                    if srv[ROW_BUSY, i] == 1:
                        if k == 0:
                            who = i
                            break
                        k -= 1
                ist[I_DONE] += 1
                if srv[ROW_REMOVING, who] == 1:
                    srv[ROW_BUSY, who] = 0
                    srv[ROW_READY, who] = 0
                    srv[ROW_REMOVING, who] = 0
                    ist[I_SERVERS] = n - 1
                elif ist[I_QUEUE] > 0:
                    ist[I_QUEUE] -= 1
                    ist[I_STARTED] += 1
                else:
                    srv[ROW_BUSY, who] = 0
        ist[I_TIME] = t + 1
    return True


@jit
def observe_into(ist, out):
    for k in range(out.shape[0]):
        out[k] = 0.0
    out[ist[I_SERVERS] - MIN_SERVERS] = 1.0
    out[out.shape[0] - 1] = ist[I_QUEUE] / QUEUE_SCALE


@jit
def servers_rollout_loop(theta, dims, temperature, seconds, peaks_flat, peak_offsets, buffers,
                         action_u, want_score):
    E = action_u.shape[0]
    n_dec = seconds // DECISION_INTERVAL
    n_params = theta.shape[0]
    obs_all = np.zeros((E, n_dec, OBS_DIM))
    actions = np.zeros((E, n_dec), dtype=np.int64)
    rewards = np.zeros((E, n_dec))
    ok = np.ones(E, dtype=np.bool_)
    tts = np.zeros(E)
    cost = np.zeros(E)
    counters = np.zeros((E, 3), dtype=np.int64)
    scores = np.zeros((E, n_params if want_score else 0))
    h = np.zeros(max(dims[1], 1))
    y = np.zeros(dims[2])
    p = np.zeros(dims[2])
    no_log = np.zeros(0, dtype=np.int64)
    for e in range(E):
        fs = np.zeros(N_FSTATE)
        fs[F_RATE] = BASE_INTEREST
        ist = np.zeros(N_ISTATE, dtype=np.int64)
        ist[I_SERVERS] = INITIAL_SERVERS
        srv = np.zeros((3, MAX_SERVERS), dtype=np.int64)
        peaks = peaks_flat[peak_offsets[e]: peak_offsets[e + 1]]
        buf = buffers[e]
        for d in range(n_dec):
            obs = obs_all[e, d]
            observe_into(ist, obs)
            nn.mlp_logits(theta, dims, obs, h, y)
            nn.softmax_t(y, temperature, p)
            a = nn.pick_action(p, action_u[e, d])
            actions[e, d] = a
            if want_score:
                nn.score_accumulate(theta, dims, obs, h, p, a, temperature, scores[e])
            tts0 = fs[F_TTS]
            cost0 = fs[F_COST]
            apply_action(ist, srv, a)
            if not simulate_interval(fs, ist, srv, peaks, buf, DECISION_INTERVAL, no_log):
                ok[e] = False
                break
            rewards[e, d] = -(fs[F_TTS] - tts0) - (fs[F_COST] - cost0)
        tts[e] = fs[F_TTS]
        cost[e] = fs[F_COST]
        counters[e, 0] = ist[I_ARRIVED]
        counters[e, 1] = ist[I_STARTED]
        counters[e, 2] = ist[I_DONE]
    return obs_all, actions, rewards, ok, tts, cost, counters, scores


def servers_rollout(theta, dims, temperature, seconds, peaks, event_seeds, action_u,
                    want_score=True, chunk=64):
    """Roll out one episode per entry of ``peaks`` (sorted peak seconds).

    ``event_seeds[e]`` seeds the generator whose uniforms drive episode e's
    arrivals and service completions.  Episodes that exhaust their buffer are
    re-run with a doubled buffer from the same seed.
    """
    E = len(peaks)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    dims = np.ascontiguousarray(dims, dtype=np.int64)
    action_u = np.ascontiguousarray(action_u, dtype=np.float64)
    kernel = servers_rollout_loop if use_numba() else servers_rollout_loop.py_func
    parts = []
    for lo in range(0, E, chunk):
        idx = np.arange(lo, min(lo + chunk, E))
        sizes = np.array([buffer_size(seconds, len(peaks[e])) for e in idx])
        result = None
        todo = np.arange(len(idx))
        while todo.size:
            sub = idx[todo]
            width = int(sizes[todo].max())
            bufs = np.empty((len(sub), width))
            for j, e in enumerate(sub):
                bufs[j] = np.random.default_rng(int(event_seeds[e])).random(width)
            flat, offsets = _pack_peaks([peaks[e] for e in sub])
            out = kernel(theta, dims, float(temperature), int(seconds), flat, offsets, bufs,
                         action_u[sub], bool(want_score))
            if result is None:
                result = [np.array(a) for a in out]
            else:
                for arr, new in zip(result, out):
                    arr[todo] = new
            failed = ~out[3]
            sizes[todo[failed]] *= 2
            todo = todo[failed]
        parts.append(result)
    return tuple(np.concatenate([part[k] for part in parts]) for k in range(8))


def _pack_peaks(peak_lists):
    lens = [len(p) for p in peak_lists]
    offsets = np.zeros(len(peak_lists) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(lens)
    flat = np.zeros(max(offsets[-1], 1), dtype=np.int64)
    for p, o in zip(peak_lists, offsets[:-1]):
        flat[o: o + len(p)] = p
    return flat, offsets
