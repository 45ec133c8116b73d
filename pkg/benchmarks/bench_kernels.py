"""Time the rollout kernels with numba against the uncompiled numpy path.

    python3 benchmarks/bench_kernels.py --maze-episodes 400 --servers-episodes 8

Each backend runs in its own interpreter (``CESOR_NUMBA`` is read at
import), on identical random streams; the report also confirms that both
produced the same episodes.
"""
import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np


def _digest(roll):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(roll.actions).tobytes())
    h.update(np.round(roll.returns, 6).tobytes())
    return h.hexdigest()[:16]


def _worker(args):
    from cesor import _accel
    from cesor.envs import episode_rng, make_env
    from cesor.policy import PolicySpec, init_params

    cases = {
        "maze": (make_env("maze"), (), args.maze_episodes),
        "servers": (make_env("servers", episode_seconds=args.servers_seconds), (16,), args.servers_episodes),
    }
    out = {"backend": _accel.backend()}
    for name, (env, hidden, n) in cases.items():
        params = init_params(PolicySpec(env.obs_dim, env.n_actions, hidden), np.random.default_rng(0))
        contexts = env.context_family.sample(n, np.random.default_rng(0))
        env.rollout(params, contexts[:2], [episode_rng(0, 0, 0, i) for i in range(2)], 1.0)  # warm-up
        best = np.inf
        for _ in range(args.repeats):
            rngs = [episode_rng(0, 0, 0, i) for i in range(n)]
            t0 = time.perf_counter()
            roll = env.rollout(params, contexts, rngs, 1.0)
            best = min(best, time.perf_counter() - t0)
        out[name] = {"seconds": best, "digest": _digest(roll), "episodes": n}
    print(json.dumps(out))


def _run(backend_flag, argv):
    env = dict(os.environ, CESOR_NUMBA=backend_flag)
    res = subprocess.run([sys.executable, __file__, "--worker", *argv], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--maze-episodes", type=int, default=400)
    ap.add_argument("--servers-episodes", type=int, default=8)
    ap.add_argument("--servers-seconds", type=int, default=900)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        return _worker(args)
    passthrough = [a for a in (argv if argv is not None else sys.argv[1:]) if a != "--worker"]
    fast, slow = _run("1", passthrough), _run("0", passthrough)
    print(f"{'case':<10} {'episodes':>8} {'numba s':>10} {'numpy s':>10} {'speedup':>8}  same episodes")
    for name in ("maze", "servers"):
        a, b = fast[name], slow[name]
        print(f"{name:<10} {a['episodes']:>8} {a['seconds']:>10.4f} {b['seconds']:>10.4f} "
              f"{b['seconds'] / a['seconds']:>8.1f}  {a['digest'] == b['digest']}")


if __name__ == "__main__":
    main()
