import json
import os
import subprocess
import sys

import pytest

from cesor import _accel

SCRIPT = r"""
import json, hashlib
import numpy as np
from cesor import _accel
from cesor.envs import episode_rng, make_env
from cesor.policy import PolicySpec, init_params

out = {"backend": _accel.backend(), "compiled": _accel._COMPILE}
for name, kw, hidden, n in (("maze", {}, (), 60), ("servers", {"episode_seconds": 300}, (8,), 3)):
    env = make_env(name, **kw)
    p = init_params(PolicySpec(env.obs_dim, env.n_actions, hidden), np.random.default_rng(0))
    C = env.context_family.sample(n, np.random.default_rng(1))
    roll = env.rollout(p, C, [episode_rng(0, 0, 0, i) for i in range(n)], 1.0)
    out[name] = {"actions": roll.actions.tolist(), "returns": np.round(roll.returns, 9).tolist(),
                 "score": float(np.round(roll.scores.sum(), 6))}
print(json.dumps(out))
"""


def run_with(flag):
    env = dict(os.environ, CESOR_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def test_disabling_numba_gives_the_same_episodes():
    fast, slow = run_with("1"), run_with("0")
    assert slow["backend"] == "numpy" and slow["compiled"] is False
    if not fast["compiled"]:
        pytest.skip("numba unavailable")
    assert fast["backend"] == "numba"
    for name in ("maze", "servers"):
        assert fast[name] == slow[name], name


def test_set_backend_validation():
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")
    prev = _accel.set_backend("numpy")
    try:
        assert not _accel.use_numba()
    finally:
        _accel.set_backend(prev)
