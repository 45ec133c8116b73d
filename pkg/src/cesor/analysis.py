"""Numerical checks of the CVaR-PG failure modes and of tail-sampling variance.

Each ``verify_*`` helper runs one check and returns a :class:`Verdict`,
which serializes to ``{name, parameters, statistic, bound, pass}``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .core import EpisodeRecord, ReturnBatch, Trajectory, empirical_quantile
from .gradients import cvar_pg_gradient
from .policy import (PolicySpec, finite_difference_log_prob_gradient, init_params,
                     log_prob_gradient)

VERDICT_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "parameters": {"type": "object"},
        "statistic": {"type": "number"},
        "bound": {"type": "number"},
        "pass": {"type": "boolean"},
    },
    "required": ["name", "parameters", "statistic", "bound", "pass"],
    "additionalProperties": False,
}


@dataclass
class Verdict:
    name: str
    parameters: dict
    statistic: float
    bound: float
    passed: bool

    def to_dict(self):
        return {"name": self.name, "parameters": self.parameters, "statistic": float(self.statistic),
                "bound": float(self.bound), "pass": bool(self.passed)}


# -- tail barriers -----------------------------------------------------------

@dataclass
class BarrierReport:
    alpha_tested: float
    widest_barrier_beta: float
    tail_value: float

    @property
    def has_barrier(self) -> bool:
        """True when the flat bottom is at least alpha wide, so CVaR-PG sees no signal."""
        return self.widest_barrier_beta >= self.alpha_tested


def detect_tail_barrier(returns, alpha) -> BarrierReport:
    """Width of the flat bottom of a return sample.

    The width is the share of samples tied with the minimum, so a sample
    with a unique minimum reports 1/n.
    """
    R = np.asarray(returns, dtype=np.float64).ravel()
    if R.size == 0:
        raise ValueError("detect_tail_barrier needs at least one return")
    low = R.min()
    return BarrierReport(float(alpha), float(np.count_nonzero(R == low) / R.size), float(low))


def _batch_from_returns(returns):
    records = [EpisodeRecord(np.zeros(1), Trajectory([np.zeros(1)], [0], [float(r)]), float(r))
               for r in returns]
    return ReturnBatch(records, len(records), 0)


def verify_barrier(alpha=0.05, n=400, barrier=0.9, n_params=8, seed=0) -> Verdict:
    """A batch whose bottom ``barrier`` share is tied must give an exactly zero gradient."""
    rng = np.random.default_rng(seed)
    n_flat = int(round(barrier * n))
    R = np.concatenate([np.full(n_flat, -32.0), -32.0 + rng.uniform(1.0, 48.0, n - n_flat)])
    rng.shuffle(R)
    scores = rng.normal(size=(n, n_params))
    report = detect_tail_barrier(R, alpha)
    q = empirical_quantile(R, alpha)
    g = cvar_pg_gradient(_batch_from_returns(R), q, alpha, scores).gradient
    stat = float(np.max(np.abs(g)))
    ok = report.has_barrier and stat == 0.0
    return Verdict("barrier", {"alpha": alpha, "n": n, "barrier": barrier}, stat, 0.0, ok)


# -- blindness to success ----------------------------------------------------

def blindness_bound(alpha, beta, N, n_steps) -> float:
    return n_steps * math.exp(-2.0 * N * (beta - alpha) ** 2)


def blindness_monte_carlo(alpha, beta, N, n_steps, trials, rng, block=10_000_000):
    """Empirical chance of escaping a beta-tail barrier within ``n_steps`` steps.

    Each step draws how many of N returns clear the barrier, a
    Binomial(N, 1 - beta) count.  The alpha-quantile rises above the barrier,
    and the gradient stops vanishing, once that count reaches (1 - alpha) N.
    Returns ``(escape frequency, n * exp(-2 N (beta - alpha)^2))``.
    """
    if not beta > alpha:
        raise ValueError(f"need beta > alpha, got alpha={alpha}, beta={beta}")
    if trials < 1 or n_steps < 1:
        raise ValueError("trials and n_steps must be positive")
    need = math.ceil((1.0 - alpha) * N - 1e-9)
    escaped = np.zeros(trials, dtype=bool)
    steps_per_block = max(1, block // trials)
    done = 0
    while done < n_steps:
        s = min(steps_per_block, n_steps - done)
        counts = rng.binomial(N, 1.0 - beta, size=(trials, s))
        escaped |= (counts >= need).any(axis=1)
        done += s
    return float(escaped.mean()), blindness_bound(alpha, beta, N, n_steps)


def verify_blindness(alpha=0.05, beta=0.25, N=400, n_steps=10_000, trials=10_000, seed=0) -> Verdict:
    freq, bound = blindness_monte_carlo(alpha, beta, N, n_steps, trials, np.random.default_rng(seed))
    # allow one-sided 99% binomial noise around the bound
    b = min(bound, 1.0)
    slack = 2.33 * math.sqrt(b * (1.0 - b) / trials)
    return Verdict("blindness", {"alpha": alpha, "beta": beta, "N": N, "n_steps": n_steps, "trials": trials},
                   freq, bound, freq <= b + slack)


# -- variance reduction by tail sampling -------------------------------------

def _toy_cdf_inverse(alpha, p, bonus):
    """alpha-quantile of R = C + bonus * A with C ~ U(0, 1), A ~ Bernoulli(p), bonus in (0, 1]."""
    # F(r) = (1 - p) clip(r, 0, 1) + p clip(r - bonus, 0, 1), piecewise linear
    knots = np.array([0.0, bonus, 1.0, 1.0 + bonus])
    values = (1 - p) * np.clip(knots, 0, 1) + p * np.clip(knots - bonus, 0, 1)
    return float(np.interp(alpha, values, knots)) if alpha < 1 else 1.0 + bonus * (p > 0)


def _toy_gradients(C, A, weights, q, alpha, p, bonus):
    R = C + A * bonus
    pi = np.array([1.0 - p, p])
    onehot = np.stack([1.0 - A, A.astype(np.float64)], axis=-1)
    score = onehot - pi
    factor = np.where(R <= q, weights * (R - q), 0.0)
    return np.einsum("rn,rnk->rk", factor, score) / (alpha * C.shape[1])


def _draw_toy(rng, shape, p):
    C = rng.random(shape)
    A = rng.random(shape) < p
    return C, A


def variance_reduction_experiment(alpha, N=100, repeats=2000, rng=None, action_prob=0.5, bonus=0.5):
    """Gradient variance with exact tail sampling versus plain sampling.

    One-step problem: context C ~ U(0, 1), two actions with P(a=1) =
    ``action_prob`` and return C + bonus * a, so the alpha-quantile is known
    in closed form.  The tail arm draws (C, a) conditioned on R <= q by
    rejection and weights every sample by alpha.  Variance is the trace of
    the covariance of the estimate across repeats.
    Returns ``(var_tail, var_full, var_tail / var_full)``.
    """
    if repeats < 100:
        raise ValueError("repeats must be at least 100 for a usable variance estimate")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 < bonus <= 1.0:
        raise ValueError("bonus must lie in (0, 1]")
    rng = np.random.default_rng() if rng is None else rng
    p = float(action_prob)
    q = _toy_cdf_inverse(alpha, p, bonus)
    seed = int(rng.integers(0, 2**63 - 1))
    full_rng, tail_rng = np.random.default_rng(seed), np.random.default_rng(seed)

    C, A = _draw_toy(full_rng, (repeats, N), p)
    g_full = _toy_gradients(C, A, np.ones((repeats, N)), q, alpha, p, bonus)

    total = repeats * N
    Ct, At = np.empty(total), np.empty(total, dtype=bool)
    filled = 0
    while filled < total:
        c, a = _draw_toy(tail_rng, total, p)
        keep = c + a * bonus <= q
        take = min(int(keep.sum()), total - filled)
        Ct[filled: filled + take] = c[keep][:take]
        At[filled: filled + take] = a[keep][:take]
        filled += take
    Ct, At = Ct.reshape(repeats, N), At.reshape(repeats, N)
    g_tail = _toy_gradients(Ct, At, np.full((repeats, N), alpha), q, alpha, p, bonus)

    var_full = float(np.trace(np.atleast_2d(np.cov(g_full, rowvar=False))))
    var_tail = float(np.trace(np.atleast_2d(np.cov(g_tail, rowvar=False))))
    ratio = var_tail / var_full if var_full > 0 else float("nan")
    return var_tail, var_full, ratio


def verify_variance(alphas=(0.05, 0.1, 0.2), N=100, repeats=2000, seed=0) -> list:
    out = []
    for i, a in enumerate(alphas):
        vt, vf, ratio = variance_reduction_experiment(a, N, repeats, np.random.default_rng([seed, i]))
        out.append(Verdict("variance", {"alpha": a, "N": N, "repeats": repeats, "var_tail": vt,
                                        "var_full": vf}, ratio, 2.0 * a, bool(ratio <= 2.0 * a)))
    return out


# -- analytic score versus finite differences --------------------------------

def gradient_check(params, observations, epsilon=1e-6, actions=None) -> float:
    """Largest relative error between analytic and central-difference grad log pi.

    Every observation is checked against every action unless ``actions``
    pairs one action with each observation.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    obs = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    n_act = params.spec.n_actions
    pairs = [(o, a) for o in obs for a in range(n_act)] if actions is None else list(zip(obs, actions))
    worst = 0.0
    for o, a in pairs:
        g = log_prob_gradient(params, o, int(a))
        fd = finite_difference_log_prob_gradient(params, o, int(a), epsilon)
        scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-8)
        worst = max(worst, float(np.linalg.norm(g - fd) / scale))
    return worst


def verify_gradcheck(n_triples=100, seed=0, gradient_fn=None) -> list:
    """Random (params, obs, action) triples for the linear and hidden-16 policies.

    ``gradient_fn`` replaces the analytic gradient; it exists so tests can
    confirm that a broken gradient is caught.
    """
    rng = np.random.default_rng(seed)
    out = []
    for hidden, bound in (((), 1e-4), ((16,), 1e-4)):
        spec = PolicySpec(9, 3, hidden)
        worst = 0.0
        for _ in range(n_triples):
            params = init_params(spec, rng)
            params.theta[:] += rng.normal(0.0, 0.5, spec.n_params)
            o = rng.normal(size=spec.input_dim)
            a = int(rng.integers(spec.n_actions))
            g = (gradient_fn or log_prob_gradient)(params, o, a)
            fd = finite_difference_log_prob_gradient(params, o, a, 1e-6)
            scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-8)
            worst = max(worst, float(np.linalg.norm(g - fd) / scale))
        out.append(Verdict("gradcheck", {"hidden_dims": list(hidden), "triples": n_triples}, worst, bound,
                           worst < bound))
    return out


CHECKS = ("barrier", "blindness", "variance", "gradcheck")


def run_checks(which="all", seed=0, quick=False) -> list:
    """Run the named check (or all) and return a flat list of verdicts."""
    names = CHECKS if which == "all" else (which,)
    verdicts = []
    for name in names:
        if name == "barrier":
            verdicts.append(verify_barrier(seed=seed))
        elif name == "blindness":
            n = 1000 if quick else 10_000
            verdicts.append(verify_blindness(n_steps=n, trials=n, seed=seed))
        elif name == "variance":
            verdicts += verify_variance(repeats=200 if quick else 2000, seed=seed)
        elif name == "gradcheck":
            verdicts += verify_gradcheck(seed=seed)
        else:
            raise ValueError(f"unknown check {name!r}; choose from {CHECKS} or 'all'")
    return verdicts
