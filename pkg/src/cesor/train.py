"""Training loop for the mean and CVaR policy-gradient variants.

Variants differ only in two switches: whether contexts are drawn from a
cross-entropy-adapted sampler (``CeR``, ``CeSoR``) and whether the risk level
is annealed from 1 down to alpha (``SoR``, ``CeSoR``).  ``PG`` optimizes the
mean return and ``GCVaR`` the plain CVaR objective.

Every random draw is keyed by (master seed, stream, iteration, index), so a
run is reproducible regardless of worker count and can be resumed from its
latest checkpoint without changing the outcome.
"""
import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cem import CeState, ce_threshold, ce_update, distribution_from_dict, sample_contexts
from .core import (EpisodeRecord, ReturnBatch, Source, Trajectory, cvar_of_samples,
                   effective_sample_size, empirical_quantile)
from .envs import EnvContract, episode_rng, make_env
from .gradients import AdamState, adam_step, cvar_pg_gradient, mean_pg_gradient
from .policy import PolicyParams, PolicySpec, init_params
from .schedule import RiskSchedule, soft_risk_level

log = logging.getLogger(__name__)

ALGORITHMS = ("PG", "GCVaR", "SoR", "CeR", "CeSoR")

STREAM_TRAIN = 0
STREAM_TRAIN_CONTEXT = 1
STREAM_VALID = 2
STREAM_VALID_CONTEXT = 3
STREAM_INIT = 4
STREAM_TEST = 5
STREAM_TEST_CONTEXT = 6


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    env: str = "maze"
    algorithm: str = "CeSoR"
    alpha: float = 0.05
    nu: float = 0.2
    beta_smooth: float = 0.2
    rho: float = 0.8
    batch_size: int = 400
    n_steps: int = 250
    learning_rate: float = 0.1
    weight_clip: tuple = (0.2, 5.0)
    validate_every: int = 10
    validation_episodes: int = 1000
    seed: int = 0
    hidden_dims: tuple = ()
    train_temperature: float = 1.0
    eval_temperature: float = 0.0
    env_options: dict = field(default_factory=dict)
    curriculum: list = field(default_factory=list)
    workers: int = 1

    def __post_init__(self):
        self.weight_clip = tuple(float(x) for x in self.weight_clip)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.curriculum = [int(c) for c in self.curriculum]
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("nu must lie in (0, 1]")
        if not 0.0 < self.beta_smooth < 1.0:
            raise ValueError("beta_smooth must lie in (0, 1)")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        if self.batch_size < 1 or self.n_steps < 0 or self.validate_every < 1:
            raise ValueError("batch_size and validate_every must be positive, n_steps non-negative")
        if self.validation_episodes < 1:
            raise ValueError("validation_episodes must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def use_cem(self):
        return self.algorithm in ("CeR", "CeSoR")

    @property
    def use_soft_risk(self):
        return self.algorithm in ("SoR", "CeSoR")

    @property
    def risk_neutral(self):
        return self.algorithm == "PG"

    def to_dict(self):
        d = asdict(self)
        d["weight_clip"] = list(self.weight_clip)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def phase_lengths(self):
        """Episode length (seconds) in effect at each step 1..M; empty without curriculum."""
        if not self.curriculum:
            return []
        k = len(self.curriculum)
        return [self.curriculum[min((m - 1) * k // max(self.n_steps, 1), k - 1)]
                for m in range(1, self.n_steps + 1)]


def build_env(config: TrainConfig, episode_seconds=None) -> EnvContract:
    options = dict(config.env_options)
    if episode_seconds is not None:
        options["episode_seconds"] = episode_seconds
    return make_env(config.env, **options)


def policy_spec(config: TrainConfig, env: EnvContract) -> PolicySpec:
    return PolicySpec(env.obs_dim, env.n_actions, config.hidden_dims,
                      config.train_temperature, config.eval_temperature)


# -- rollouts ------------------------------------------------------------------

def _rollout(env, params, contexts, rngs, temperature, workers, want_score=True):
    n = len(contexts)
    if workers <= 1 or n < 2 * workers:
        return env.rollout(params, contexts, rngs, temperature, want_score)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda b: env.rollout(params, contexts[b[0]: b[1]], rngs[b[0]: b[1]], temperature, want_score),
            chunks))
    first = parts[0]
    merged = type(first)(
        states=[s for p in parts for s in p.states],
        actions=np.concatenate([p.actions for p in parts]),
        rewards=np.concatenate([p.rewards for p in parts]),
        lengths=np.concatenate([p.lengths for p in parts]),
        scores=np.concatenate([p.scores for p in parts]),
        info={k: np.concatenate([p.info[k] for p in parts]) for k in first.info},
    )
    return merged


def _records_from_rollout(roll, contexts, weights, n_reference):
    records = []
    returns = roll.returns
    for e in range(len(roll)):
        L = int(roll.lengths[e])
        traj = Trajectory(roll.states[e][:L], roll.actions[e, :L], roll.rewards[e, :L])
        source = Source.REFERENCE if e < n_reference else Source.SHIFTED
        info = {k: v[e] for k, v in roll.info.items()}
        records.append(EpisodeRecord(contexts[e], traj, float(returns[e]), float(weights[e]), source, info))
    return records


def split_counts(n, nu, use_cem):
    """(reference, shifted) episode counts for a batch of n."""
    if not use_cem:
        return n, 0
    n_ref = int(math.floor(nu * n + 1e-9))
    return n_ref, n - n_ref


def collect_batch(params: PolicyParams, env: EnvContract, ce_state, n, nu, rng, *, seed=0, iteration=0,
                  temperature=None, workers=1):
    """Sample contexts (reference then shifted) and roll one episode per context.

    Contexts come from ``rng``; each episode's dynamics come from its own
    substream keyed by (seed, iteration, index).  Returns ``(batch, rollout)``.
    """
    if n < 1:
        raise ValueError("batch size must be positive")
    phi0 = ce_state.phi0 if ce_state is not None else env.context_family
    n_ref, n_shift = split_counts(n, nu, ce_state is not None)
    ref = sample_contexts(phi0, n_ref, rng)
    if n_shift:
        shifted = sample_contexts(ce_state.phi, n_shift, rng)
        contexts = np.concatenate([ref, shifted])
        weights = np.concatenate([np.ones(n_ref), ce_state.weights(shifted)])
    else:
        contexts, weights = ref, np.ones(n_ref)
    rngs = [episode_rng(seed, STREAM_TRAIN, iteration, i) for i in range(n)]
    T = params.spec.train_temperature if temperature is None else temperature
    roll = _rollout(env, params, contexts, rngs, T, workers)
    records = _records_from_rollout(roll, contexts, weights, n_ref)
    return ReturnBatch(records, n_ref, n_shift, roll.scores), roll


# -- one iteration -------------------------------------------------------------

def _strategy_counts(batch, used):
    strat = [r.info.get("strategy") for r in batch.records]
    if strat and strat[0] is None:
        return {}
    strat = np.array(strat)
    long_ = strat == "Long"
    return {
        "short_count": int(np.sum(strat == "Short")),
        "long_count": int(np.sum(long_)),
        "stay_count": int(np.sum(strat == "Stay")),
        "long_fraction": float(long_.mean()),
        "long_in_used": int(np.sum(long_ & used)),
    }


def training_step(config: TrainConfig, m, params, adam, ce_state, env, *, schedule=None, workers=1):
    """One iteration: collect, refit the sampler, estimate the gradient, step Adam."""
    if schedule is None:
        schedule = RiskSchedule(config.alpha, config.rho, max(config.n_steps, m))
    ctx_rng = episode_rng(config.seed, STREAM_TRAIN_CONTEXT, m, 0)
    batch, roll = collect_batch(params, env, ce_state if config.use_cem else None, config.batch_size,
                                config.nu, ctx_rng, seed=config.seed, iteration=m, workers=workers)
    R = batch.returns
    ref_R = batch.reference_returns
    row = {"iteration": m}
    q_ce = math.nan
    if config.use_cem:
        q_ce = ce_threshold(ref_R, R, config.alpha, config.beta_smooth)
        ce_update(ce_state, batch.contexts, batch.weights, R, q_ce)
    if config.risk_neutral:
        alpha_prime = 1.0
        report = mean_pg_gradient(batch)
    else:
        alpha_prime = soft_risk_level(m, schedule) if config.use_soft_risk else config.alpha
        q_used = empirical_quantile(ref_R, alpha_prime)
        try:
            report = cvar_pg_gradient(batch, q_used, alpha_prime)
        except FloatingPointError as exc:
            raise TrainingAborted(f"non-finite gradient at iteration {m}", batch) from exc
    used = R < report.q_hat if not config.risk_neutral else np.zeros(len(R), dtype=bool)
    if config.risk_neutral:
        used[: batch.n_reference] = True
    adam, params = adam_step(adam, params, report.gradient)
    shifted_w = batch.weights[batch.n_reference:]
    row.update({
        "alpha_prime": alpha_prime,
        "q_used": report.q_hat,
        "q_ce": q_ce,
        "train_mean": float(ref_R.mean()),
        "train_cvar": cvar_of_samples(ref_R, config.alpha),
        "sample_mean": float(R[batch.n_reference:].mean()) if batch.n_shifted else float(ref_R.mean()),
        "used_count": report.used_count,
        "used_weight_fraction": report.used_weight_fraction,
        "n_eff_used": report.n_eff_used,
        "n_reference": batch.n_reference,
        "n_shifted": batch.n_shifted,
        "n_eff_shifted": effective_sample_size(shifted_w) if len(shifted_w) else 0.0,
        "grad_norm": float(np.linalg.norm(report.gradient)),
    })
    row.update(_strategy_counts(batch, used))
    if "n_peaks" in roll.info:
        row["mean_peaks"] = float(np.mean(roll.info["n_peaks"]))
    phi = ce_state.phi if config.use_cem else env.context_family
    for name, v in zip(phi.phi_names(), phi.phi):
        row[f"phi_{name}"] = float(v)
    return params, adam, ce_state, row


# -- validation and evaluation -------------------------------------------------

@dataclass
class EvalResult:
    returns: np.ndarray
    mean: float
    cvar: float
    info: dict

    def strategy_fractions(self):
        strat = self.info.get("strategy")
        if strat is None:
            return {}
        return {s: float(np.mean(strat == s)) for s in ("Short", "Long", "Stay")}


def evaluate(params, env, n_episodes, alpha, seed, key, *, temperature=None, workers=1,
             stream=STREAM_TEST, context_stream=STREAM_TEST_CONTEXT) -> EvalResult:
    """Roll ``n_episodes`` with contexts from phi0 on dedicated substreams."""
    T = params.spec.eval_temperature if temperature is None else temperature
    contexts = sample_contexts(env.context_family, n_episodes, episode_rng(seed, context_stream, key, 0))
    rngs = [episode_rng(seed, stream, key, i) for i in range(n_episodes)]
    roll = _rollout(env, params, contexts, rngs, T, workers, want_score=False)
    R = roll.returns
    info = dict(roll.info)
    info["contexts"] = contexts
    return EvalResult(R, float(R.mean()), cvar_of_samples(R, alpha), info)


def validate(params, env, n_episodes, alpha, seed, m, workers=1) -> EvalResult:
    """Greedy validation on fresh reference contexts, keyed by step m."""
    return evaluate(params, env, n_episodes, alpha, seed, m, workers=workers,
                    stream=STREAM_VALID, context_stream=STREAM_VALID_CONTEXT)


# -- run log -------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class CsvLog:
    """Append-only CSV with a header fixed by the first row."""

    def __init__(self, path, columns=None):
        self.path = path
        self.columns = columns

    def append(self, row):
        new = not os.path.exists(self.path) or self.columns is None
        if self.columns is None:
            self.columns = list(row)
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(self.columns)
            w.writerow([_fmt(row.get(c, "")) for c in self.columns])

    def truncate_after(self, key, last):
        """Drop rows whose ``key`` column exceeds ``last`` (used when resuming)."""
        if not os.path.exists(self.path):
            return
        rows = read_csv(self.path)
        if not rows:
            return
        self.columns = list(rows[0])
        keep = [r for r in rows if int(r[key]) <= last]
        with open(self.path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in keep:
                w.writerow([r[c] for c in self.columns])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    out_dir: str = None
    env: object = None

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)


def _write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh)
    os.replace(tmp, path)


def _histogram_rows(returns, bins=50):
    counts, edges = np.histogram(returns, bins=bins)
    return [{"bin_low": edges[i], "bin_high": edges[i + 1], "count": int(counts[i])} for i in range(bins)]


def run_training(config: TrainConfig, out_dir=None, workers=None, resume=False) -> RunLog:
    """Full loop with validation, checkpoint selection and persisted artifacts.

    With ``out_dir`` the run directory receives ``config.json``, ``runlog.csv``,
    ``validation.csv``, ``phi_history.csv``, ``checkpoints/{latest,best,final}.json``
    and one return histogram per validation under ``returns/``.
    """
    workers = config.workers if workers is None else workers
    phases = config.phase_lengths()
    env = build_env(config, phases[0] if phases else None)
    spec = policy_spec(config, env)
    params = init_params(spec, episode_rng(config.seed, STREAM_INIT, 0, 0))
    adam = AdamState.zeros(spec.n_params, config.learning_rate)
    ce_state = CeState(env.context_family, env.context_family, config.beta_smooth,
                       config.weight_clip) if config.use_cem else None
    schedule = RiskSchedule(config.alpha, config.rho, max(config.n_steps, 1))
    select_by_mean = config.risk_neutral
    best = {"m": 0, "score": -math.inf}
    start = 1
    runlog = RunLog(out_dir=out_dir)

    paths = {}
    if out_dir:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "returns"), exist_ok=True)
        paths = {k: os.path.join(out_dir, "checkpoints", f"{k}.json") for k in ("latest", "best", "final")}
        runlog.checkpoints = paths
        main_log = CsvLog(os.path.join(out_dir, "runlog.csv"))
        val_log = CsvLog(os.path.join(out_dir, "validation.csv"))
        phi_log = CsvLog(os.path.join(out_dir, "phi_history.csv"))
        if resume and os.path.exists(paths["latest"]):
            with open(paths["latest"], encoding="utf-8") as fh:
                state = json.load(fh)
            params = PolicyParams.from_dict(state["params"])
            adam = AdamState.from_dict(state["adam"])
            if ce_state is not None:
                ce_state.phi = distribution_from_dict(state["phi"])
                ce_state.history = [np.asarray(h) for h in state["phi_history"]]
            best = state["best"]
            start = state["m"] + 1
            for lg, key in ((main_log, "iteration"), (val_log, "iteration"), (phi_log, "iteration")):
                lg.truncate_after(key, state["m"])
            runlog.rows = read_csv(main_log.path) if os.path.exists(main_log.path) else []
            runlog.validation = read_csv(val_log.path) if os.path.exists(val_log.path) else []
            log.info("resuming from step %d", start)
        else:
            for p in ("runlog.csv", "validation.csv", "phi_history.csv"):
                if os.path.exists(os.path.join(out_dir, p)):
                    os.remove(os.path.join(out_dir, p))
            _write_json(os.path.join(out_dir, "config.json"), config.to_dict())

    def checkpoint_state(m):
        return {
            "m": m,
            "params": params.to_dict(),
            "adam": adam.to_dict(),
            "phi": ce_state.phi.to_dict() if ce_state is not None else None,
            "phi_history": [h.tolist() for h in ce_state.history] if ce_state is not None else [],
            "best": best,
        }

    def run_validation(m):
        nonlocal best
        res = validate(params, env, config.validation_episodes, config.alpha, config.seed, m, workers)
        row = {"iteration": m, "mean": res.mean, "cvar": res.cvar}
        row.update({f"frac_{k.lower()}": v for k, v in res.strategy_fractions().items()})
        if "n_servers" in res.info:
            row["mean_servers"] = float(np.mean(res.info["n_servers"]))
        runlog.validation.append(row)
        score = res.mean if select_by_mean else res.cvar
        improved = score > best["score"]
        if improved:
            best = {"m": m, "score": score}
        if out_dir:
            val_log.append(row)
            hist = CsvLog(os.path.join(out_dir, "returns", f"validation_{m:04d}.csv"))
            if os.path.exists(hist.path):
                os.remove(hist.path)
            for r in _histogram_rows(res.returns):
                hist.append(r)
            if improved:
                _write_json(paths["best"], params.to_dict())
        if improved:
            runlog.checkpoints["best_params"] = params.copy()
        log.info("validation m=%d mean=%.3f cvar=%.3f", m, res.mean, res.cvar)

    if start == 1:
        run_validation(0)
        if out_dir:
            phi0 = env.context_family
            phi_log.append({"iteration": 0, **{f"phi_{n}": v for n, v in zip(phi0.phi_names(), phi0.phi)}})
            _write_json(paths["latest"], checkpoint_state(0))

    for m in range(start, config.n_steps + 1):
        if phases and phases[m - 1] != getattr(env, "seconds", None):
            env = build_env(config, phases[m - 1])
            if ce_state is not None:
                ce_state.phi = ce_state.phi.with_trials(env.seconds)
                ce_state.phi0 = ce_state.phi0.with_trials(env.seconds)
        try:
            params, adam, ce_state, row = training_step(config, m, params, adam, ce_state, env,
                                                        schedule=schedule, workers=workers)
        except TrainingAborted as exc:
            if out_dir:
                b = exc.args[1]
                _write_json(os.path.join(out_dir, "abort_dump.json"), {
                    "iteration": m, "returns": b.returns.tolist(), "weights": b.weights.tolist(),
                    "contexts": b.contexts.tolist()})
            raise
        runlog.rows.append(row)
        if out_dir:
            main_log.append(row)
            phi_log.append({"iteration": m, **{k: v for k, v in row.items() if k.startswith("phi_")}})
        if m % config.validate_every == 0 or m == config.n_steps:
            run_validation(m)
        if out_dir:
            _write_json(paths["latest"], checkpoint_state(m))

    runlog.checkpoints["final_params"] = params
    runlog.checkpoints["best_step"] = best["m"]
    if out_dir:
        _write_json(paths["final"], params.to_dict())
        if not os.path.exists(paths["best"]):
            _write_json(paths["best"], params.to_dict())
    if "best_params" not in runlog.checkpoints:
        if out_dir and os.path.exists(paths["best"]):
            with open(paths["best"], encoding="utf-8") as fh:
                runlog.checkpoints["best_params"] = PolicyParams.from_dict(json.load(fh))
        else:
            runlog.checkpoints["best_params"] = params.copy()
    runlog.env = env
    return runlog


def load_run_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return TrainConfig.from_dict(json.load(fh))
