"""Command-line entry point: ``cesor {train,eval,cem-demo,verify,replay}``.

Exit codes: 0 success, 1 runtime or check failure, 2 invalid input.
Set ``CESOR_LOG`` to ``error``, ``info`` or ``debug`` for log verbosity.
"""
import argparse
import csv
import json
import logging
import os
import sys

import jsonschema
import numpy as np

from . import analysis
from .cem import BetaMean, ExponentialMean, static_cem_run
from .core import cvar_of_samples, empirical_quantile
from .envs import episode_rng, make_env
from .policy import PolicyParams
from .train import ALGORITHMS, TrainConfig, TrainingAborted, evaluate, run_training

log = logging.getLogger("cesor")

QUANTILE_GRID = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

_NUMBER = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "env": {"enum": ["maze", "servers", "beta_toy"]},
        "algorithm": {"enum": list(ALGORITHMS)},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "nu": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "beta_smooth": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "rho": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "batch_size": _POS_INT,
        "n_steps": {"type": "integer", "minimum": 0},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "weight_clip": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
        "validate_every": _POS_INT,
        "validation_episodes": _POS_INT,
        "seed": {"type": "integer", "minimum": 0},
        "hidden_dims": {"type": "array", "items": {"type": "integer", "minimum": 0}, "maxItems": 1},
        "train_temperature": {"type": "number", "minimum": 0},
        "eval_temperature": {"type": "number", "minimum": 0},
        "env_options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layout_path": {"type": "string"},
                "noise_std": {"type": "number", "minimum": 0},
                "horizon": _POS_INT,
                "guard_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "guard_cost_mean": {"type": "number", "exclusiveMinimum": 0},
                "episode_seconds": _POS_INT,
                "peak_prob": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "phi0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "curriculum": {"type": "array", "items": _POS_INT},
        "workers": _POS_INT,
    },
}


class UsageError(Exception):
    """Bad input from the command line or a config file (exit code 2)."""


def _setup_logging():
    level = os.environ.get("CESOR_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"CESOR_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, overrides):
    """Apply ``key=value`` strings; dotted keys reach nested objects, values parse as JSON if they can."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"override must look like key=value, got {item!r}")
        *parents, leaf = key.split(".")
        node = doc
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageError(f"cannot override inside non-object key {p!r}")
        node[leaf] = _parse_value(value)
    return doc


def config_from_document(doc, base_dir=None) -> TrainConfig:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid config at {path}: {exc.message}") from None
    doc = dict(doc)
    opts = dict(doc.get("env_options", {}))
    if base_dir and "layout_path" in opts and not os.path.isabs(opts["layout_path"]):
        opts["layout_path"] = os.path.join(base_dir, opts["layout_path"])
    doc["env_options"] = opts
    try:
        return TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def load_config(path, overrides=(), seed=None, workers=None) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    if workers is not None:
        doc["workers"] = workers
    return config_from_document(doc, os.path.dirname(os.path.abspath(path)))


def _write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


# -- train -------------------------------------------------------------------

def cmd_train(args):
    config = load_config(args.config, args.override, args.seed, args.workers)
    out = args.out or os.path.join("runs", f"{config.env}_{config.algorithm}_seed{config.seed}")
    try:
        runlog = run_training(config, out, resume=args.resume)
    except TrainingAborted as exc:
        log.error("%s; state up to the last step is in %s, rerun with --resume", exc.args[0], out)
        return 1
    best = runlog.checkpoints["best_step"]
    last = runlog.validation[-1]
    print(f"run directory: {out}")
    print(f"best validation step: {best}")
    print(f"final validation mean={float(last['mean']):.4f} cvar={float(last['cvar']):.4f}")
    return 0


# -- eval --------------------------------------------------------------------

def _load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "params" in doc and "theta" not in doc:
            doc = doc["params"]
        return PolicyParams.from_dict(doc)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None


def _env_for_eval(args):
    if args.config:
        config = load_config(args.config, args.override)
        return make_env(config.env, **config.env_options)
    options = {}
    for item in args.env_option or ():
        k, _, v = item.partition("=")
        options[k] = _parse_value(v)
    try:
        return make_env(args.env, **options)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def evaluation_table(result, alpha):
    """Lines of the eval summary: mean, CVaR, quantile grid and strategy shares."""
    R = result.returns
    lines = [f"episodes {len(R)}", f"mean {result.mean:.4f}", f"cvar_{alpha:g} {result.cvar:.4f}",
             "quantile return"]
    lines += [f"{q:>8.2f} {empirical_quantile(R, q):.4f}" for q in QUANTILE_GRID]
    fractions = result.strategy_fractions()
    if fractions:
        lines.append("strategy share")
        lines += [f"{k:>8} {v:.4f}" for k, v in fractions.items()]
    return lines


def cmd_eval(args):
    params = _load_checkpoint(args.checkpoint)
    env = _env_for_eval(args)
    spec = params.spec
    if spec.input_dim != env.obs_dim or spec.n_actions != env.n_actions:
        raise UsageError(f"checkpoint expects obs_dim={spec.input_dim}, n_actions={spec.n_actions}; "
                         f"env {env.name} has obs_dim={env.obs_dim}, n_actions={env.n_actions}")
    if not 0 < args.alpha <= 1:
        raise UsageError("alpha must lie in (0, 1]")
    result = evaluate(params, env, args.episodes, args.alpha, args.seed, 0, workers=args.workers or 1)
    for line in evaluation_table(result, args.alpha):
        print(line)
    os.makedirs(args.out, exist_ok=True)
    C = result.info["contexts"]
    strategy = result.info.get("strategy")
    columns = ["episode", "return"] + [f"context_{j}" for j in range(C.shape[1])]
    if strategy is not None:
        columns.append("strategy")
    rows = []
    for e, r in enumerate(result.returns):
        row = [e, repr(float(r))] + [repr(float(c)) for c in C[e]]
        if strategy is not None:
            row.append(strategy[e])
        rows.append(row)
    path = os.path.join(args.out, "eval.csv")
    _write_csv(path, columns, rows)
    print(f"episodes written to {path}")
    return 0


# -- cem-demo ----------------------------------------------------------------

CEM_FAMILIES = {
    "beta": lambda: BetaMean(0.5),
    "exponential": lambda: ExponentialMean(1.0),
}


def cem_demo_rows(family="beta", target=0.1, iters=10, n=1000, nu=0.2, beta=0.5, seed=0):
    """Static CEM on the identity score; returns CSV rows with the reference CVaR alongside."""
    if family not in CEM_FAMILIES:
        raise UsageError(f"unsupported family {family!r}; choose from {sorted(CEM_FAMILIES)}")
    if iters < 0:
        raise UsageError("iters must be non-negative")
    phi0 = CEM_FAMILIES[family]()
    reference = phi0.sample(200_000, np.random.default_rng([seed, 1]))[:, 0]
    q = empirical_quantile(reference, target)
    ref_cvar = cvar_of_samples(reference, target)
    trace = static_cem_run(phi0, lambda c: float(c[0]), q, n, beta, iters, np.random.default_rng(seed), nu=nu)
    return [{"iteration": r["iteration"], "phi": float(r["phi"][0]), "sample_mean": r["sample_mean"],
             "reference_cvar": ref_cvar, "target_quantile": r["q"], "selected": r["selected"]} for r in trace]


def cmd_cem_demo(args):
    rows = cem_demo_rows(args.family, args.target, args.iters, args.n, args.nu, args.beta, args.seed or 0)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "cem_demo.csv")
    columns = list(rows[0])
    _write_csv(path, columns, [[repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in columns]
                               for r in rows])
    for r in rows:
        print(f"iter {r['iteration']:>3}  phi {r['phi']:.4f}  sample mean {r['sample_mean']:.4f}  "
              f"reference cvar {r['reference_cvar']:.4f}")
    print(f"trace written to {path}")
    return 0


# -- verify ------------------------------------------------------------------

def cmd_verify(args):
    verdicts = [v.to_dict() for v in analysis.run_checks(args.which, seed=args.seed or 0, quick=args.quick)]
    for v in verdicts:
        jsonschema.validate(v, analysis.VERDICT_SCHEMA)
    text = json.dumps(verdicts, indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verdicts.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    return 0 if all(v["pass"] for v in verdicts) else 1


# -- replay ------------------------------------------------------------------

def _read_actions(spec):
    """Comma-separated ids, or a file holding one action id per line."""
    if os.path.isfile(spec):
        with open(spec, encoding="utf-8") as fh:
            tokens = [ln.strip() for ln in fh]
    else:
        tokens = spec.split(",")
    return [int(t) for t in tokens if t.strip()]


def cmd_replay(args):
    env = _env_for_eval(args)
    try:
        actions = _read_actions(args.actions)
        context = np.array([float(c) for c in args.context.split(",")])
        env.check_context(context)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rng = episode_rng(args.seed or 0, args.stream, 0, args.index)
    rng.random(env.horizon)  # action uniforms come first on every episode stream
    state = env.reset(context, rng)
    acts, rews, done = [], [], False
    for a in actions:
        if done:
            raise UsageError(f"episode ended after {len(acts)} steps but more actions were given")
        if not 0 <= a < env.n_actions:
            raise UsageError(f"action {a} out of range for {env.n_actions} actions")
        state, r, done = env.step(state, a, rng)
        acts.append(a)
        rews.append(r)
    rows = [[t, int(a), repr(float(r))] for t, (a, r) in enumerate(zip(acts, rews))]
    for t, a, r in rows:
        print(f"{t:>4} action {a} reward {r}")
    print(f"return {float(np.sum(rews))!r} done {done}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "replay.csv"), ["step", "action", "reward"], rows)
    return 0


# -- argument parsing --------------------------------------------------------

def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="run config JSON")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, help="rollout threads")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a config field; repeatable, dotted keys for env_options")


def build_parser():
    parser = argparse.ArgumentParser(prog="cesor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one algorithm variant")
    _common(p, config_required=True)
    p.add_argument("--out", help="run directory (default runs/<env>_<algorithm>_seed<seed>)")
    p.add_argument("--resume", action="store_true", help="continue from checkpoints/latest.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy test episodes for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default="maze", help="environment when no --config is given")
    p.add_argument("--env-option", action="append", metavar="KEY=VALUE")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", default=os.path.join("runs", "eval"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cem-demo", help="static cross-entropy sampler on a toy score")
    p.add_argument("--family", default="beta")
    p.add_argument("--target", type=float, default=0.1, help="reference tail level to target")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--n", type=int, default=1000, help="samples per iteration")
    p.add_argument("--nu", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=os.path.join("runs", "cem_demo"))
    p.set_defaults(func=cmd_cem_demo)

    p = sub.add_parser("verify", help="run numerical checks and print JSON verdicts")
    p.add_argument("which", nargs="?", default="all", choices=analysis.CHECKS + ("all",))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sizes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="step an environment through a fixed action list")
    _common(p)
    p.add_argument("--env", default="maze")
    p.add_argument("--env-option", action="append", metavar="KEY=VALUE")
    p.add_argument("--actions", required=True, help="comma-separated action ids or a file with one id per line")
    p.add_argument("--context", required=True, help="comma-separated context values")
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero
        log.exception("command failed: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
