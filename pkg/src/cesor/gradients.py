"""Mean and CVaR policy-gradient estimators plus an Adam ascent step."""
from dataclasses import dataclass

import numpy as np

from .core import ReturnBatch, effective_sample_size
from .policy import PolicyParams


@dataclass
class GradientReport:
    gradient: np.ndarray
    used_count: int
    used_weight_fraction: float
    n_eff_used: float
    q_hat: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.gradient)):
            raise FloatingPointError("non-finite policy gradient")


def _batch_scores(batch: ReturnBatch, scores):
    if scores is None:
        scores = batch.scores
    if scores is None:
        raise ValueError("no per-episode scores supplied")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or len(scores) != len(batch):
        raise ValueError(f"scores shape {scores.shape} does not match {len(batch)} records")
    return scores


def mean_pg_gradient(batch: ReturnBatch, scores=None) -> GradientReport:
    """REINFORCE on the reference episodes with the batch-mean baseline."""
    n = batch.n_reference
    if n == 0:
        raise ValueError("mean_pg_gradient needs at least one reference episode")
    scores = _batch_scores(batch, scores)[:n]
    R = batch.reference_returns
    b = R.mean()
    grad = (R - b) @ scores / n
    return GradientReport(grad, used_count=n, used_weight_fraction=1.0,
                          n_eff_used=float(n), q_hat=float("nan"))


def cvar_pg_gradient(batch: ReturnBatch, q_hat: float, alpha_eff: float, scores=None) -> GradientReport:
    """Weighted tail estimator: sum of w (R - q) score over R <= q, over alpha * N."""
    if not alpha_eff > 0:
        raise ValueError(f"alpha_eff must be positive, got {alpha_eff}")
    if len(batch) == 0:
        raise ValueError("empty batch")
    scores = _batch_scores(batch, scores)
    R = batch.returns
    w = batch.weights
    factor = np.where(R <= q_hat, w * (R - q_hat), 0.0)
    grad = factor @ scores / (alpha_eff * len(R))
    used = R < q_hat
    n_used = int(used.sum())
    return GradientReport(
        grad,
        used_count=n_used,
        used_weight_fraction=float(w[used].sum() / w.sum()),
        n_eff_used=effective_sample_size(w[used]) if n_used else 0.0,
        q_hat=float(q_hat),
    )


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n_params, learning_rate, **kw):
        return cls(np.zeros(n_params), np.zeros(n_params), learning_rate, **kw)

    def to_dict(self):
        return {
            "first_moment": self.first_moment.tolist(),
            "second_moment": self.second_moment.tolist(),
            "learning_rate": self.learning_rate,
            "step_count": self.step_count,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["first_moment"], dtype=np.float64),
                   np.asarray(d["second_moment"], dtype=np.float64),
                   float(d["learning_rate"]), int(d["step_count"]),
                   float(d["beta1"]), float(d["beta2"]), float(d["epsilon"]))


def adam_step(state: AdamState, params: PolicyParams, gradient):
    """One bias-corrected Adam step moving params *along* the gradient."""
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != params.theta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {params.theta.shape}")
    if np.any(np.isnan(g)):
        raise ValueError("NaN gradient")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    theta = params.theta + state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, state.learning_rate, t, state.beta1, state.beta2, state.epsilon)
    return new_state, PolicyParams(params.spec, theta)
