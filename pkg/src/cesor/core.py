"""Return arithmetic, empirical quantiles/CVaR and importance-weight bookkeeping."""
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class Source(str, enum.Enum):
    REFERENCE = "Reference"
    SHIFTED = "Shifted"


@dataclass
class Trajectory:
    """One episode: observations seen, actions taken and rewards received."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        n = len(self.actions)
        if n < 1:
            raise ValueError("empty trajectory")
        if len(self.states) != n or len(self.rewards) != n:
            raise ValueError(
                f"trajectory length mismatch: {len(self.states)} states, "
                f"{n} actions, {len(self.rewards)} rewards"
            )

    @property
    def length(self) -> int:
        return len(self.actions)


@dataclass
class EpisodeRecord:
    context: np.ndarray
    trajectory: Trajectory
    ret: float
    weight: float = 1.0
    source: Source = Source.REFERENCE
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"importance weight must be positive, got {self.weight}")
        if self.source == Source.REFERENCE and self.weight != 1.0:
            raise ValueError("reference records carry unit weight")


@dataclass
class ReturnBatch:
    """Reference records first, then shifted ones.

    ``scores`` optionally caches the per-episode score vectors (sum of
    grad-log-probabilities) computed during the rollout, one row per record.
    """

    records: list
    n_reference: int
    n_shifted: int
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_reference + self.n_shifted != len(self.records):
            raise ValueError("n_reference + n_shifted must equal the number of records")
        for i, rec in enumerate(self.records):
            expected = Source.REFERENCE if i < self.n_reference else Source.SHIFTED
            if rec.source != expected:
                raise ValueError(f"record {i} has source {rec.source}, expected {expected}")
        if self.scores is not None and len(self.scores) != len(self.records):
            raise ValueError("scores must align with records")

    def __len__(self):
        return len(self.records)

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.ret for r in self.records], dtype=np.float64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.records], dtype=np.float64)

    @property
    def reference_returns(self) -> np.ndarray:
        return self.returns[: self.n_reference]

    @property
    def contexts(self) -> np.ndarray:
        return np.array([np.atleast_1d(r.context) for r in self.records], dtype=np.float64)


def trajectory_return(rewards: Sequence[float], gamma: float = 1.0) -> float:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("empty trajectory")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        return float(rewards.sum())
    return float(np.sum(rewards * gamma ** np.arange(rewards.size)))


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


def quantile_rank(n: int, alpha: float) -> int:
    """1-based rank k = ceil(alpha * n) of the alpha-quantile order statistic."""
    _check_alpha(alpha)
    # guard against alpha*n landing a hair above an integer (e.g. 0.07*100)
    k = math.ceil(alpha * n - 1e-9 * max(1.0, alpha * n))
    return min(max(k, 1), n)


def empirical_quantile(values: Sequence[float], alpha: float) -> float:
    """k-th smallest sample with k = ceil(alpha * n); no interpolation."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("empirical_quantile of an empty sample")
    k = quantile_rank(values.size, alpha)
    return float(np.partition(values, k - 1)[k - 1])


def cvar_of_samples(values: Sequence[float], alpha: float) -> float:
    """Mean of every sample at or below the empirical alpha-quantile."""
    values = np.asarray(values, dtype=np.float64).ravel()
    q = empirical_quantile(values, alpha)
    return float(values[values <= q].mean())


def effective_sample_size(weights: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("effective_sample_size of an empty sample")
    if np.any(~(w > 0)):
        raise ValueError("weights must be strictly positive")
    return float(w.sum() ** 2 / np.sum(w * w))
