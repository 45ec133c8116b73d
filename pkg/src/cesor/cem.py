"""Parametric context distributions and cross-entropy updates.

Contexts are always handled as float arrays of shape ``(n, dim)``.  Every
family exposes the same small surface: ``sample``, ``log_density``, ``fit``
(closed-form weighted MLE) plus ``phi`` / ``with_phi`` for logging and
checkpoints.  Probability-like parameters are clamped away from 0 and 1 so
that every member of a family keeps the support of the reference member and
importance weights stay finite.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import empirical_quantile

log = logging.getLogger(__name__)

EPS_P = 1e-3
DEFAULT_CLIP = (0.2, 5.0)


def _lgamma(x):
    return np.vectorize(math.lgamma, otypes=[float])(x)


def _clamp_prob(p, reference, eps):
    lo = min(eps, reference)
    return float(min(max(p, lo), 1.0 - eps))


class ContextDistribution:
    """Base class; subclasses implement one parametric family."""

    name = "base"
    dim = 1

    @property
    def phi(self) -> np.ndarray:
        raise NotImplementedError

    def with_phi(self, phi):
        raise NotImplementedError

    def sample(self, n, rng) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, contexts) -> np.ndarray:
        raise NotImplementedError

    def fit(self, contexts, weights, reference, eps=EPS_P):
        """Weighted MLE over ``contexts``; ``reference`` is the phi0 member."""
        raise NotImplementedError

    def log_ratio(self, other, contexts):
        """log(other(c) / self(c)) evaluated row-wise."""
        num = other.log_density(contexts)
        den = self.log_density(contexts)
        if np.any(np.isneginf(den)):
            raise ValueError("context has zero density under the sampling distribution")
        return num - den

    def phi_names(self):
        return [f"{self.name}_{i}" for i in range(len(self.phi))]

    def to_dict(self):
        return {"family": self.name, "phi": self.phi.tolist()}

    def __repr__(self):
        return f"{type(self).__name__}({', '.join(f'{v:.6g}' for v in self.phi)})"


class Bernoulli(ContextDistribution):
    name = "bernoulli"

    def __init__(self, p):
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"Bernoulli p must lie in [0, 1], got {p}")
        self.p = p

    @property
    def phi(self):
        return np.array([self.p])

    def with_phi(self, phi):
        return Bernoulli(phi[0])

    def sample(self, n, rng):
        return (rng.random(n) < self.p).astype(np.float64)[:, None]

    def log_density(self, contexts):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1)
        with np.errstate(divide="ignore"):
            return np.where(c == 1.0, np.log(self.p), np.log1p(-self.p))

    def fit(self, contexts, weights, reference, eps=EPS_P):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1)
        return Bernoulli(_clamp_prob(np.dot(weights, c) / np.sum(weights), reference.p, eps))


class ExponentialMean(ContextDistribution):
    name = "exponential"

    def __init__(self, mean):
        mean = float(mean)
        if not mean > 0:
            raise ValueError(f"exponential mean must be positive, got {mean}")
        self.mean = mean

    @property
    def phi(self):
        return np.array([self.mean])

    def with_phi(self, phi):
        return ExponentialMean(phi[0])

    def sample(self, n, rng):
        return rng.exponential(self.mean, n)[:, None]

    def log_density(self, contexts):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1)
        out = -np.log(self.mean) - c / self.mean
        return np.where(c >= 0, out, -np.inf)

    def fit(self, contexts, weights, reference, eps=EPS_P):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1)
        m = np.dot(weights, c) / np.sum(weights)
        # a sample of exact zeros would leave the family; keep a tiny mean instead
        return ExponentialMean(max(m, eps * reference.mean))


class BetaMean(ContextDistribution):
    """Beta(2 phi, 2 - 2 phi), whose mean is phi; phi = 0.5 is uniform."""

    name = "beta_mean"

    def __init__(self, mean):
        mean = float(mean)
        if not 0.0 < mean < 1.0:
            raise ValueError(f"Beta mean must lie in (0, 1), got {mean}")
        self.mean = mean

    @property
    def ab(self):
        return 2.0 * self.mean, 2.0 - 2.0 * self.mean

    @property
    def phi(self):
        return np.array([self.mean])

    def with_phi(self, phi):
        return BetaMean(phi[0])

    def sample(self, n, rng):
        a, b = self.ab
        c = rng.beta(a, b, n)
        # keep draws strictly inside (0, 1) where every member has positive density
        return np.clip(c, np.finfo(float).tiny, np.nextafter(1.0, 0.0))[:, None]

    def log_density(self, contexts):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1)
        a, b = self.ab
        inside = (c > 0) & (c < 1)
        cc = np.where(inside, c, 0.5)
        lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
        out = (a - 1.0) * np.log(cc) + (b - 1.0) * np.log1p(-cc) - lbeta
        return np.where(inside, out, -np.inf)

    def fit(self, contexts, weights, reference, eps=EPS_P):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1)
        return BetaMean(_clamp_prob(np.dot(weights, c) / np.sum(weights), reference.mean, eps))


class Binomial(ContextDistribution):
    name = "binomial"

    def __init__(self, n_trials, p):
        n_trials = int(n_trials)
        p = float(p)
        if n_trials < 1:
            raise ValueError("n_trials must be positive")
        if not 0.0 < p < 1.0:
            raise ValueError(f"Binomial p must lie in (0, 1), got {p}")
        self.n_trials = n_trials
        self.p = p

    @property
    def phi(self):
        return np.array([self.p])

    def with_phi(self, phi):
        return Binomial(self.n_trials, phi[0])

    def with_trials(self, n_trials):
        return Binomial(n_trials, self.p)

    def sample(self, n, rng):
        return rng.binomial(self.n_trials, self.p, n).astype(np.float64)[:, None]

    def log_density(self, contexts):
        k = np.asarray(contexts, dtype=np.float64).reshape(-1)
        n = self.n_trials
        valid = (k >= 0) & (k <= n) & (k == np.round(k))
        kk = np.where(valid, k, 0.0)
        out = (_lgamma(n + 1.0) - _lgamma(kk + 1.0) - _lgamma(n - kk + 1.0)
               + kk * math.log(self.p) + (n - kk) * math.log1p(-self.p))
        return np.where(valid, out, -np.inf)

    def log_ratio(self, other, contexts):
        # binomial coefficients cancel; skipping them avoids cancellation error
        k = np.asarray(contexts, dtype=np.float64).reshape(-1)
        if other.n_trials != self.n_trials:
            raise ValueError("binomial ratio needs equal n_trials")
        if np.any((k < 0) | (k > self.n_trials)):
            raise ValueError("context has zero density under the sampling distribution")
        n = self.n_trials
        return (k * (math.log(other.p) - math.log(self.p))
                + (n - k) * (math.log1p(-other.p) - math.log1p(-self.p)))

    def fit(self, contexts, weights, reference, eps=EPS_P):
        k = np.asarray(contexts, dtype=np.float64).reshape(-1)
        p = np.dot(weights, k) / np.sum(weights) / self.n_trials
        return Binomial(self.n_trials, _clamp_prob(p, reference.p, eps))

    def to_dict(self):
        return {"family": self.name, "n_trials": self.n_trials, "phi": self.phi.tolist()}


class Categorical(ContextDistribution):
    name = "categorical"

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or len(probs) < 2:
            raise ValueError("Categorical needs at least two probabilities")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("Categorical probabilities must be positive and sum to 1")
        self.probs = probs / probs.sum()

    @property
    def phi(self):
        return self.probs.copy()

    def with_phi(self, phi):
        return Categorical(phi)

    def sample(self, n, rng):
        return rng.choice(len(self.probs), size=n, p=self.probs).astype(np.float64)[:, None]

    def log_density(self, contexts):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1)
        valid = (c >= 0) & (c < len(self.probs)) & (c == np.round(c))
        idx = np.where(valid, c, 0).astype(np.int64)
        return np.where(valid, np.log(self.probs[idx]), -np.inf)

    def fit(self, contexts, weights, reference, eps=EPS_P):
        c = np.asarray(contexts, dtype=np.float64).reshape(-1).astype(np.int64)
        freq = np.bincount(c, weights=weights, minlength=len(self.probs)) / np.sum(weights)
        floor = np.minimum(eps, reference.probs)
        freq = np.maximum(freq, floor)
        return Categorical(freq / freq.sum())


class Product(ContextDistribution):
    """Independent components; context columns are concatenated in order."""

    name = "product"

    def __init__(self, components):
        self.components = list(components)
        if not self.components:
            raise ValueError("Product needs at least one component")

    @property
    def dim(self):
        return sum(c.dim for c in self.components)

    def _slices(self):
        out, off = [], 0
        for comp in self.components:
            out.append(slice(off, off + comp.dim))
            off += comp.dim
        return out

    def _phi_slices(self):
        out, off = [], 0
        for comp in self.components:
            k = len(comp.phi)
            out.append(slice(off, off + k))
            off += k
        return out

    @property
    def phi(self):
        return np.concatenate([c.phi for c in self.components])

    def with_phi(self, phi):
        phi = np.asarray(phi, dtype=np.float64)
        return Product([c.with_phi(phi[s]) for c, s in zip(self.components, self._phi_slices())])

    def sample(self, n, rng):
        return np.concatenate([c.sample(n, rng) for c in self.components], axis=1)

    def log_density(self, contexts):
        C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        return sum(c.log_density(C[:, s]) for c, s in zip(self.components, self._slices()))

    def log_ratio(self, other, contexts):
        C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        return sum(mine.log_ratio(theirs, C[:, s])
                   for mine, theirs, s in zip(self.components, other.components, self._slices()))

    def fit(self, contexts, weights, reference, eps=EPS_P):
        C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        return Product([c.fit(C[:, s], weights, ref, eps)
                        for c, ref, s in zip(self.components, reference.components, self._slices())])

    def phi_names(self):
        names = []
        for i, comp in enumerate(self.components):
            names += [f"{n}_{i}" for n in comp.phi_names()]
        return names

    def to_dict(self):
        return {"family": self.name, "components": [c.to_dict() for c in self.components]}


def distribution_from_dict(d) -> ContextDistribution:
    fam = d["family"]
    if fam == "product":
        return Product([distribution_from_dict(c) for c in d["components"]])
    phi = d["phi"]
    if fam == "bernoulli":
        return Bernoulli(phi[0])
    if fam == "exponential":
        return ExponentialMean(phi[0])
    if fam == "beta_mean":
        return BetaMean(phi[0])
    if fam == "binomial":
        return Binomial(d["n_trials"], phi[0])
    if fam == "categorical":
        return Categorical(phi)
    raise ValueError(f"unknown distribution family {fam!r}")


# -- sampling and weights ----------------------------------------------------

def sample_contexts(dist: ContextDistribution, n: int, rng) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    return dist.sample(int(n), rng)


def importance_weights(phi0: ContextDistribution, phi: ContextDistribution, contexts, clip=DEFAULT_CLIP):
    """D_phi0(c) / D_phi(c) per row, clipped to ``clip`` (None disables clipping)."""
    C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if C.shape[1] != phi.dim:
        C = C.reshape(-1, phi.dim)
    logw = phi.log_ratio(phi0, C)
    if clip is not None:
        # cap before exp so extreme ratios clip cleanly instead of overflowing
        w = np.clip(np.exp(np.minimum(logw, 700.0)), clip[0], clip[1])
    else:
        w = np.exp(logw)
    return w


def importance_weight(phi0, phi, c, clip=DEFAULT_CLIP) -> float:
    return float(importance_weights(phi0, phi, np.atleast_1d(np.asarray(c, dtype=np.float64))[None, :], clip)[0])


def ce_threshold(ref_returns, all_returns, alpha, beta_smooth) -> float:
    """max of the alpha-quantile of reference returns and the beta-quantile of all."""
    return max(empirical_quantile(ref_returns, alpha), empirical_quantile(all_returns, beta_smooth))


# -- state and updates -------------------------------------------------------

@dataclass
class CeState:
    phi: ContextDistribution
    phi0: ContextDistribution
    beta_smooth: float = 0.2
    weight_clip: tuple = DEFAULT_CLIP
    eps_p: float = EPS_P
    history: list = field(default_factory=list)
    empty_selection: bool = False

    def __post_init__(self):
        if type(self.phi) is not type(self.phi0) or len(self.phi.phi) != len(self.phi0.phi):
            raise ValueError("phi and phi0 must come from the same family")
        if not 0.0 < self.beta_smooth < 1.0:
            raise ValueError("beta_smooth must lie in (0, 1)")
        if self.weight_clip is not None:
            lo, hi = self.weight_clip
            if not 0 < lo <= 1.0 <= hi:
                raise ValueError(f"weight clip {self.weight_clip} must bracket 1")
        if not self.history:
            self.history.append(self.phi.phi.copy())

    def weights(self, contexts):
        return importance_weights(self.phi0, self.phi, contexts, self.weight_clip)


def ce_update(state: CeState, contexts, weights, returns, q) -> ContextDistribution:
    """Refit phi on the contexts whose return is at or below ``q``.

    An empty selection keeps phi and raises ``state.empty_selection``.
    """
    C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    R = np.asarray(returns, dtype=np.float64)
    if C.shape[1] != state.phi.dim:
        C = C.reshape(-1, state.phi.dim)
    if not len(C) == len(w) == len(R):
        raise ValueError("contexts, weights and returns must align")
    sel = R <= q
    state.empty_selection = not np.any(sel)
    if state.empty_selection:
        log.warning("cross-entropy update selected no episodes; phi kept")
    else:
        state.phi = state.phi.fit(C[sel], w[sel], state.phi0, state.eps_p)
    state.history.append(state.phi.phi.copy())
    return state.phi


def static_cem_run(phi0: ContextDistribution, score_fn, q_target, n_per_iter, beta_smooth, max_iters, rng,
                   nu=0.0, weight_clip=None, eps_p=EPS_P):
    """Cross-entropy sampling against a fixed score function and fixed target.

    Each iteration draws ``floor(nu * n)`` contexts from ``phi0`` (weight 1)
    and the rest from the current phi (importance-weighted), lowers the
    target to ``max(q_target, beta-quantile of scores)`` and refits phi.
    Returns one dict per iteration, starting with the phi0 row.
    """
    state = CeState(phi0, phi0, beta_smooth, weight_clip, eps_p)
    rows = []
    for it in range(max_iters + 1):
        n_ref = int(math.floor(nu * n_per_iter))
        n_shift = n_per_iter - n_ref
        ref = sample_contexts(phi0, n_ref, rng)
        shifted = sample_contexts(state.phi, n_shift, rng)
        C = np.concatenate([ref, shifted])
        w = np.concatenate([np.ones(n_ref), state.weights(shifted)])
        scores = np.array([score_fn(c) for c in C], dtype=np.float64)
        q = max(q_target, empirical_quantile(scores, beta_smooth))
        rows.append({
            "iteration": it,
            "phi": state.phi.phi.copy(),
            "sample_mean": float(shifted.mean(axis=0)[0]) if n_shift else float("nan"),
            "score_mean": float(scores[n_ref:].mean()) if n_shift else float("nan"),
            "q": float(q),
            "selected": int(np.sum(scores <= q)),
        })
        if it == max_iters:
            break
        ce_update(state, C, w, scores, q)
        if state.empty_selection:
            rows[-1]["empty_selection"] = True
    return rows
