"""Temporal log-odds filtering, query decisions and batch acquisition."""

import math
from dataclasses import dataclass

import numpy as np

from . import laplace

CLAMP = 1e-6
METHODS = ("uniform", "bald", "batchbald", "batchbald+subsample")


def logit(p):
    return math.log(p) - math.log1p(-p)


@dataclass(frozen=True)
class FilterState:
    """Accumulated log-odds ``l`` after ``k`` measurements, with prior log-odds ``l0``."""

    l: float = 0.0
    l0: float = 0.0
    k: int = 0

    @classmethod
    def from_prior(cls, p_prior=0.5):
        l0 = logit(min(max(p_prior, CLAMP), 1.0 - CLAMP))
        return cls(l0, l0, 0)

    @property
    def p(self):
        # 1 - 1/(1 + e^l) written to stay in (0, 1) for large |l|
        return 1.0 / (1.0 + math.exp(-self.l)) if self.l >= 0 else math.exp(self.l) / (1.0 + math.exp(self.l))


def filter_update(state, p):
    p = min(max(float(p), CLAMP), 1.0 - CLAMP)
    return FilterState(logit(p) + state.l - state.l0, state.l0, state.k + 1)


def filter_sequence(measurements, p_prior=0.5):
    state = FilterState.from_prior(p_prior)
    for p in measurements:
        state = filter_update(state, p)
    return state


def binary_entropy(p):
    """Entropy in bits with ``0 log 0 = 0``; works elementwise on arrays."""
    p = np.asarray(p, dtype=np.float64)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return h if h.ndim else float(h)


def normalized_entropy(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError("probability outside [0, 1]")
    return binary_entropy(p)


def should_query(filtered_p, confidence_threshold=0.85):
    """Query when the most confident head is still below the threshold."""
    if np.ndim(filtered_p) == 0:
        best = float(filtered_p)
    else:
        best = max(filtered_p) if len(filtered_p) else 0.0
    return best < confidence_threshold


# -- acquisition ---------------------------------------------------------------

@dataclass
class AcquisitionConfig:
    method: str = "batchbald+subsample"
    batch_size: int = 32
    subsample: int = 64
    samples: int = 32
    max_exact: int = 12
    n_configs: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown acquisition method {self.method!r}")
        if not 1 <= self.batch_size <= self.subsample:
            raise ValueError("need 1 <= batch_size <= subsample")
        if self.samples < 2:
            raise ValueError("acquisition needs at least two posterior samples")


def _mean_entropy(probs):
    return binary_entropy(probs).mean(axis=1)


def bald_from_probs(probs):
    """BALD score per row of an ``(n, S)`` matrix of per-sample probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    return _joint_entropy(np.ones((1, probs.shape[1])), probs) - _mean_entropy(probs)


def _joint_entropy(weights, probs):
    """Entropy (bits) of the joint of the configurations in ``weights`` and one new point each.

    ``weights`` is ``(K, S)`` with ``P(config | theta_s)``; ``probs`` is ``(n, S)``.
    Returns one value per candidate.
    """
    S = probs.shape[1]
    p1 = (weights @ probs.T) / S                           # (K, n)
    p0 = (weights @ (1.0 - probs).T) / S
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p1 > 0, p1 * np.log2(p1), 0.0) + np.where(p0 > 0, p0 * np.log2(p0), 0.0))
    return h.sum(axis=0)


def _sampled_joint_entropy(weights, probs):
    """Importance-sampled joint entropy for configurations drawn from the joint itself."""
    S = probs.shape[1]
    marg = weights.mean(axis=1, keepdims=True)             # P(config), (M, 1)
    p1 = (weights @ probs.T) / S
    p0 = (weights @ (1.0 - probs).T) / S
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p1 > 0, p1 * np.log2(p1), 0.0)
        t0 = np.where(p0 > 0, p0 * np.log2(p0), 0.0)
    return -np.mean((t1 + t0) / marg, axis=0)


@dataclass
class Selection:
    indices: list
    gains: list
    scores: list


def batchbald_from_probs(probs, batch_size, max_exact=12, n_configs=4096, rng=None):
    """Greedy joint mutual-information maximisation over ``(n, S)`` sample probabilities.

    Joint entropies are exact by enumerating all outcome configurations up to
    ``max_exact`` selected points; beyond that, ``n_configs`` configurations are
    sampled from the joint. Ties go to the lowest index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, S = probs.shape
    if batch_size > n:
        raise ValueError(f"cannot select {batch_size} of {n} candidates")
    cond = _mean_entropy(probs)
    weights = np.ones((1, S))
    sampled = False
    chosen, gains, scores = [], [], []
    available = np.ones(n, dtype=bool)
    mi_prev, cond_sum = 0.0, 0.0
    for _ in range(batch_size):
        joint = (_sampled_joint_entropy if sampled else _joint_entropy)(weights, probs)
        mi = joint - (cond_sum + cond)
        mi = np.where(available, mi, -np.inf)
        i = int(np.argmax(mi))
        chosen.append(i)
        scores.append(float(mi[i]))
        gains.append(float(mi[i] - mi_prev))
        mi_prev, cond_sum = float(mi[i]), cond_sum + cond[i]
        available[i] = False
        p = probs[i][None, :]
        if not sampled and len(chosen) >= max_exact:
            weights = _sample_configs(weights, p, n_configs, rng)
            sampled = True
        elif sampled:
            weights = _extend_sampled(weights, p, rng)
        else:
            weights = np.vstack([weights * p, weights * (1.0 - p)])
    return Selection(chosen, gains, scores)


def _sample_configs(weights, p, n_configs, rng):
    """Swap exact enumeration for ``n_configs`` configurations drawn from the joint."""
    rng = rng if rng is not None else np.random.default_rng(0)
    full = np.vstack([weights * p, weights * (1.0 - p)])
    mass = full.mean(axis=1)
    picks = rng.choice(len(full), size=n_configs, p=mass / mass.sum())
    return full[picks]


def _extend_sampled(weights, p, rng):
    """Extend each sampled configuration with an outcome of the newly selected point."""
    rng = rng if rng is not None else np.random.default_rng(0)
    S = weights.shape[1]
    # draw the outcome under a parameter sample chosen by the configuration's own weight
    post = weights / weights.sum(axis=1, keepdims=True)
    u = rng.random(len(weights))
    s_idx = (post.cumsum(axis=1) < u[:, None]).sum(axis=1).clip(max=S - 1)
    y = rng.random(len(weights)) < p[0, s_idx]
    return np.where(y[:, None], weights * p, weights * (1.0 - p))


def candidate_probs(X, posterior, arch, samples, rng):
    stacked = laplace.sample_params(posterior, samples, rng)
    return laplace.predictive_from_samples(X, stacked, arch).T


def bald_scores(X, posterior, arch, samples=32, rng=None):
    if samples < 2:
        raise ValueError("BALD needs at least two posterior samples")
    rng = rng if rng is not None else np.random.default_rng(0)
    return bald_from_probs(candidate_probs(X, posterior, arch, samples, rng))


def batchbald_select(X, posterior, arch, cfg):
    rng = np.random.default_rng(cfg.seed)
    probs = candidate_probs(X, posterior, arch, cfg.samples, rng)
    return batchbald_from_probs(probs, cfg.batch_size, cfg.max_exact, cfg.n_configs, rng).indices


def select_indices(X, posterior, arch, cfg):
    """Indices of ``cfg.batch_size`` rows of ``X`` picked by ``cfg.method``.

    The subsampling variant first draws ``cfg.subsample`` rows uniformly
    (kept in their original order) and runs BatchBALD on those.
    """
    n = len(X)
    budget = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    if cfg.method == "uniform":
        return sorted(rng.choice(n, size=budget, replace=False).tolist())
    pool = np.arange(n)
    if cfg.method == "batchbald+subsample" and cfg.subsample < n:
        pool = np.sort(rng.choice(n, size=cfg.subsample, replace=False))
    probs = candidate_probs(X[pool], posterior, arch, cfg.samples, np.random.default_rng(cfg.seed + 1))
    if cfg.method == "bald":
        scores = bald_from_probs(probs)
        order = np.lexsort((np.arange(len(pool)), -scores))
        return [int(pool[i]) for i in order[:budget]]
    sel = batchbald_from_probs(probs, budget, cfg.max_exact, cfg.n_configs, rng)
    return [int(pool[i]) for i in sel.indices]


def subsample_then_select(examples, posterior, arch, cfg):
    """Keep ``cfg.batch_size`` of the given labelled examples; labels are untouched."""
    if cfg.subsample > len(examples) and cfg.method == "batchbald+subsample":
        raise ValueError(f"subsample size {cfg.subsample} exceeds {len(examples)} candidates")
    X = np.stack([e.x for e in examples])
    return [examples[i] for i in select_indices(X, posterior, arch, cfg)]
