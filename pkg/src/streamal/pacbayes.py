"""McAllester PAC-Bayes bound and grid search over (tau, alpha, beta)."""

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg as sla

from . import laplace, mlp
from .linalg import CholeskyError, jittered_cholesky, logdet_chol


def _log_grid():
    return tuple(np.logspace(-2, 2, 5).tolist())


@dataclass
class BoundConfig:
    eps: float = 0.05
    samples: int = 128
    taus: tuple = field(default_factory=_log_grid)
    alphas: tuple = field(default_factory=_log_grid)
    betas: tuple = field(default_factory=_log_grid)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.samples < 1:
            raise ValueError("need at least one Monte-Carlo sample")
        for name in ("taus", "alphas", "betas"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} grid is empty")
            setattr(self, name, values)
        if min(self.taus) <= 0 or min(self.alphas) < 0 or min(self.betas) < 0:
            raise ValueError("grid values violate tau > 0, alpha >= 0, beta >= 0")


@dataclass
class BoundReport:
    emp_risk: float
    kl: float
    bound: float
    tau: float
    alpha: float
    beta: float
    n: int = 0
    evaluated: int = 1
    min_gap: float = 0.0
    class_id: int | None = None
    task_id: int | None = None

    def to_dict(self):
        return asdict(self)


def _layer_kl(M1, A1, G1, M0, A0, G0):
    """KL between matrix-normal layers with precisions ``A1 kron G1`` and ``A0 kron G0``."""
    La1, _ = jittered_cholesky(A1)
    Lg1, _ = jittered_cholesky(G1)
    try:
        La0 = np.linalg.cholesky(A0)
        Lg0 = np.linalg.cholesky(G0)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError("prior precision is not positive definite") from exc
    n_a, n_g = A1.shape[0], G1.shape[0]
    trace = np.trace(sla.cho_solve((La1, True), A0)) * np.trace(sla.cho_solve((Lg1, True), G0))
    D = M1 - M0
    quad = float(np.sum((G0 @ D @ A0) * D))
    logdet1 = n_g * logdet_chol(La1) + n_a * logdet_chol(Lg1)
    logdet0 = n_g * logdet_chol(La0) + n_a * logdet_chol(Lg0)
    return 0.5 * (trace + quad - n_a * n_g + logdet1 - logdet0)


def kl_gaussians(rho, pi):
    """Closed-form ``KL(rho || pi)`` summed over layers, using the Kronecker structure."""
    if rho.factors is None or pi.factors is None:
        raise ValueError("KL needs Gaussian beliefs with precision factors")
    if [M.shape for M in rho.mean] != [M.shape for M in pi.mean]:
        raise ValueError("beliefs belong to different architectures")
    total = sum(_layer_kl(M1, A1, G1, M0, A0, G0)
                for M1, (A1, G1), M0, (A0, G0) in zip(rho.mean, rho.factors, pi.mean, pi.factors))
    return max(float(total), 0.0)


def kl_gaussians_dense(rho, pi):
    """Same KL through explicit dense precisions; for tiny layers only."""
    total = 0.0
    for li in range(rho.n_layers):
        P1, P0 = rho.layer_precision(li), pi.layer_precision(li)
        d = (rho.mean[li] - pi.mean[li]).ravel(order="F")
        L1, L0 = np.linalg.cholesky(P1), np.linalg.cholesky(P0)
        trace = np.trace(sla.cho_solve((L1, True), P0))
        total += 0.5 * (trace + d @ P0 @ d - len(d) + logdet_chol(L1) - logdet_chol(L0))
    return float(total)


def empirical_risk_from_samples(stacked, X, y, arch):
    """Mean 0-1 loss over samples and data; a logit of exactly 0 predicts class 1."""
    logits = mlp.forward_samples(X, stacked, arch)
    pred = (logits >= 0.0).astype(np.float64)
    return float(np.mean(pred != np.asarray(y, dtype=np.float64)[None, :]))


def empirical_risk(posterior, X, y, arch, S=128, rng=None, normals=None):
    if len(y) == 0:
        raise ValueError("empirical risk needs data")
    stacked = laplace.sample_params(posterior, S, rng, normals)
    return empirical_risk_from_samples(stacked, X, y, arch)


def mcallester_bound(emp_risk, kl, n, eps):
    """``emp_risk + sqrt((kl + ln(2 sqrt(n) / eps)) / (2 n))``."""
    if n < 1 or kl < 0:
        raise ValueError("need n >= 1 and kl >= 0")
    return emp_risk + math.sqrt((kl + math.log(2.0 * math.sqrt(n) / eps)) / (2.0 * n))


def _unique(values):
    return sorted(set(values))


def optimize_hyperparams(mean, lik_factors, prior, X, y, arch, cfg=None):
    """Exhaustive grid search for the bound-minimising (tau, alpha, beta).

    Every grid point reuses the same standard normals, so risks are paired.
    Ties go to the smaller tau, then beta, then alpha.
    """
    cfg = cfg or BoundConfig()
    n = len(y)
    if n == 0:
        raise ValueError("bound optimisation needs data")
    rng = np.random.default_rng(cfg.seed)
    normals = laplace.standard_normals(prior, cfg.samples, rng)
    best, best_key, count, min_gap = None, None, 0, math.inf
    failures = 0
    # the posterior depends on (tau*beta, tau*alpha) only, so equal products share one evaluation
    seen = {}
    for tau, beta, alpha in itertools.product(_unique(cfg.taus), _unique(cfg.betas), _unique(cfg.alphas)):
        if alpha + beta <= 0:
            continue
        key = (tau * beta, tau * alpha)
        if key not in seen:
            try:
                post = laplace.assemble_posterior(mean, lik_factors, prior, tau, alpha, beta)
            except CholeskyError:
                seen[key] = None
            else:
                seen[key] = (empirical_risk(post, X, y, arch, cfg.samples, normals=normals),
                             kl_gaussians(post, prior))
        if seen[key] is None:
            failures += 1
            continue
        risk, kl = seen[key]
        bound = mcallester_bound(risk, kl, n, cfg.eps)
        count += 1
        min_gap = min(min_gap, bound - risk)
        key = (bound, tau, beta, alpha)
        if best_key is None or key < best_key:
            best_key = key
            best = BoundReport(risk, kl, bound, tau, alpha, beta, n)
    if best is None:
        raise CholeskyError(f"no grid point gave a positive-definite posterior ({failures} tried)")
    best.evaluated = count
    best.min_gap = min_gap
    return best.tau, best.alpha, best.beta, best
