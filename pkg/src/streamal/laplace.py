"""Laplace approximation with layer-wise Kronecker-factored curvature.

Scaling convention for the likelihood factors: with ``N`` examples,

    A_l = sqrt(N) * mean_i(a_i a_i^T)            (bias-augmented layer inputs)
    G_l = sqrt(N) * mean_i(lam_i b_i b_i^T)      (logit backprop to pre-activations)

so ``A_l kron G_l`` targets the N-summed generalised Gauss-Newton block, with
``lam_i = p_i (1 - p_i)`` the Bernoulli Fisher of the logit. For a single
example this is the exact per-example GGN.
"""

import numpy as np
from scipy import linalg as sla

from . import mlp
from .belief import GaussianBelief
from .linalg import jittered_cholesky, kron_matvec  # noqa: F401  (re-exported)

DENSE_LIMIT = 64


def check_hyperparams(tau, alpha, beta):
    if not (tau > 0 and alpha >= 0 and beta >= 0 and alpha + beta > 0):
        raise ValueError(f"invalid hyperparameters tau={tau}, alpha={alpha}, beta={beta}")


def likelihood_curvature(X, params, arch):
    """KFAC factors of the Fisher/GGN of the summed log-likelihood."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("curvature needs a nonempty (N, d) data matrix")
    logits, inputs, pre = mlp.forward_cache(X, params, arch)
    p = mlp.sigmoid(logits)
    lam = p * (1.0 - p)
    n = len(X)
    root_n = np.sqrt(n)
    # backprop of the logit (not the loss) to every layer's pre-activation
    backs = [None] * len(params)
    b = np.ones((n, 1))
    for li in range(len(params) - 1, -1, -1):
        backs[li] = b
        if li > 0:
            b = (b @ params[li][:, :-1]) * mlp._act_grad(pre[li - 1], inputs[li][:, :-1], arch.activation)
    factors = []
    for a, b in zip(inputs, backs):
        A = root_n * (a.T @ a) / n
        G = root_n * ((b * lam[:, None]).T @ b) / n
        factors.append((0.5 * (A + A.T), 0.5 * (G + G.T)))
    return factors


def assemble_posterior(mean, lik_factors, prior, tau=1.0, alpha=1.0, beta=1.0):
    """Combine likelihood and prior curvature factor-wise.

    ``A = sqrt(tau*beta) A_lik + sqrt(tau*alpha) A_prior`` and likewise for ``G``.
    Each factor gets the jitter ladder; an indefinite factor raises.
    """
    check_hyperparams(tau, alpha, beta)
    if prior.factors is None:
        raise ValueError("prior must carry precision factors")
    wl, wp = np.sqrt(tau * beta), np.sqrt(tau * alpha)
    factors = []
    for li, ((Al, Gl), (Ap, Gp)) in enumerate(zip(lik_factors, prior.factors)):
        pair = []
        for lik, pri in ((Al, Ap), (Gl, Gp)):
            F = wl * lik + wp * pri
            _, jitter = jittered_cholesky(F)
            if jitter:
                F = F + jitter * np.eye(F.shape[0])
            pair.append(F)
        factors.append(tuple(pair))
    return GaussianBelief([np.array(M, dtype=np.float64) for M in mean], factors,
                          float(tau), float(alpha), float(beta), None)


def dense_posterior_precision(lik_factors, prior, tau, alpha, beta, layer):
    """Exact ``tau*(beta*A_lik kron G_lik + alpha*A_prior kron G_prior)`` for a tiny layer."""
    Al, Gl = lik_factors[layer]
    Ap, Gp = prior.factors[layer]
    if Al.shape[0] * Gl.shape[0] > DENSE_LIMIT:
        raise ValueError(f"dense assembly limited to {DENSE_LIMIT} parameters per layer")
    return tau * (beta * np.kron(Al, Gl) + alpha * np.kron(Ap, Gp))


def _inverse_cholesky(F):
    L, jitter = jittered_cholesky(F)
    return sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)


def standard_normals(belief, S, rng):
    return [rng.standard_normal((S,) + M.shape) for M in belief.mean]


def sample_params(posterior, S, rng=None, normals=None):
    """Draw ``S`` parameter samples; returns one ``(S, out, in + 1)`` stack per layer.

    A layer sample is ``M + L_G^{-T} Z L_A^{-1}`` with ``Z`` standard normal,
    whose vectorisation has covariance ``A^{-1} kron G^{-1}``. Pass ``normals``
    to reuse the same ``Z`` across several posteriors.
    """
    if S < 1:
        raise ValueError("need at least one sample")
    if normals is None:
        if rng is None:
            raise ValueError("need an rng or pre-drawn normals")
        normals = standard_normals(posterior, S, rng)
    if posterior.factors is None:
        return [np.broadcast_to(M, (S,) + M.shape).copy() for M in posterior.mean]
    out = []
    for M, (A, G), Z in zip(posterior.mean, posterior.factors, normals):
        inv_la = _inverse_cholesky(A)
        inv_lg = _inverse_cholesky(G)
        out.append(M + np.matmul(inv_lg.T, Z[:S]) @ inv_la)
    return out


def sample_list(stacked):
    """Split stacked samples into a list of per-sample parameter lists."""
    return [[W[s] for W in stacked] for s in range(stacked[0].shape[0])]


def predictive_from_samples(X, stacked, arch):
    """Per-sample probabilities ``(S, N)``."""
    return mlp.sigmoid(mlp.forward_samples(X, stacked, arch))


def predictive(X, posterior, arch, S=32, rng=None):
    """Monte-Carlo marginal ``mean_s sigmoid(f(x; theta_s))`` for each row of ``X``."""
    if posterior.factors is None:
        return mlp.sigmoid(mlp.forward_batch(X, posterior.mean, arch))
    if rng is None:
        rng = np.random.default_rng(0)
    stacked = sample_params(posterior, S, rng)
    return predictive_from_samples(X, stacked, arch).mean(axis=0)


def posterior_to_prior(posterior):
    """Next task's prior: same mean and precision factors, scalars dropped."""
    if posterior.factors is None:
        raise ValueError("a point-mass posterior cannot serve as a Gaussian prior")
    return GaussianBelief([M.copy() for M in posterior.mean],
                          [(A.copy(), G.copy()) for A, G in posterior.factors])
