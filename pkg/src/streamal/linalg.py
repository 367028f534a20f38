"""Small dense linear-algebra helpers for Kronecker-factored precisions."""

import numpy as np
from scipy import linalg as sla

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a factor stays indefinite after the full jitter ladder."""


def kron_matvec(A, G, v):
    """Compute ``(A kron G) @ v`` without forming the Kronecker product.

    ``v`` is the column-major vectorisation of an ``(n_G, n_A)`` matrix ``X``,
    so the product equals ``vec(G @ X @ A.T)``.
    """
    A = np.asarray(A, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if A.ndim != 2 or G.ndim != 2 or A.shape[0] != A.shape[1] or G.shape[0] != G.shape[1]:
        raise ValueError("A and G must be square matrices")
    n_a, n_g = A.shape[0], G.shape[0]
    if v.shape != (n_a * n_g,):
        raise ValueError(f"vector of length {v.size} does not conform to {n_a}x{n_g} factors")
    X = v.reshape((n_g, n_a), order="F")
    return (G @ X @ A.T).ravel(order="F")


def jittered_cholesky(M):
    """Lower Cholesky factor of ``M``, adding diagonal jitter only if needed.

    Returns ``(L, jitter)``; jitter is 0.0 when ``M`` factorises as given.
    The ladder starts at 1e-10 and grows by 10x up to 1e-4.
    """
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise CholeskyError("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(M), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(M.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(M + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise CholeskyError(f"matrix of size {M.shape[0]} not positive definite after jitter {JITTER_MAX:g}")


def logdet_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_inverse(L):
    """Inverse of ``L @ L.T`` from its lower Cholesky factor."""
    return sla.cho_solve((L, True), np.eye(L.shape[0]))


def symmetrize(M):
    return 0.5 * (M + M.T)
