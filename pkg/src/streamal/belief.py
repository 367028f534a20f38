"""Gaussian beliefs over MLP parameters with layer-wise Kronecker precision."""

import struct
from dataclasses import dataclass

import numpy as np

from .mlp import MLPArch, _arch_header, _read_arch_header


@dataclass
class GaussianBelief:
    """Mean per layer plus one ``(A, G)`` precision factor pair per layer.

    Layer ``l`` has precision ``A_l kron G_l`` over the column-major vectorised
    ``(out, in + 1)`` weight block. ``factors=None`` is a point mass at the mean.
    The scalars are set on assembled posteriors; ``gamma`` marks an isotropic
    belief whose precision is ``I / gamma``.
    """

    mean: list
    factors: list | None
    tau: float | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None

    @property
    def is_delta(self):
        return self.factors is None

    @property
    def n_layers(self):
        return len(self.mean)

    def layer_precision(self, layer):
        """Dense precision of one layer; only sensible for tiny layers."""
        A, G = self.factors[layer]
        return np.kron(A, G)

    def copy(self):
        factors = None if self.factors is None else [(A.copy(), G.copy()) for A, G in self.factors]
        return GaussianBelief([M.copy() for M in self.mean], factors,
                              self.tau, self.alpha, self.beta, self.gamma)


def isotropic_belief(arch, gamma=1.0, mean=None):
    """``N(mean, gamma * I)``; the precision ``I / gamma`` is split evenly over both factors."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if mean is None:
        mean = [np.zeros(s) for s in arch.shapes]
    root = np.sqrt(1.0 / gamma)
    factors = [(root * np.eye(i), root * np.eye(o)) for o, i in arch.shapes]
    return GaussianBelief([M.copy() for M in mean], factors, gamma=float(gamma))


def delta_belief(mean):
    return GaussianBelief([M.copy() for M in mean], None)


# -- checkpoint format -------------------------------------------------------
#
#   magic  b"SALB"            4 bytes
#   version                   uint16   (1)
#   activation code           uint8
#   flags                     uint8    (bit 0: precision factors present)
#   n_sizes                   uint32   (= n_layers + 1)
#   layer sizes               n_sizes x uint32
#   tau, alpha, beta, gamma   4 x float64 (NaN when unset)
#   per layer, in order:
#     mean block              out*(in+1) x float64, column-major vec of [W | b]
#     A factor                (in+1)^2 x float64, row-major     (if flag bit 0)
#     G factor                out^2 x float64, row-major        (if flag bit 0)
#
# Everything little-endian.

BELIEF_MAGIC = b"SALB"


def _opt(v):
    return float("nan") if v is None else float(v)


def _unopt(v):
    return None if np.isnan(v) else float(v)


def belief_to_bytes(belief, arch):
    if [M.shape for M in belief.mean] != arch.shapes:
        raise ValueError("belief does not match architecture")
    has_factors = belief.factors is not None
    parts = [_arch_header(BELIEF_MAGIC, arch, int(has_factors)),
             struct.pack("<4d", *(_opt(v) for v in (belief.tau, belief.alpha, belief.beta, belief.gamma)))]
    for li, M in enumerate(belief.mean):
        parts.append(M.ravel(order="F").astype("<f8").tobytes())
        if has_factors:
            A, G = belief.factors[li]
            parts.append(np.ascontiguousarray(A).astype("<f8").tobytes())
            parts.append(np.ascontiguousarray(G).astype("<f8").tobytes())
    return b"".join(parts)


def belief_from_bytes(buf):
    arch, flags, off = _read_arch_header(buf, BELIEF_MAGIC)
    tau, alpha, beta, gamma = (_unopt(v) for v in struct.unpack_from("<4d", buf, off))
    off += 32
    has_factors = bool(flags & 1)
    mean, factors = [], [] if has_factors else None

    def take(n):
        nonlocal off
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        return arr

    for o, i in arch.shapes:
        mean.append(take(o * i).reshape((o, i), order="F"))
        if has_factors:
            factors.append((take(i * i).reshape(i, i), take(o * o).reshape(o, o)))
    if off != len(buf):
        raise ValueError(f"trailing bytes in belief checkpoint ({len(buf) - off})")
    return GaussianBelief(mean, factors, tau, alpha, beta, gamma), arch


def save_belief(path, belief, arch):
    with open(path, "wb") as fh:
        fh.write(belief_to_bytes(belief, arch))


def load_belief(path):
    with open(path, "rb") as fh:
        return belief_from_bytes(fh.read())


__all__ = ["GaussianBelief", "MLPArch", "isotropic_belief", "delta_belief",
           "belief_to_bytes", "belief_from_bytes", "save_belief", "load_belief"]
