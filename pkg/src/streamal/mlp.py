"""Small MLP binary classifier: forward pass, exact backprop and MAP training.

Parameters are kept as a list of bias-augmented weight matrices ``W~ = [W | b]``
with shape ``(out, in + 1)``, one per layer. The flat parameter vector
concatenates the column-major vectorisation of each ``W~`` in layer order, which
is the ordering under which a layer's curvature block is ``A kron G``.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh")


class DivergenceError(RuntimeError):
    """MAP training produced a non-finite loss."""


@dataclass(frozen=True)
class MLPArch:
    layer_sizes: tuple
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if sizes[-1] != 1:
            raise ValueError("output width must be exactly 1 (a single logit)")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def shapes(self):
        return [(o, i + 1) for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]

    @property
    def n_params(self):
        return sum(o * i for o, i in self.shapes)


def default_arch(d, hidden=(64, 32), activation="relu"):
    """Three-layer MLP: two hidden layers and the logit output."""
    return MLPArch((d, *hidden, 1), activation)


def zeros(arch):
    return [np.zeros(s) for s in arch.shapes]


def flatten(params):
    return np.concatenate([W.ravel(order="F") for W in params])


def unflatten(vec, arch):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (arch.n_params,):
        raise ValueError(f"expected {arch.n_params} parameters, got {vec.shape}")
    out, pos = [], 0
    for o, i in arch.shapes:
        out.append(vec[pos:pos + o * i].reshape((o, i), order="F").copy())
        pos += o * i
    return out


def init_params(arch, rng):
    """He-scaled random weights with zero biases."""
    params = []
    for o, i in arch.shapes:
        W = np.zeros((o, i))
        W[:, :-1] = rng.normal(0.0, np.sqrt(2.0 / (i - 1)), size=(o, i - 1))
        params.append(W)
    return params


def _act(s, name):
    return np.maximum(s, 0.0) if name == "relu" else np.tanh(s)


def _act_grad(s, h, name):
    return (s > 0.0).astype(np.float64) if name == "relu" else 1.0 - h * h


def _augment(H):
    return np.concatenate([H, np.ones(H.shape[:-1] + (1,))], axis=-1)


def _check_input(X, arch):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != arch.input_dim:
        raise ValueError(f"feature dimension {X.shape[-1]} does not match input width {arch.input_dim}")
    return X


def forward_cache(X, params, arch):
    """Forward pass keeping augmented layer inputs and pre-activations."""
    X = _check_input(X, arch)
    inputs, pre = [], []
    H = X
    for li, W in enumerate(params):
        A = _augment(H)
        S = A @ W.T
        inputs.append(A)
        pre.append(S)
        H = S if li == len(params) - 1 else _act(S, arch.activation)
    return H[:, 0], inputs, pre


def forward_batch(X, params, arch):
    return forward_cache(X, params, arch)[0]


def forward(x, params, arch):
    """Logit for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a single feature vector")
    return float(forward_batch(x, params, arch)[0])


def forward_samples(X, stacked, arch):
    """Logits for a stack of parameter samples.

    ``stacked`` holds one ``(S, out, in + 1)`` array per layer; returns ``(S, N)``.
    """
    X = _check_input(X, arch)
    W0 = stacked[0]
    n_s, out = W0.shape[:2]
    # first layer shares its input across samples: one wide matmul
    S = (X @ W0[:, :, :-1].reshape(n_s * out, -1).T).reshape(len(X), n_s, out).transpose(1, 0, 2)
    S = S + W0[:, None, :, -1]
    for W in stacked[1:]:
        H = _act(S, arch.activation)
        S = np.matmul(H, W[:, :, :-1].transpose(0, 2, 1)) + W[:, None, :, -1]
    return S[..., 0]


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def bce(logits, y):
    """Per-example binary cross-entropy on logits, numerically stable."""
    return np.logaddexp(0.0, logits) - y * logits


def prior_term(params, prior):
    """Half the prior Mahalanobis distance, summed over layers."""
    if prior is None or prior.factors is None:
        return 0.0
    total = 0.0
    for W, M, (A, G) in zip(params, prior.mean, prior.factors):
        D = W - M
        total += float(np.sum((G @ D @ A) * D))
    return 0.5 * total


def nll_map_loss(X, y, params, prior, arch):
    """Summed BCE plus the Gaussian prior penalty (theta-independent constants dropped)."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("loss needs at least one example")
    logits = forward_batch(X, params, arch)
    return float(np.sum(bce(logits, y))) + prior_term(params, prior)


def _likelihood_grad(X, y, params, arch):
    logits, inputs, pre = forward_cache(X, params, arch)
    delta = (sigmoid(logits) - y)[:, None]
    grads = [None] * len(params)
    for li in range(len(params) - 1, -1, -1):
        grads[li] = delta.T @ inputs[li]
        if li > 0:
            back = delta @ params[li][:, :-1]
            delta = back * _act_grad(pre[li - 1], inputs[li][:, :-1], arch.activation)
    return grads


def _prior_grad(params, prior):
    if prior is None or prior.factors is None:
        return [np.zeros_like(W) for W in params]
    return [G @ (W - M) @ A for W, M, (A, G) in zip(params, prior.mean, prior.factors)]


def gradient(X, y, params, prior, arch):
    """Exact gradient of :func:`nll_map_loss`, returned in the same layer layout."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("gradient needs at least one example")
    lik = _likelihood_grad(_check_input(X, arch), y, params, arch)
    return [gl + gp for gl, gp in zip(lik, _prior_grad(params, prior))]


@dataclass
class OptConfig:
    lr: float = 0.01
    epochs: int = 200
    batch_size: int | None = None
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1:
            raise ValueError("lr must be positive and epochs >= 1")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class MapResult:
    params: list
    loss: float
    initial_loss: float
    losses: list = field(default_factory=list)


def train_map(X, y, prior, arch, cfg=None):
    """MAP estimate under a Gaussian prior, initialised at the prior mean.

    A zero prior mean gets a He-scaled random perturbation so hidden units
    do not stay symmetric. The best parameters seen are returned, so the
    final loss never exceeds the initial one.
    """
    cfg = cfg or OptConfig()
    X = _check_input(X, arch)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("train_map needs at least one example")
    rng = np.random.default_rng(cfg.seed)
    params = [M.copy() for M in prior.mean]
    if all(not np.any(M) for M in prior.mean):
        params = [W + P for W, P in zip(params, init_params(arch, rng))]

    initial = nll_map_loss(X, y, params, prior, arch)
    if not np.isfinite(initial):
        raise DivergenceError("initial loss is not finite")
    best, best_loss = [W.copy() for W in params], initial
    losses = []
    m = [np.zeros_like(W) for W in params]
    v = [np.zeros_like(W) for W in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        for idx in batches:
            # minibatch likelihood is rescaled to the full-data weight
            scale = 1.0 if isinstance(idx, slice) else n / len(idx)
            g_lik = _likelihood_grad(X[idx], y[idx], params, arch)
            grads = [scale * gl + gp for gl, gp in zip(g_lik, _prior_grad(params, prior))]
            if cfg.optimizer == "gd":
                params = [W - cfg.lr * g for W, g in zip(params, grads)]
            else:
                for li, g in enumerate(grads):
                    m[li] = b1 * m[li] + (1 - b1) * g
                    v[li] = b2 * v[li] + (1 - b2) * g * g
                    mh = m[li] / (1 - b1 ** epoch)
                    vh = v[li] / (1 - b2 ** epoch)
                    params[li] = params[li] - cfg.lr * mh / (np.sqrt(vh) + eps)
        loss = nll_map_loss(X, y, params, prior, arch)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}")
        losses.append(loss)
        if loss < best_loss:
            best, best_loss = [W.copy() for W in params], loss
    return MapResult(best, best_loss, initial, losses)


# -- checkpoint format -------------------------------------------------------
#
#   magic  b"SALP"            4 bytes
#   version                   uint16   (1)
#   activation code           uint8    (index into ACTIVATIONS)
#   reserved                  uint8
#   n_sizes                   uint32   (= n_layers + 1)
#   layer sizes               n_sizes x uint32
#   parameters                n_params x float64, flat vector order
#
# Everything little-endian.

PARAM_MAGIC = b"SALP"


def _arch_header(magic, arch, flags=0):
    sizes = arch.layer_sizes
    return (magic + struct.pack("<HBBI", 1, ACTIVATIONS.index(arch.activation), flags, len(sizes))
            + struct.pack(f"<{len(sizes)}I", *sizes))


def _read_arch_header(buf, magic):
    if buf[:4] != magic:
        raise ValueError(f"bad magic {buf[:4]!r}, expected {magic!r}")
    version, act, flags, n = struct.unpack_from("<HBBI", buf, 4)
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    sizes = struct.unpack_from(f"<{n}I", buf, 12)
    return MLPArch(sizes, ACTIVATIONS[act]), flags, 12 + 4 * n


def params_to_bytes(params, arch):
    return _arch_header(PARAM_MAGIC, arch) + flatten(params).astype("<f8").tobytes()


def params_from_bytes(buf):
    arch, _, off = _read_arch_header(buf, PARAM_MAGIC)
    vec = np.frombuffer(buf, dtype="<f8", count=arch.n_params, offset=off).astype(np.float64)
    return unflatten(vec, arch), arch
