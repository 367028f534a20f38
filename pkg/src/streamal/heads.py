"""One Bayesian binary head per class, combined by argmax."""

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import laplace, mlp
from .belief import belief_from_bytes, belief_to_bytes, delta_belief, isotropic_belief
from .pacbayes import BoundConfig, optimize_hyperparams

MODES = ("full", "mean", "vanilla")


class NoTrainedHeadsError(RuntimeError):
    """Prediction was requested before any head finished an update."""


@dataclass
class Head:
    class_id: int
    gamma: float
    prior: object
    posterior: object = None
    task_counter: int = 0
    hyperparams: tuple | None = None
    update_log: list = field(default_factory=list)

    @property
    def trained(self):
        return self.posterior is not None


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


class MultiHeadClassifier:
    """Heads share one architecture; updating a head never touches the others.

    ``mode`` selects how a head's next prior is formed after an update:
    ``"full"`` chains the whole Laplace posterior, ``"mean"`` keeps only its
    mean under an isotropic covariance, and ``"vanilla"`` is a deterministic
    MAP network retrained from an isotropic zero-mean prior every time.
    """

    def __init__(self, arch, mode="full", gamma=1.0, opt=None, bound=None,
                 pred_samples=32, seed=0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if arch.n_layers < 2:
            raise ValueError("heads need at least one hidden layer")
        self.arch = arch
        self.mode = mode
        self.gamma = float(gamma)
        self.opt = opt or mlp.OptConfig()
        self.bound = bound or BoundConfig()
        self.pred_samples = pred_samples
        self.seed = seed
        self.heads = {}
        self._samples = {}

    @property
    def d(self):
        return self.arch.input_dim

    @property
    def trained_ids(self):
        return sorted(c for c, h in self.heads.items() if h.trained)

    def add_head(self, class_id, gamma=None):
        if class_id in self.heads:
            raise ValueError(f"class {class_id} already has a head")
        gamma = self.gamma if gamma is None else float(gamma)
        head = Head(int(class_id), gamma, isotropic_belief(self.arch, gamma))
        self.heads[head.class_id] = head
        return head

    def update_head(self, class_id, X, y, bound_cfg=None):
        """Fit one head to new data and stage its next prior; returns the bound report."""
        head = self.heads[class_id]
        y = np.asarray(y, dtype=np.float64)
        if len(y) == 0 or y.min() == y.max():
            raise ValueError("an update needs both positive and negative examples")
        t = head.task_counter
        opt = replace(self.opt, seed=derive_seed(self.seed, class_id, t, 1))
        fit = mlp.train_map(X, y, head.prior, self.arch, opt)
        report = None
        if self.mode == "vanilla":
            posterior = delta_belief(fit.params)
            next_prior = isotropic_belief(self.arch, head.gamma)
        else:
            lik = laplace.likelihood_curvature(X, fit.params, self.arch)
            cfg = replace(bound_cfg or self.bound, seed=derive_seed(self.seed, class_id, t, 2))
            tau, alpha, beta, report = optimize_hyperparams(fit.params, lik, head.prior, X, y,
                                                            self.arch, cfg)
            report.class_id, report.task_id = int(class_id), t
            posterior = laplace.assemble_posterior(fit.params, lik, head.prior, tau, alpha, beta)
            if self.mode == "full":
                next_prior = laplace.posterior_to_prior(posterior)
            else:
                next_prior = isotropic_belief(self.arch, head.gamma, mean=posterior.mean)
            head.hyperparams = (tau, alpha, beta)
        head.posterior = posterior
        head.prior = next_prior
        head.task_counter = t + 1
        head.update_log.append({"task": t, "n": int(len(y)),
                                "bound": None if report is None else report.to_dict()})
        self._samples.pop(class_id, None)
        return report

    def _head_samples(self, class_id):
        if class_id not in self._samples:
            head = self.heads[class_id]
            rng = np.random.default_rng(derive_seed(self.seed, class_id, head.task_counter, 3))
            self._samples[class_id] = laplace.sample_params(head.posterior, self.pred_samples, rng)
        return self._samples[class_id]

    def head_probs(self, class_id, X):
        head = self.heads[class_id]
        if not head.trained:
            raise NoTrainedHeadsError(f"head {class_id} has not been trained")
        if head.posterior.is_delta:
            return mlp.sigmoid(mlp.forward_batch(X, head.posterior.mean, self.arch))
        return laplace.predictive_from_samples(X, self._head_samples(class_id), self.arch).mean(axis=0)

    def predict_all(self, X):
        """Class ids of trained heads and an ``(N, C)`` matrix of unnormalised probabilities."""
        ids = self.trained_ids
        if not ids:
            raise NoTrainedHeadsError("no trained heads")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return ids, np.stack([self.head_probs(c, X) for c in ids], axis=1)

    def predict(self, X):
        """Argmax label and the winner's own probability; ties go to the smallest id."""
        ids, P = self.predict_all(X)
        win = np.argmax(P, axis=1)
        return np.asarray(ids)[win], P[np.arange(len(P)), win]

    # -- checkpoints ------------------------------------------------------------

    def _head_meta(self, head):
        return {"class_id": head.class_id, "task_counter": head.task_counter, "gamma": head.gamma,
                "trained": head.trained,
                "hyperparams": None if head.hyperparams is None else list(head.hyperparams),
                "updates": head.update_log, "file": f"head_{head.class_id}.bin"}

    def head_bytes(self, class_id):
        """Serialized state of one head (belief bytes plus its manifest entry)."""
        head = self.heads[class_id]
        belief = head.posterior if head.trained else head.prior
        meta = json.dumps(self._head_meta(head), sort_keys=True).encode()
        return belief_to_bytes(belief, self.arch) + meta

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        manifest = {"layer_sizes": list(self.arch.layer_sizes), "activation": self.arch.activation,
                    "mode": self.mode, "gamma": self.gamma, "pred_samples": self.pred_samples,
                    "seed": self.seed, "heads": []}
        for cid in sorted(self.heads):
            head = self.heads[cid]
            belief = head.posterior if head.trained else head.prior
            with open(os.path.join(directory, f"head_{cid}.bin"), "wb") as fh:
                fh.write(belief_to_bytes(belief, self.arch))
            manifest["heads"].append(self._head_meta(head))
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory, opt=None, bound=None, mode=None):
        """Rebuild a classifier; ``mode`` overrides the saved one (the next priors follow it)."""
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        arch = mlp.MLPArch(tuple(manifest["layer_sizes"]), manifest["activation"])
        clf = cls(arch, mode or manifest["mode"], manifest["gamma"], opt, bound,
                  manifest["pred_samples"], manifest["seed"])
        for meta in manifest["heads"]:
            with open(os.path.join(directory, meta["file"]), "rb") as fh:
                belief, _ = belief_from_bytes(fh.read())
            head = Head(meta["class_id"], meta["gamma"], belief, None, meta["task_counter"],
                        None if meta["hyperparams"] is None else tuple(meta["hyperparams"]),
                        meta["updates"])
            if meta["trained"]:
                head.posterior = belief
                if clf.mode == "full" and belief.factors is not None:
                    head.prior = laplace.posterior_to_prior(belief)
                elif clf.mode == "mean":
                    head.prior = isotropic_belief(arch, head.gamma, mean=belief.mean)
                else:
                    head.prior = isotropic_belief(arch, head.gamma)
            clf.heads[head.class_id] = head
        return clf
