"""Run configuration and its INI file format.

Every key of :class:`RunConfig` may appear in any section of an INI file;
keys of the ``[scenario]`` section are passed to
:func:`streamal.datagen.drifting_scenario`. Sequences are comma-separated.

    [run]
    mode = full
    seed = 3

    [scenario]
    n_tasks = 5
    drift = 1.5
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

from .. import mlp
from ..active import METHODS, AcquisitionConfig
from ..heads import MODES
from ..pacbayes import BoundConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def _default_scenario():
    return {"d": 32, "n_classes": 3, "n_tasks": 5, "separation": 3.0, "drift": 2.0,
            "scale": 1.0, "frames_per_demo": 250, "positive_fraction": 0.5,
            "frames_task0": 2000, "noise": 0.0, "new_class_task": None}


def _grid():
    return (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class RunConfig:
    mode: str = "full"
    seed: int = 0
    out_dir: str | None = None
    stream_path: str | None = None
    scenario: dict = field(default_factory=_default_scenario)
    # model
    hidden: tuple = (64, 32)
    activation: str = "relu"
    gamma: float = 0.03
    lr: float = 0.01
    epochs: int = 200
    minibatch: int | None = None
    pred_samples: int = 32
    # bound
    eps: float = 0.05
    bound_samples: int = 128
    pretrain_bound_samples: int = 32
    taus: tuple = field(default_factory=_grid)
    alphas: tuple = field(default_factory=_grid)
    betas: tuple = field(default_factory=_grid)
    # acquisition and oracle
    method: str = "batchbald+subsample"
    budget: int = 32
    subsample: int = 64
    acq_samples: int = 32
    pool_size: int = 80
    test_fraction: float = 0.2
    episode_frames: int = 5
    max_queries: int = 3
    # decisions and metrics
    query_confidence: float = 0.85
    new_object_threshold: float = 0.5
    class_prior: float = 0.5
    ece_bins: int = 15
    target_precision: float = 0.85

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("taus", "alphas", "betas"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        merged = _default_scenario()
        unknown = set(self.scenario) - set(merged)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        merged.update(self.scenario)
        self.scenario = merged
        checks = [
            (self.mode in MODES, f"mode must be one of {MODES}"),
            (self.method in METHODS, f"method must be one of {METHODS}"),
            (self.activation in mlp.ACTIVATIONS, f"activation must be one of {mlp.ACTIVATIONS}"),
            (len(self.hidden) >= 1 and min(self.hidden) >= 1, "need at least one positive hidden width"),
            (self.gamma > 0, "gamma must be positive"),
            (self.lr > 0 and self.epochs >= 1, "lr must be positive and epochs >= 1"),
            (1 <= self.budget <= self.subsample <= self.pool_size, "need 1 <= budget <= subsample <= pool_size"),
            (0 < self.test_fraction < 1, "test_fraction must lie in (0, 1)"),
            (self.episode_frames >= 1 and self.max_queries >= 0, "episode_frames >= 1, max_queries >= 0"),
            (0 < self.query_confidence < 1 and 0 < self.new_object_threshold < 1, "thresholds lie in (0, 1)"),
            (0 < self.class_prior < 1, "class_prior must lie in (0, 1)"),
            (self.ece_bins >= 1, "ece_bins must be >= 1"),
            (self.pred_samples >= 2 and self.acq_samples >= 2, "need >= 2 predictive samples"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        try:
            self.bound_config()
            self.bound_config(pretrain=True)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def n_tasks(self):
        return int(self.scenario["n_tasks"])

    def arch(self, d):
        return mlp.MLPArch((int(d),) + self.hidden + (1,), self.activation)

    def opt_config(self):
        return mlp.OptConfig(lr=self.lr, epochs=self.epochs, batch_size=self.minibatch, seed=self.seed)

    def bound_config(self, pretrain=False):
        samples = self.pretrain_bound_samples if pretrain else self.bound_samples
        return BoundConfig(self.eps, samples, self.taus, self.alphas, self.betas, self.seed)

    def acquisition(self, seed):
        return AcquisitionConfig(self.method, self.budget, self.subsample, self.acq_samples, seed=seed)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TEXT = {"mode", "out_dir", "stream_path", "activation", "method"}


def _coerce(raw, template):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if isinstance(template, tuple):
        kind = type(template[0]) if template else float
        return tuple(kind(v) for v in raw.split(",") if v.strip())
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    # untyped defaults (None): try int, then float, then keep the string
    for kind in (int, float):
        try:
            return kind(raw)
        except ValueError:
            pass
    return raw


def _field_default(name):
    f = _FIELDS[name]
    return f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default


def load_config(path, **overrides):
    """Read an INI file into a :class:`RunConfig`; keyword overrides win."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values, scenario = {}, {}
    try:
        for section in parser.sections():
            for key, raw in parser.items(section):
                if section == "scenario":
                    template = _default_scenario().get(key)
                    if key not in _default_scenario():
                        raise ConfigError(f"unknown scenario key {key!r}")
                    scenario[key] = _coerce(raw, template)
                elif key in _TEXT:
                    values[key] = raw.strip() or None
                elif key in _FIELDS and key != "scenario":
                    values[key] = _coerce(raw, _field_default(key))
                else:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value in {path}: {exc}") from None
    if scenario:
        values["scenario"] = scenario
    values.update(overrides)
    return RunConfig(**values)


__all__ = ["RunConfig", "ConfigError", "load_config"]
