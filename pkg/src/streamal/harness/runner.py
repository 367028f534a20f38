"""Scripted stream playback: initialization, per-frame decisions, queries and updates."""

import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .. import datagen
from ..active import FilterState, filter_update, normalized_entropy, select_indices
from ..heads import MultiHeadClassifier, NoTrainedHeadsError, derive_seed
from . import metrics
from .config import RunConfig


class RunError(RuntimeError):
    """A module error during a run, with the task/class/frame it happened at."""


@dataclass
class Episode:
    task_id: int
    class_id: int
    pool_pos: np.ndarray
    pool_neg: np.ndarray
    test: np.ndarray


class OracleScript:
    """Ground truth for every demonstration, split into a query pool and a held-out test set.

    Per (task, class), a seeded ``test_fraction`` of the positive frames is held
    out; the rest forms the pool that the simulated human demonstrates from
    (and that the stream plays back). Task 0 is the synthetic pretraining split.
    """

    def __init__(self, demos, test_fraction=0.2, seed=0):
        self.pretrain = [dm for dm in demos if dm.task_id == 0]
        self.episodes = {}
        for dm in demos:
            if dm.task_id == 0:
                continue
            pos, _ = dm.arrays(1)
            neg, _ = dm.arrays(0)
            if len(pos) < 2:
                raise ValueError(f"demonstration ({dm.task_id}, {dm.class_id}) has too few positives")
            rng = np.random.default_rng(derive_seed(seed, dm.task_id, dm.class_id, 11))
            order = rng.permutation(len(pos))
            n_test = min(max(1, int(round(test_fraction * len(pos)))), len(pos) - 1)
            self.episodes[(dm.task_id, dm.class_id)] = Episode(
                dm.task_id, dm.class_id, pos[order[n_test:]], neg, pos[order[:n_test]])
        self.n_tasks = 1 + max([t for t, _ in self.episodes], default=0)

    def classes_at(self, task):
        return sorted(c for t, c in self.episodes if t == task)

    def window(self, task, class_id, attempt, length):
        """Frames the robot observes on its ``attempt``-th look at the object."""
        pool = self.episodes[(task, class_id)].pool_pos
        idx = (attempt * length + np.arange(length)) % len(pool)
        return pool[idx]

    def demonstration(self, task, class_id, attempt, size):
        """Positive candidates the human shows when asked for the ``attempt``-th time."""
        pool = self.episodes[(task, class_id)].pool_pos
        idx = (attempt * size + np.arange(min(size, len(pool)))) % len(pool)
        return pool[idx]


@dataclass
class RunState:
    clf: MultiHeadClassifier
    retained_pos: dict = field(default_factory=dict)
    retained_neg: dict = field(default_factory=dict)


def load_demos(cfg):
    if cfg.stream_path:
        return datagen.load_stream(cfg.stream_path)
    kwargs = dict(cfg.scenario)
    kwargs["seed"] = cfg.seed
    return datagen.generate_scenario(datagen.drifting_scenario(**kwargs))


def make_classifier(cfg, d):
    return MultiHeadClassifier(cfg.arch(d), cfg.mode, cfg.gamma, cfg.opt_config(),
                               cfg.bound_config(), cfg.pred_samples, cfg.seed)


def pretrain(cfg, demos, clf=None):
    """Initialization: one head per task-0 class, fitted on its synthetic demonstration."""
    task0 = sorted((dm for dm in demos if dm.task_id == 0), key=lambda dm: dm.class_id)
    if not task0:
        raise RunError("the stream has no task-0 demonstrations to pretrain on")
    clf = clf or make_classifier(cfg, task0[0].d)
    reports = []
    for dm in task0:
        X, y = dm.arrays()
        clf.add_head(dm.class_id)
        t0 = time.perf_counter()
        report = clf.update_head(dm.class_id, X, y, cfg.bound_config(pretrain=True))
        reports.append({"task": 0, "class_id": dm.class_id, "n": len(y),
                        "seconds": time.perf_counter() - t0,
                        "bound": None if report is None else report.to_dict()})
    return clf, reports


def _retain_pretraining(state, demos):
    for dm in demos:
        if dm.task_id != 0:
            continue
        pos, _ = dm.arrays(1)
        neg, _ = dm.arrays(0)
        state.retained_pos.setdefault(dm.class_id, []).append(pos)
        state.retained_neg.setdefault(dm.class_id, []).append(neg)


def _negative_pool(state, class_id):
    parts = [X for c, chunks in state.retained_pos.items() if c != class_id for X in chunks]
    parts += state.retained_neg.get(class_id, [])
    parts = [p for p in parts if len(p)]
    return np.vstack(parts) if parts else np.zeros((0, 0))


class _Recorder:
    def __init__(self):
        self.frames = []
        self.decisions = []
        self.updates = []
        self.add_heads = []


def _observe(clf, frames, cfg):
    """Filter every trained head over ``frames``; returns per-frame rows and the final decision."""
    ids = clf.trained_ids
    rows = []
    if not ids:
        for k in range(1, len(frames) + 1):
            rows.append((k, -1, float("nan"), float("nan"), float("nan")))
        return rows, None, 0.0, [], True
    _, P = clf.predict_all(frames)
    states = [FilterState.from_prior(cfg.class_prior) for _ in ids]
    filtered = np.zeros(len(ids))
    for k in range(len(frames)):
        states = [filter_update(s, p) for s, p in zip(states, P[k])]
        filtered = np.array([s.p for s in states])
        w = int(np.argmax(filtered))
        rows.append((k + 1, ids[w], float(P[k, w]), float(filtered[w]),
                     normalized_entropy(float(filtered[w]))))
    w = int(np.argmax(filtered))
    unknown = bool(np.all(filtered < cfg.new_object_threshold))
    return rows, ids[w], float(filtered[w]), filtered.tolist(), unknown


def _update(state, oracle, cfg, task, class_id, attempt, rec):
    clf = state.clf
    if class_id not in clf.heads:
        clf.add_head(class_id)
        rec.add_heads.append({"task": task, "class_id": class_id})
    head = clf.heads[class_id]
    belief = head.posterior if head.trained else head.prior
    seed = derive_seed(cfg.seed, task, class_id, attempt, 21)
    cand = oracle.demonstration(task, class_id, attempt, cfg.pool_size)
    acq = cfg.acquisition(seed)
    if acq.subsample > len(cand):
        acq.subsample = len(cand)
        acq.batch_size = min(acq.batch_size, acq.subsample)
    pos = cand[select_indices(cand, belief, clf.arch, acq)]
    neg_pool = _negative_pool(state, class_id)
    if len(neg_pool) == 0:
        raise RunError(f"no negative examples available for class {class_id} at task {task}")
    rng = np.random.default_rng(seed)
    neg = neg_pool[np.sort(rng.choice(len(neg_pool), size=min(len(pos), len(neg_pool)), replace=False))]
    X = np.vstack([pos, neg])
    y = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    t0 = time.perf_counter()
    report = clf.update_head(class_id, X, y)
    seconds = time.perf_counter() - t0
    state.retained_pos.setdefault(class_id, []).append(pos)
    rec.updates.append({"task": task, "class_id": class_id, "attempt": attempt, "n": len(y),
                        "seconds": seconds, "bound": None if report is None else report.to_dict()})


def evaluate(clf, X, truth, classes, bins=15):
    """Precision, ECE and AUC of the current classifier on labelled frames."""
    truth = np.asarray(truth)
    try:
        ids, P = clf.predict_all(X)
    except NoTrainedHeadsError:
        return {"precision": 0.0, "accuracy": 0.0, "ece": None, "auc": None}
    win = np.argmax(P, axis=1)
    pred = np.asarray(ids)[win]
    conf = P[np.arange(len(P)), win]
    correct = pred == truth
    aucs = []
    for j, c in enumerate(ids):
        labels = truth == c
        if labels.any() and not labels.all():
            aucs.append(metrics.auc(P[:, j], labels))
    return {"precision": metrics.macro_precision(pred, truth, classes),
            "accuracy": float(correct.mean()),
            "ece": metrics.ece(conf, correct, bins),
            "auc": float(np.mean(aucs)) if aucs else None}


def _test_set(oracle, task):
    Xs, ts = [], []
    for c in oracle.classes_at(task):
        X = oracle.episodes[(task, c)].test
        Xs.append(X)
        ts += [c] * len(X)
    return np.vstack(Xs), np.array(ts)


def run_stream(cfg: RunConfig, demos=None, pretrained=None, checkpoint_dir=None, pre_reports=None):
    """Play the scripted stream once; returns the metrics dictionary.

    ``pretrained`` may be a checkpoint directory from :func:`pretrain` to skip
    initialization (its heads are reloaded under ``cfg.mode``); ``pre_reports``
    are then the reports of that pretraining, copied into the metrics.
    """
    demos = demos if demos is not None else load_demos(cfg)
    oracle = OracleScript(demos, cfg.test_fraction, cfg.seed)
    rec = _Recorder()
    started = time.perf_counter()
    if pretrained is not None:
        clf = MultiHeadClassifier.load(pretrained, cfg.opt_config(), cfg.bound_config(), cfg.mode)
        pre_reports = list(pre_reports or [])
    else:
        clf, pre_reports = pretrain(cfg, demos)
    state = RunState(clf)
    _retain_pretraining(state, demos)
    if checkpoint_dir:
        clf.save(os.path.join(checkpoint_dir, "task_0"))

    per_task, per_class_task = [], []
    for task in range(1, oracle.n_tasks):
        classes = oracle.classes_at(task)
        X_test, t_test = _test_set(oracle, task)
        before = evaluate(clf, X_test, t_test, classes, cfg.ece_bins)
        curve = [before["precision"]]
        task_queries, task_seconds = 0, 0.0
        for c in classes:
            ep = oracle.episodes[(task, c)]
            state.retained_neg.setdefault(c, []).append(ep.pool_neg)
            queries, reached = 0, False
            n_updates = len(rec.updates)
            for attempt in range(cfg.max_queries + 1):
                frames = oracle.window(task, c, attempt, cfg.episode_frames)
                try:
                    rows, winner, conf, _, unknown = _observe(clf, frames, cfg)
                except Exception as exc:
                    raise RunError(f"task {task}, class {c}, attempt {attempt}: {exc}") from exc
                uncertain = winner is None or conf < cfg.query_confidence or unknown
                query = uncertain and attempt < cfg.max_queries
                reached = winner == c and conf >= cfg.query_confidence
                for i, (k, w, raw, filt, ent) in enumerate(rows):
                    last = i == len(rows) - 1
                    rec.frames.append({"task_id": task, "true_class": c, "attempt": attempt, "k": k,
                                       "class_id": w, "raw_p": raw, "filtered_p": filt,
                                       "norm_entropy": ent, "queried": int(query and last),
                                       "unknown": int(unknown and last)})
                rec.decisions.append((task, query, -1 if winner is None else winner, c))
                if not query:
                    break
                try:
                    _update(state, oracle, cfg, task, c, queries, rec)
                except Exception as exc:
                    raise RunError(f"task {task}, class {c}, query {queries}: {exc}") from exc
                queries += 1
                curve.append(evaluate(clf, X_test, t_test, classes, cfg.ece_bins)["precision"])
            seconds = sum(u["seconds"] for u in rec.updates[n_updates:])
            task_queries += queries
            task_seconds += seconds
            per_class_task.append({"task": task, "class_id": c, "queries": queries,
                                   "reached_confidence": bool(reached), "train_seconds": seconds})
        after = evaluate(clf, X_test, t_test, classes, cfg.ece_bins)
        for row in per_class_task:
            if row["task"] == task:
                row["precision"] = _class_precision(clf, X_test, t_test, row["class_id"])
        hits = [i for i, p in enumerate(curve) if p >= cfg.target_precision]
        per_task.append({"task": task, "precision": after["precision"], "accuracy": after["accuracy"],
                         "ece": after["ece"], "auc": after["auc"], "precision_before": before["precision"],
                         "queries": task_queries,
                         "queries_to_target": hits[0] if hits else task_queries + 1,
                         "success_rate": metrics.query_success_rate(
                             d[1:] for d in rec.decisions if d[0] == task),
                         "train_seconds": task_seconds})
        if checkpoint_dir:
            clf.save(os.path.join(checkpoint_dir, f"task_{task}"))

    return _assemble(cfg, per_task, per_class_task, rec, pre_reports, time.perf_counter() - started)


def _class_precision(clf, X, truth, c):
    try:
        pred, _ = clf.predict(X)
    except NoTrainedHeadsError:
        return 0.0
    hits = pred == c
    return float(np.mean(truth[hits] == c)) if hits.any() else 0.0


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _assemble(cfg, per_task, per_class_task, rec, pre_reports, wall):
    bounds = [r["bound"] for r in pre_reports + rec.updates if r["bound"] is not None]
    seconds = [r["seconds"] for r in pre_reports + rec.updates]
    aggregate = {
        "precision": _mean(r["precision"] for r in per_task),
        "ece": _mean(r["ece"] for r in per_task),
        "auc": _mean(r["auc"] for r in per_task),
        "queries": int(sum(r["queries"] for r in per_task)),
        "queries_to_target": _mean(r["queries_to_target"] for r in per_task),
        "success_rate": metrics.query_success_rate(d[1:] for d in rec.decisions),
        "add_heads": len(rec.add_heads),
        "train_seconds_max": max(seconds) if seconds else 0.0,
        "train_seconds_total": float(sum(seconds)),
        "wall_seconds": wall,
    }
    return {"schema": "streamal.metrics/1", "mode": cfg.mode, "seed": cfg.seed,
            "config": cfg.to_dict(), "query_predicate": metrics.QUERY_PREDICATE,
            "aggregate": aggregate, "per_task": per_task, "per_class_task": per_class_task,
            "updates": pre_reports + rec.updates, "bound_reports": bounds,
            "add_head_events": rec.add_heads, "frames": rec.frames}


def execute(cfg, demos=None, pretrained=None, pre_reports=None):
    """``run_stream`` plus artifacts: checkpoints per task boundary and the report files."""
    from .report import write_report
    if not cfg.out_dir:
        raise ValueError("execute needs cfg.out_dir")
    metrics = run_stream(cfg, demos, pretrained, os.path.join(cfg.out_dir, "checkpoints"), pre_reports)
    write_report(metrics, cfg.out_dir)
    return metrics


def run_baseline(cfg, seeds, modes=("vanilla", "mean", "full"), out_dir=None):
    """One run per (seed, mode). Full and mean-only share one task-0 pretraining per seed,
    which is identical for both by construction."""
    runs = []
    for seed in seeds:
        scfg = cfg.replace(seed=seed)
        demos = load_demos(scfg)
        with tempfile.TemporaryDirectory() as tmp:
            shared = None
            for mode in modes:
                mcfg = scfg.replace(mode=mode, out_dir=None if out_dir is None
                                    else os.path.join(out_dir, f"{mode}_seed{seed}"))
                pre = None
                if mode in ("full", "mean"):
                    if shared is None:
                        clf, shared = pretrain(scfg.replace(mode="full"), demos)
                        clf.save(tmp)
                    pre = tmp
                if mcfg.out_dir:
                    runs.append(execute(mcfg, demos, pre, shared))
                else:
                    runs.append(run_stream(mcfg, demos, pre, pre_reports=shared))
    return runs
