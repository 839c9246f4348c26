"""Per-class accuracy, harmonic mean, the two settings' aggregates and forgetting.

Not-applicable values (an empty unseen pool, a one-task stream) are ``None``
so they never bias a mean.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .data import SETTING1, FeatureDataset, TaskStream, task_groups
from .errors import EvaluationError

CSV_COLUMNS = ("row", "seen_acc", "unseen_acc", "harmonic", "forgetting")


def per_class_accuracy(predictions, labels, class_set) -> float:
    """Mean over ``class_set`` of each class's fraction of correct predictions.

    Summed as exact rationals so the result is the correctly rounded float.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    classes = sorted(set(int(c) for c in class_set))
    if not classes:
        raise EvaluationError("class set is empty")
    stray = set(labels.tolist()) - set(classes)
    if stray:
        raise EvaluationError(f"labels {sorted(stray)} fall outside the class set")
    accs = []
    for c in classes:
        mask = labels == c
        total = int(mask.sum())
        if total == 0:
            raise EvaluationError(f"class {c} has no test samples")
        accs.append(Fraction(int((predictions[mask] == c).sum()), total))
    return float(sum(accs) / len(accs))


def harmonic_mean(s, u):
    return 0.0 if s + u == 0 else 2 * s * u / (s + u)


@dataclass
class TaskEval:
    task_id: int
    seen_acc: float
    unseen_acc: float | None = None
    harmonic: float | None = None
    per_class_acc: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "seen_acc": self.seen_acc, "unseen_acc": self.unseen_acc,
                "harmonic": self.harmonic,
                "per_class_acc": {str(k): v for k, v in sorted(self.per_class_acc.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskEval":
        return cls(d["task_id"], d["seen_acc"], d["unseen_acc"], d["harmonic"],
                   {int(k): v for k, v in d.get("per_class_acc", {}).items()})


def _mean(values):
    return sum(values) / len(values)


def _by_task(task_evals: Sequence[TaskEval], T: int) -> list[TaskEval]:
    found = {e.task_id: e for e in task_evals}
    missing = [t for t in range(1, T + 1) if t not in found]
    if missing:
        raise EvaluationError(f"no evaluation for tasks {missing}")
    return [found[t] for t in range(1, T + 1)]


def setting1_aggregates(task_evals: Sequence[TaskEval], T: int):
    """mSA over all ``T`` tasks; mUA and mH over the first ``T - 1`` (task ``T`` has no unseen classes)."""
    evals = _by_task(task_evals, T)
    msa = _mean([e.seen_acc for e in evals])
    if T < 2:
        return msa, None, None
    head = evals[:T - 1]
    if any(e.unseen_acc is None or e.harmonic is None for e in head):
        raise EvaluationError("setting-1 tasks before the last need unseen accuracy")
    return msa, _mean([e.unseen_acc for e in head]), _mean([e.harmonic for e in head])


def setting2_aggregates(task_evals: Sequence[TaskEval], T: int):
    """All three means run over every task."""
    evals = _by_task(task_evals, T)
    if any(e.unseen_acc is None or e.harmonic is None for e in evals):
        raise EvaluationError("setting-2 tasks all need unseen accuracy")
    return (_mean([e.seen_acc for e in evals]), _mean([e.unseen_acc for e in evals]),
            _mean([e.harmonic for e in evals]))


def forgetting_measure(accuracy_matrix: Sequence[Sequence[float]]):
    """Average drop from each earlier task's best accuracy to its final accuracy.

    ``accuracy_matrix[l][j]`` (0-based) is the accuracy on task ``j``'s seen
    test data after training task ``l``; only ``j <= l`` is read.
    Returns ``None`` for fewer than two tasks.
    """
    T = len(accuracy_matrix)
    if T < 2:
        return None
    drops = []
    for j in range(T - 1):
        best = max(accuracy_matrix[l][j] for l in range(j, T - 1))
        drops.append(best - accuracy_matrix[T - 1][j])
    return _mean(drops)


@dataclass
class MetricsReport:
    setting: str
    task_evals: list[TaskEval]
    mSA: float | None
    mUA: float | None
    mH: float | None
    forgetting: float | None
    accuracy_matrix: list[list[float]] = field(default_factory=list)
    label: str = ""

    @classmethod
    def build(cls, setting: str, task_evals: Sequence[TaskEval],
              accuracy_matrix: Sequence[Sequence[float]], label: str = "") -> "MetricsReport":
        T = len(task_evals)
        agg = setting1_aggregates if setting == SETTING1 else setting2_aggregates
        msa, mua, mh = agg(task_evals, T) if T else (None, None, None)
        return cls(setting, list(task_evals), msa, mua, mh,
                   forgetting_measure(accuracy_matrix), [list(r) for r in accuracy_matrix], label)

    def to_dict(self) -> dict:
        return {"label": self.label, "setting": self.setting,
                "tasks": [e.to_dict() for e in self.task_evals],
                "mSA": self.mSA, "mUA": self.mUA, "mH": self.mH, "forgetting": self.forgetting,
                "accuracy_matrix": self.accuracy_matrix}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["setting"], [TaskEval.from_dict(e) for e in d["tasks"]], d["mSA"], d["mUA"],
                   d["mH"], d["forgetting"], d.get("accuracy_matrix", []), d.get("label", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for e in self.task_evals:
            w.writerow([e.task_id, _fmt(e.seen_acc), _fmt(e.unseen_acc), _fmt(e.harmonic), ""])
        w.writerow(["mean", _fmt(self.mSA), _fmt(self.mUA), _fmt(self.mH), _fmt(self.forgetting)])
        return buf.getvalue()

    def plot_rows(self) -> list[tuple]:
        """Per-task ``(task, series, value)`` rows."""
        rows = []
        for e in self.task_evals:
            for name, v in (("seen", e.seen_acc), ("unseen", e.unseen_acc), ("harmonic", e.harmonic)):
                if v is not None:
                    rows.append((e.task_id, name, v))
        return rows


def _fmt(v) -> str:
    return "NA" if v is None else repr(float(v))


Predictor = Callable[[np.ndarray], np.ndarray]


def evaluate_task(predict: Predictor, class_ids: Sequence[int], dataset: FeatureDataset,
                  stream: TaskStream, t: int) -> TaskEval:
    """Score the seen and unseen pools of task ``t``.

    ``predict`` maps raw feature rows to global class ids and only ever sees
    features, never task identity. ``class_ids`` is the predictor's label space,
    which must cover the pools of the setting.
    """
    required = set(stream.label_space(t))
    missing = required - set(int(c) for c in class_ids)
    if missing:
        raise EvaluationError(f"predictor does not cover classes {sorted(missing)}")
    per_class: dict[int, float] = {}

    def score(pool, classes):
        if len(classes) == 0:
            return None
        feats = dataset.features[pool]
        labels = dataset.labels[pool]
        preds = np.asarray(predict(feats))
        for c in classes:
            mask = labels == c
            per_class[c] = float((preds[mask] == c).mean()) if mask.any() else float("nan")
        return per_class_accuracy(preds, labels, classes)

    seen = score(stream.seen_pool(t), stream.seen_eval_classes(t))
    unseen = score(stream.unseen_pool(t), stream.unseen_eval_classes(t))
    h = harmonic_mean(seen, unseen) if unseen is not None else None
    return TaskEval(t, seen, unseen, h, per_class)


def accuracy_row(predict: Predictor, dataset: FeatureDataset, stream: TaskStream, t: int) -> list[float]:
    """Per-class accuracy on each earlier task's own seen test data after training task ``t``."""
    groups = task_groups(stream)
    row = []
    for j in range(t):
        idx = stream.task(j + 1).test_seen_indices
        preds = predict(dataset.features[idx])
        row.append(per_class_accuracy(preds, dataset.labels[idx], groups[j]))
    return row
