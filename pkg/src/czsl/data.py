"""Feature datasets, the on-disk dataset format, and the two task-stream splitters."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (ConfigError, DatasetShapeError, LabelRangeError, MissingFileError,
                     NonFiniteValueError, IntegrityError, DataError)

FEATURES_FILE = "features.bin"
LABELS_FILE = "labels.bin"
ATTRIBUTES_FILE = "attributes.bin"
MANIFEST_FILE = "manifest.json"

SETTING1 = "setting1"
SETTING2 = "setting2"


@dataclass(frozen=True)
class FeatureDataset:
    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    class_names: tuple[str, ...] | None = None
    attribute_only: frozenset[int] = frozenset()

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        attrs = np.asarray(self.attributes, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "attribute_only", frozenset(int(c) for c in self.attribute_only))
        if feats.ndim != 2 or attrs.ndim != 2 or labels.ndim != 1:
            raise DatasetShapeError("features/attributes must be 2-D and labels 1-D")
        if feats.shape[0] != labels.shape[0]:
            raise DatasetShapeError(f"{feats.shape[0]} feature rows but {labels.shape[0]} labels")
        C = attrs.shape[0]
        if labels.size and (labels.min() < 0 or labels.max() >= C):
            bad = int(np.flatnonzero((labels < 0) | (labels >= C))[0])
            raise LabelRangeError(f"label {labels[bad]} at row {bad} outside [0, {C})")
        _check_finite(feats, "feature")
        _check_finite(attrs, "attribute")
        present = set(np.unique(labels).tolist())
        missing = set(range(C)) - present - self.attribute_only
        if missing:
            raise DataError(f"classes {sorted(missing)} have no samples and are not attribute-only")
        if self.class_names is not None and len(self.class_names) != C:
            raise DatasetShapeError(f"{len(self.class_names)} class names for {C} classes")
        for arr in (feats, labels, attrs):
            arr.flags.writeable = False

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return self.attributes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def attribute_dim(self) -> int:
        return self.attributes.shape[1]

    def indices_of(self, cls: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cls)


def _check_finite(arr: np.ndarray, what: str):
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise NonFiniteValueError(f"non-finite {what} value at row {row}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_dataset(dataset: FeatureDataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dataset.features.astype("<f4").tofile(path / FEATURES_FILE)
    dataset.labels.astype("<u4").tofile(path / LABELS_FILE)
    dataset.attributes.astype("<f4").tofile(path / ATTRIBUTES_FILE)
    manifest = {
        "N": dataset.num_samples,
        "C": dataset.num_classes,
        "d_x": dataset.feature_dim,
        "d_a": dataset.attribute_dim,
        "byte_order": "little",
        "checksums": {name: _sha256(path / name)
                      for name in (FEATURES_FILE, LABELS_FILE, ATTRIBUTES_FILE)},
    }
    if dataset.class_names is not None:
        manifest["class_names"] = list(dataset.class_names)
    if dataset.attribute_only:
        manifest["attribute_only_classes"] = sorted(dataset.attribute_only)
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def _read_bin(path: Path, dtype: str, count: int, name: str) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"missing dataset file {path}")
    raw = np.fromfile(path, dtype=dtype)
    if raw.size != count:
        raise DatasetShapeError(
            f"{name}: manifest implies {count} values but file holds {raw.size}"
        )
    return raw


def load_dataset(path) -> FeatureDataset:
    """Read and validate a dataset directory written by :func:`save_dataset`."""
    path = Path(path)
    mpath = path / MANIFEST_FILE
    if not mpath.exists():
        raise MissingFileError(f"missing manifest {mpath}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        N, C, d_x, d_a = (int(manifest[k]) for k in ("N", "C", "d_x", "d_a"))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed manifest {mpath}: {exc}") from exc
    if manifest.get("byte_order", "little") != "little":
        raise DataError(f"unsupported byte order {manifest['byte_order']!r}")
    for name, expected in manifest.get("checksums", {}).items():
        fpath = path / name
        if fpath.exists() and _sha256(fpath) != expected:
            raise IntegrityError(f"checksum mismatch for {fpath}")
    feats = _read_bin(path / FEATURES_FILE, "<f4", N * d_x, FEATURES_FILE)
    feats = feats.reshape(N, d_x).astype(np.float64)
    labels = _read_bin(path / LABELS_FILE, "<u4", N, LABELS_FILE).astype(np.int64)
    attrs = _read_bin(path / ATTRIBUTES_FILE, "<f4", C * d_a, ATTRIBUTES_FILE)
    attrs = attrs.reshape(C, d_a).astype(np.float64)
    names = manifest.get("class_names")
    return FeatureDataset(feats, labels, attrs,
                          tuple(names) if names is not None else None,
                          frozenset(manifest.get("attribute_only_classes", ())))


def convert_csv(csv_dir, out_dir) -> FeatureDataset:
    """Build a dataset directory from ``features.csv``, ``labels.csv`` and ``attributes.csv``.

    Optional ``class_names.txt`` holds one name per line. CSVs have no header.
    """
    csv_dir = Path(csv_dir)

    def read(name, dtype):
        p = csv_dir / name
        if not p.exists():
            raise MissingFileError(f"missing {p}")
        with p.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        try:
            return np.array(rows, dtype=dtype)
        except ValueError as exc:
            raise DataError(f"{p}: {exc}") from exc

    feats = read("features.csv", np.float64)
    labels = read("labels.csv", np.int64).reshape(-1)
    attrs = read("attributes.csv", np.float64)
    names_path = csv_dir / "class_names.txt"
    names = None
    if names_path.exists():
        names = tuple(line.strip() for line in names_path.read_text().splitlines() if line.strip())
    present = set(labels.tolist())
    attr_only = frozenset(c for c in range(attrs.shape[0]) if c not in present)
    ds = FeatureDataset(feats, labels, attrs, names, attr_only)
    save_dataset(ds, out_dir)
    return ds


def generate_synthetic(num_classes: int, samples_per_class: int, d_x: int, d_a: int,
                       cluster_spread: float, seed: int) -> FeatureDataset:
    """Gaussian clusters around a fixed random linear image of each class attribute.

    Attributes are ``N(0, I)`` prototypes; features are drawn from
    ``N(P a_c, spread^2 I)`` where ``P`` has ``N(0, 1/d_a)`` entries.
    """
    if min(num_classes, samples_per_class, d_x, d_a) < 1:
        raise ConfigError("all synthetic dataset sizes must be >= 1")
    if cluster_spread <= 0:
        raise ConfigError("cluster_spread must be positive")
    rng = np.random.default_rng(seed)
    attrs = rng.standard_normal((num_classes, d_a))
    proj = rng.standard_normal((d_x, d_a)) / np.sqrt(d_a)
    centers = attrs @ proj.T
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    feats = centers[labels] + cluster_spread * rng.standard_normal((labels.size, d_x))
    return FeatureDataset(feats, labels, attrs)


@dataclass(frozen=True)
class TaskSplit:
    task_id: int
    train_indices: np.ndarray
    test_seen_indices: np.ndarray
    test_unseen_indices: np.ndarray
    seen_classes: frozenset[int]
    unseen_classes_visible: frozenset[int]
    # classes that first appear at this task (setting1: the task's group; setting2: seen+unseen groups)
    new_classes: frozenset[int] = frozenset()

    def __post_init__(self):
        for name in ("train_indices", "test_seen_indices", "test_unseen_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        test = set(self.test_seen_indices.tolist()) | set(self.test_unseen_indices.tolist())
        if test & set(self.train_indices.tolist()):
            raise DataError(f"task {self.task_id}: train and test indices overlap")
        if self.seen_classes & self.unseen_classes_visible:
            raise DataError(f"task {self.task_id}: a class is both seen and unseen")


@dataclass(frozen=True)
class TaskStream:
    setting: str
    tasks: tuple[TaskSplit, ...]
    num_classes: int

    def __post_init__(self):
        if self.setting not in (SETTING1, SETTING2):
            raise ConfigError(f"unknown setting {self.setting!r}")
        for i, task in enumerate(self.tasks, start=1):
            if task.task_id != i:
                raise DataError(f"task ids must run 1..T in order, found {task.task_id} at {i}")

    @property
    def total_tasks(self) -> int:
        return len(self.tasks)

    def task(self, t: int) -> TaskSplit:
        return self.tasks[t - 1]

    def label_space(self, t: int) -> list[int]:
        """Classes a single-head classifier must cover after task ``t``."""
        if self.setting == SETTING1:
            return list(range(self.num_classes))
        classes: set[int] = set()
        for task in self.tasks[:t]:
            classes |= task.seen_classes | task.unseen_classes_visible
        return sorted(classes)

    def seen_eval_classes(self, t: int) -> list[int]:
        if self.setting == SETTING1:
            return sorted(self.task(t).seen_classes)
        return sorted(set().union(*(task.seen_classes for task in self.tasks[:t])))

    def unseen_eval_classes(self, t: int) -> list[int]:
        if self.setting == SETTING1:
            return sorted(self.task(t).unseen_classes_visible)
        return sorted(set().union(*(task.unseen_classes_visible for task in self.tasks[:t])))

    def seen_pool(self, t: int) -> np.ndarray:
        """Test-seen sample indices of tasks ``<= t``."""
        return np.concatenate([task.test_seen_indices for task in self.tasks[:t]])

    def unseen_pool(self, t: int) -> np.ndarray:
        if self.setting == SETTING1:
            return self.task(t).test_unseen_indices
        return np.concatenate([task.test_unseen_indices for task in self.tasks[:t]])


def partition_sizes(n: int, parts: int) -> list[int]:
    """Near-equal sizes; the remainder goes one each to the earliest parts."""
    base, rem = divmod(n, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def _chunks(items: Sequence[int], parts: int) -> list[list[int]]:
    out, start = [], 0
    for size in partition_sizes(len(items), parts):
        out.append(list(items[start:start + size]))
        start += size
    return out


def holdout_count(n: int, test_fraction: float) -> int:
    """Test samples for a class of ``n``: floor of the fraction, at least one."""
    return max(1, int(np.floor(n * test_fraction + 1e-9)))


def _holdout(dataset: FeatureDataset, classes: Iterable[int], test_fraction: float,
             rng: np.random.Generator) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    train, test = {}, {}
    for c in sorted(classes):
        idx = dataset.indices_of(c)
        if idx.size < 2:
            raise ConfigError(f"class {c} has {idx.size} samples; need at least 2 to split")
        idx = rng.permutation(idx)
        k = holdout_count(idx.size, test_fraction)
        test[c], train[c] = np.sort(idx[:k]), np.sort(idx[k:])
    return train, test


def _gather(parts: dict[int, np.ndarray], classes: Iterable[int]) -> np.ndarray:
    arrays = [parts[c] for c in sorted(classes)]
    return np.concatenate(arrays) if arrays else np.zeros(0, dtype=np.int64)


def split_setting1(dataset: FeatureDataset, num_tasks: int, class_order_seed: int,
                   test_fraction: float = 0.2) -> TaskStream:
    """Classes of tasks ``<= t`` are seen at task ``t``; all later classes are unseen."""
    C = dataset.num_classes
    if not 1 <= num_tasks <= C:
        raise ConfigError(f"num_tasks={num_tasks} must be in [1, {C}]")
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(class_order_seed)
    order = rng.permutation(C).tolist()
    groups = _chunks(order, num_tasks)
    train, test = _holdout(dataset, range(C), test_fraction, rng)
    tasks = []
    for t, group in enumerate(groups, start=1):
        seen = frozenset(c for g in groups[:t] for c in g)
        future = frozenset(c for g in groups[t:] for c in g)
        unseen_idx = np.sort(np.concatenate([dataset.indices_of(c) for c in sorted(future)])) \
            if future else np.zeros(0, dtype=np.int64)
        tasks.append(TaskSplit(
            task_id=t,
            train_indices=_gather(train, group),
            test_seen_indices=_gather(test, group),
            test_unseen_indices=unseen_idx,
            seen_classes=seen,
            unseen_classes_visible=future,
            new_classes=frozenset(group),
        ))
    return TaskStream(SETTING1, tuple(tasks), C)


def split_setting2(dataset: FeatureDataset, num_tasks: int, seen_classes: Sequence[int],
                   unseen_classes: Sequence[int], seed: int,
                   test_fraction: float = 0.2) -> TaskStream:
    """Every task carries its own seen and unseen groups of the standard split."""
    seen_set, unseen_set = set(seen_classes), set(unseen_classes)
    if seen_set & unseen_set:
        raise ConfigError("seen and unseen class sets overlap")
    if seen_set | unseen_set != set(range(dataset.num_classes)):
        raise ConfigError("seen and unseen classes must cover every class")
    if num_tasks < 1 or num_tasks > min(len(seen_set), len(unseen_set)):
        raise ConfigError(
            f"num_tasks={num_tasks} leaves a task without seen or unseen classes "
            f"({len(seen_set)} seen, {len(unseen_set)} unseen)"
        )
    rng = np.random.default_rng(seed)
    seen_groups = _chunks(rng.permutation(sorted(seen_set)).tolist(), num_tasks)
    unseen_groups = _chunks(rng.permutation(sorted(unseen_set)).tolist(), num_tasks)
    train, test = _holdout(dataset, seen_set, test_fraction, rng)
    tasks = []
    for t, (sg, ug) in enumerate(zip(seen_groups, unseen_groups), start=1):
        unseen_idx = [dataset.indices_of(c) for c in sorted(ug)]
        if any(i.size == 0 for i in unseen_idx):
            raise ConfigError(f"task {t}: an unseen class has no test samples")
        tasks.append(TaskSplit(
            task_id=t,
            train_indices=_gather(train, sg),
            test_seen_indices=_gather(test, sg),
            test_unseen_indices=np.sort(np.concatenate(unseen_idx)),
            seen_classes=frozenset(sg),
            unseen_classes_visible=frozenset(ug),
            new_classes=frozenset(sg) | frozenset(ug),
        ))
    return TaskStream(SETTING2, tuple(tasks), dataset.num_classes)


def task_groups(stream: TaskStream) -> list[list[int]]:
    """Per-task seen-class groups (the classes whose test-seen data each task owns)."""
    if stream.setting == SETTING1:
        return [sorted(t.new_classes) for t in stream.tasks]
    return [sorted(t.seen_classes) for t in stream.tasks]
