"""Bounded episodic memory for experience replay.

Three populating strategies are supported:

* ``reservoir``: one shared store of ``mem_size`` entries filled by Vitter's
  algorithm R, so every offered entry survives with probability ``mem_size / n``.
* ``ring_buffer``: a FIFO of ``queue_size`` per class keeping the most recent entries.
* ``mean_of_features``: ``queue_size`` slots per class holding the entries
  closest to the class's running feature mean. Only the stored entries and
  the incoming one compete on each offer, so memory stays bounded.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cmp_to_key

import numpy as np

from .errors import ConfigError, UsageError

RESERVOIR = "reservoir"
RING_BUFFER = "ring_buffer"
MEAN_OF_FEATURES = "mean_of_features"
STRATEGIES = (RESERVOIR, RING_BUFFER, MEAN_OF_FEATURES)
# distances this close (relative) count as equal, so exact ties are not decided by rounding
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class MemoryEntry:
    feature: np.ndarray
    label: int
    attribute: np.ndarray
    task_id: int

    def __post_init__(self):
        for name in ("feature", "attribute"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"memory entry {name} is not finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "task_id", int(self.task_id))


class EpisodicMemory:
    def __init__(self, strategy: str, mem_size: int | None = None, queue_size: int | None = None):
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown memory strategy {strategy!r}")
        if strategy == RESERVOIR:
            if mem_size is None or mem_size < 1:
                raise ConfigError("reservoir memory needs mem_size >= 1")
        elif queue_size is None or queue_size < 1:
            raise ConfigError(f"{strategy} memory needs queue_size >= 1")
        self.strategy = strategy
        self.mem_size = mem_size
        self.queue_size = queue_size
        self.stream_count = 0
        self._seq = 0
        # reservoir: list of (seq, entry); per-class strategies: class -> deque/list of (seq, entry)
        self._slots: list[tuple[int, MemoryEntry]] = []
        self._queues: dict[int, deque] = {}
        self._stored: dict[int, list[tuple[int, MemoryEntry]]] = {}
        self._means: dict[int, tuple[np.ndarray, int]] = {}

    def __len__(self) -> int:
        if self.strategy == RESERVOIR:
            return len(self._slots)
        if self.strategy == RING_BUFFER:
            return sum(len(q) for q in self._queues.values())
        return sum(len(s) for s in self._stored.values())

    def bound(self, num_classes: int | None = None) -> int | None:
        """Maximum number of entries this memory may hold."""
        if self.strategy == RESERVOIR:
            return self.mem_size
        if num_classes is None:
            return None
        return self.queue_size * num_classes

    def offer(self, entry: MemoryEntry, rng: np.random.Generator | None = None):
        if self.strategy == RESERVOIR:
            if rng is None:
                raise UsageError("reservoir sampling needs a random generator")
            return reservoir_offer(self, entry, rng)
        if self.strategy == RING_BUFFER:
            return ring_buffer_offer(self, entry)
        return mof_offer(self, entry)

    def class_mean(self, label: int) -> np.ndarray | None:
        if label not in self._means:
            return None
        return self._means[label][0].copy()

    def _require(self, strategy: str):
        if self.strategy != strategy:
            raise UsageError(f"{strategy} offer on a {self.strategy} memory")

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _tagged(self) -> list[tuple[int, MemoryEntry]]:
        if self.strategy == RESERVOIR:
            return list(self._slots)
        if self.strategy == RING_BUFFER:
            return [item for q in self._queues.values() for item in q]
        return [item for s in self._stored.values() for item in s]

    def to_dict(self) -> dict:
        """Plain-data form for checkpoints (arrays stay numpy; the caller encodes them)."""
        def enc(items):
            return [{"seq": s, "feature": e.feature, "label": e.label,
                     "attribute": e.attribute, "task_id": e.task_id} for s, e in items]

        out = {"strategy": self.strategy, "mem_size": self.mem_size, "queue_size": self.queue_size,
               "stream_count": self.stream_count, "seq": self._seq}
        if self.strategy == RESERVOIR:
            out["slots"] = enc(self._slots)
        elif self.strategy == RING_BUFFER:
            out["queues"] = {str(c): enc(q) for c, q in sorted(self._queues.items())}
        else:
            out["stored"] = {str(c): enc(s) for c, s in sorted(self._stored.items())}
            out["means"] = {str(c): {"mean": m, "count": n} for c, (m, n) in sorted(self._means.items())}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodicMemory":
        mem = cls(d["strategy"], d["mem_size"], d["queue_size"])
        mem.stream_count = d["stream_count"]
        mem._seq = d["seq"]

        def dec(items):
            return [(it["seq"], MemoryEntry(it["feature"], it["label"], it["attribute"], it["task_id"]))
                    for it in items]

        if mem.strategy == RESERVOIR:
            mem._slots = dec(d["slots"])
        elif mem.strategy == RING_BUFFER:
            mem._queues = {int(c): deque(dec(q), maxlen=mem.queue_size) for c, q in d["queues"].items()}
        else:
            mem._stored = {int(c): dec(s) for c, s in d["stored"].items()}
            mem._means = {int(c): (np.array(v["mean"], dtype=np.float64), int(v["count"]))
                          for c, v in d["means"].items()}
        return mem


def reservoir_offer(memory: EpisodicMemory, entry: MemoryEntry, rng: np.random.Generator):
    memory._require(RESERVOIR)
    memory.stream_count += 1
    seq = memory._next_seq()
    if len(memory._slots) < memory.mem_size:
        memory._slots.append((seq, entry))
    else:
        j = int(rng.integers(0, memory.stream_count))
        if j < memory.mem_size:
            memory._slots[j] = (seq, entry)
    return memory


def ring_buffer_offer(memory: EpisodicMemory, entry: MemoryEntry):
    memory._require(RING_BUFFER)
    memory.stream_count += 1
    q = memory._queues.setdefault(entry.label, deque(maxlen=memory.queue_size))
    q.append((memory._next_seq(), entry))
    return memory


def mof_offer(memory: EpisodicMemory, entry: MemoryEntry):
    memory._require(MEAN_OF_FEATURES)
    memory.stream_count += 1
    c = entry.label
    mean, count = memory._means.get(c, (np.zeros_like(entry.feature), 0))
    count += 1
    mean = mean + (entry.feature - mean) / count
    memory._means[c] = (mean, count)
    candidates = memory._stored.get(c, []) + [(memory._next_seq(), entry)]
    dist = {seq: float(np.linalg.norm(e.feature - mean)) for seq, e in candidates}

    def closer(a, b):
        da, db = dist[a[0]], dist[b[0]]
        if abs(da - db) <= TIE_RTOL * max(da, db):
            return b[0] - a[0]          # tie: newer first
        return -1 if da < db else 1

    ranked = sorted(candidates, key=cmp_to_key(closer))
    kept = ranked[:memory.queue_size]
    memory._stored[c] = sorted(kept, key=lambda item: item[0])
    return memory


def memory_snapshot(memory: EpisodicMemory) -> list[MemoryEntry]:
    """Current contents ordered by class, then insertion order."""
    items = sorted(memory._tagged(), key=lambda item: (item[1].label, item[0]))
    return [e for _, e in items]


def build_memory(strategy: str, samples_per_class: int, num_classes: int,
                 mem_size: int | None = None) -> EpisodicMemory | None:
    """Memory with a per-class budget; reservoir capacity defaults to ``C * samples_per_class``."""
    if strategy == "none":
        return None
    if strategy == RESERVOIR:
        return EpisodicMemory(RESERVOIR, mem_size=mem_size or samples_per_class * num_classes)
    return EpisodicMemory(strategy, queue_size=samples_per_class)
