"""Experiment orchestration: stream construction, per-task training, evaluation, checkpoints."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, rng_from_state, rng_state, save_checkpoint
from .classifier import LinearSoftmaxClassifier, extend_classes, fit_classifier
from .config import ExperimentConfig
from .data import (FeatureDataset, TaskStream, generate_synthetic, load_dataset, split_setting1,
                   split_setting2)
from .errors import CZSLError, ConfigError, IntegrityError
from .evaluation import MetricsReport, TaskEval, accuracy_row, evaluate_task
from .memory import EpisodicMemory, build_memory
from .models import (CadaModel, CvaeModel, build_model, generate_features_cvae,
                     generate_latents_cada, train_task, training_set)
from .numeric import Layer, MlpNet

log = logging.getLogger(__name__)

RNG_STREAMS = ("init", "train", "memory", "generate", "classifier")
SWEEP_AXES = ("memory_per_class", "latent_dim")


def load_data(config: ExperimentConfig) -> FeatureDataset:
    ds = config.dataset
    if ds.path is not None:
        return load_dataset(ds.path)
    s = ds.synthetic
    return generate_synthetic(s.num_classes, s.samples_per_class, s.d_x, s.d_a,
                              s.cluster_spread, s.seed)


def build_stream(config: ExperimentConfig, dataset: FeatureDataset) -> TaskStream:
    if config.setting == 1:
        return split_setting1(dataset, config.num_tasks, config.split_seed, config.test_fraction)
    C = dataset.num_classes
    if config.unseen_classes is not None:
        unseen = sorted(config.unseen_classes)
    else:
        k = max(config.num_tasks, int(round(C * config.unseen_fraction)))
        unseen = sorted(np.random.default_rng(config.split_seed + 7919).permutation(C)[:k].tolist())
    seen = [c for c in range(C) if c not in set(unseen)]
    return split_setting2(dataset, config.num_tasks, seen, unseen, config.split_seed,
                          config.test_fraction)


def _nets_state(model) -> dict:
    return {name: [{"weight": l.weight, "bias": l.bias, "activation": l.activation}
                   for l in net.layers] for name, net in model.nets().items()}


def _restore_nets(model, state: dict):
    for name, layers in state.items():
        setattr(model, name, MlpNet([Layer(l["weight"], l["bias"], l["activation"]) for l in layers]))


@dataclass
class Experiment:
    """One continual run. ``state`` is everything a checkpoint must carry."""

    config: ExperimentConfig
    dataset: FeatureDataset = None
    stream: TaskStream = None
    model: CadaModel | CvaeModel = None
    memory: EpisodicMemory | None = None
    classifier: LinearSoftmaxClassifier = None
    rngs: dict = field(default_factory=dict)
    task_evals: list[TaskEval] = field(default_factory=list)
    accuracy_matrix: list[list[float]] = field(default_factory=list)
    completed: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        cfg = self.config.validate()
        if self.dataset is None:
            self.dataset = load_data(cfg)
        self.stream = build_stream(cfg, self.dataset)
        seeds = np.random.SeedSequence(cfg.train.seed).spawn(len(RNG_STREAMS))
        self.rngs = {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(RNG_STREAMS, seeds)}
        loss = cfg.train.loss_kwargs()
        self.model = build_model(cfg.model, self.dataset.feature_dim, self.dataset.attribute_dim,
                                 cfg.latent_dim, self.rngs["init"], tuple(cfg.encoder_hidden),
                                 tuple(cfg.decoder_hidden), **loss)
        self.memory = build_memory(cfg.memory.strategy, cfg.memory.samples_per_class,
                                   self.dataset.num_classes, cfg.memory.mem_size)
        in_dim = cfg.latent_dim if cfg.model == "cada" else self.dataset.feature_dim
        self.classifier = LinearSoftmaxClassifier.empty(in_dim)

    @property
    def total_tasks(self) -> int:
        return self.stream.total_tasks

    def predict(self, features: np.ndarray) -> np.ndarray:
        if isinstance(self.model, CadaModel):
            return self.classifier.predict(self.model.encode_features(features))
        return self.classifier.predict(features)

    def step(self):
        """Train, generate, fit the classifier and evaluate the next task."""
        cfg = self.config
        t = self.completed + 1
        task = self.stream.task(t)
        teacher = self.model.teacher() if (t > 1 and cfg.train.kd_enabled) else None
        gen_feats, gen_labels = training_set(task, self.dataset, self.memory, cfg.train.replay_enabled)
        result = train_task(self.model, task, self.dataset, self.memory, teacher, cfg.train,
                            self.rngs["train"], self.rngs["memory"], self.trace)
        self.trace.append(("train_done", t, len(result.epoch_losses)))

        label_space = self.stream.label_space(t)
        clf = self.classifier
        if not cfg.classifier.warm_start:
            clf = LinearSoftmaxClassifier.empty(clf.input_dim)
        new_ids = [c for c in label_space if c not in set(clf.class_ids)]
        clf = extend_classes(clf, new_ids, self.rngs["classifier"])

        gen = self.rngs["generate"]
        counts = cfg.generation
        if isinstance(self.model, CadaModel):
            attr_classes = sorted(set(label_space) - set(np.unique(gen_labels).tolist()))
            z, y = generate_latents_cada(self.model, gen_feats, gen_labels, attr_classes,
                                         self.dataset.attributes, counts, gen)
        else:
            z, y = generate_features_cvae(self.model, label_space, self.dataset.attributes,
                                          counts.unseen_per_class, gen)
        self.classifier = fit_classifier(clf, z, y, cfg.classifier, self.rngs["classifier"])

        ev = evaluate_task(self.predict, self.classifier.class_ids, self.dataset, self.stream, t)
        self.task_evals.append(ev)
        self.accuracy_matrix.append(accuracy_row(self.predict, self.dataset, self.stream, t))
        self.completed = t
        log.info("task %d/%d: seen=%.4f unseen=%s H=%s", t, self.total_tasks, ev.seen_acc,
                 ev.unseen_acc, ev.harmonic)
        return ev

    def report(self) -> MetricsReport:
        setting = self.stream.setting
        return MetricsReport.build(setting, self.task_evals, self.accuracy_matrix, self.config.label)

    def run(self, stop_after: int | None = None, checkpoint_dir=None) -> MetricsReport:
        last = self.total_tasks if stop_after is None else min(stop_after, self.total_tasks)
        while self.completed < last:
            t = self.completed + 1
            try:
                self.step()
            except CZSLError as exc:
                raise type(exc)(f"task {t}: {exc}") from exc
            if checkpoint_dir is not None:
                self.save(Path(checkpoint_dir) / f"task_{self.completed:03d}.json")
        return self.report()

    def checkpoint_payload(self) -> dict:
        return {
            "config_hash": self.config.config_hash(),
            "config": self.config.to_dict(),
            "completed_task": self.completed,
            "model": _nets_state(self.model),
            "memory": self.memory.to_dict() if self.memory is not None else None,
            "classifier": {"weight": self.classifier.weight, "bias": self.classifier.bias,
                           "class_ids": list(self.classifier.class_ids)},
            "task_evals": [e.to_dict() for e in self.task_evals],
            "accuracy_matrix": self.accuracy_matrix,
            "rng_states": {k: rng_state(g) for k, g in self.rngs.items()},
        }

    def save(self, path) -> Path:
        return save_checkpoint(path, self.checkpoint_payload())

    def restore(self, payload: dict):
        if payload["config_hash"] != self.config.config_hash():
            raise ConfigError("checkpoint was produced by a different configuration; refusing to resume")
        _restore_nets(self.model, payload["model"])
        if payload["memory"] is not None:
            self.memory = EpisodicMemory.from_dict(payload["memory"])
        c = payload["classifier"]
        self.classifier = LinearSoftmaxClassifier(
            np.asarray(c["weight"]).reshape(len(c["class_ids"]), -1) if c["class_ids"] else
            np.zeros((0, self.classifier.input_dim)), c["bias"], c["class_ids"])
        self.task_evals = [TaskEval.from_dict(e) for e in payload["task_evals"]]
        self.accuracy_matrix = [list(r) for r in payload["accuracy_matrix"]]
        self.rngs = {k: rng_from_state(s) for k, s in payload["rng_states"].items()}
        self.completed = int(payload["completed_task"])
        return self

    @classmethod
    def resume(cls, config: ExperimentConfig, checkpoint_path) -> "Experiment":
        return cls(config).restore(load_checkpoint(checkpoint_path))


def report_from_checkpoint(path) -> MetricsReport:
    payload = load_checkpoint(path)
    try:
        setting = "setting%d" % payload["config"]["setting"]
        evals = [TaskEval.from_dict(e) for e in payload["task_evals"]]
    except (KeyError, TypeError) as exc:
        raise IntegrityError(f"checkpoint {path} lacks report fields: {exc}") from exc
    return MetricsReport.build(setting, evals, payload["accuracy_matrix"],
                               payload["config"].get("label", ""))


def emit_report(report: MetricsReport, out_dir, formats=("json", "csv", "plotdata"),
                stem: str = "report") -> dict[str, Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = {}
        for fmt in formats:
            if fmt == "json":
                path, text = out_dir / f"{stem}.json", report.to_json()
            elif fmt == "csv":
                path, text = out_dir / f"{stem}.csv", report.to_csv()
            elif fmt == "plotdata":
                path, text = out_dir / f"{stem}.plotdata.tsv", plotdata_text(report.plot_rows())
            else:
                raise ConfigError(f"unknown report format {fmt!r}")
            path.write_text(text, encoding="utf-8")
            written[fmt] = path
    except OSError as exc:
        raise CZSLError(f"cannot write report to {out_dir}: {exc}") from exc
    return written


def plotdata_text(rows) -> str:
    lines = ["x\tseries\tvalue"]
    lines += [f"{x}\t{series}\t{float(v)!r}" for x, series, v in rows]
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, checkpoints: bool = True,
                   stop_after: int | None = None) -> MetricsReport:
    """Run (or partially run) one experiment and, with an output dir, write its artifacts."""
    exp = Experiment(config)
    ckpt_dir = None
    if config.output_dir is not None and checkpoints:
        ckpt_dir = Path(config.output_dir) / "checkpoints"
    report = exp.run(stop_after=stop_after, checkpoint_dir=ckpt_dir)
    if config.output_dir is not None:
        emit_report(report, config.output_dir)
    return report


def resume_experiment(config: ExperimentConfig, checkpoint_path, checkpoints: bool = True) -> MetricsReport:
    exp = Experiment.resume(config, checkpoint_path)
    ckpt_dir = None
    if config.output_dir is not None and checkpoints:
        ckpt_dir = Path(config.output_dir) / "checkpoints"
    report = exp.run(checkpoint_dir=ckpt_dir)
    if config.output_dir is not None:
        emit_report(report, config.output_dir)
    return report


def with_axis_value(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    cfg = copy.deepcopy(config)
    if axis == "memory_per_class":
        cfg.memory.samples_per_class = int(value)
        cfg.memory.mem_size = None
    elif axis == "latent_dim":
        cfg.latent_dim = int(value)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if cfg.output_dir is not None:
        cfg.output_dir = str(Path(config.output_dir) / f"{axis}_{value}")
    return cfg.validate()


@dataclass
class SweepReport:
    axis: str
    values: list
    reports: list[MetricsReport]

    def plot_rows(self) -> list[tuple]:
        rows = []
        for v, r in zip(self.values, self.reports):
            for name in ("mSA", "mUA", "mH", "forgetting"):
                val = getattr(r, name)
                if val is not None:
                    rows.append((v, name, val))
        return rows

    def to_dict(self) -> dict:
        return {"axis": self.axis, "values": list(self.values),
                "reports": [r.to_dict() for r in self.reports]}


def sweep(config: ExperimentConfig, axis: str, values) -> SweepReport:
    """One run per value with shared seeds; merged plotdata goes to ``output_dir``."""
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    reports = [run_experiment(with_axis_value(config, axis, v)) for v in values]
    out = SweepReport(axis, values, reports)
    if config.output_dir is not None:
        d = Path(config.output_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"sweep_{axis}.plotdata.tsv").write_text(plotdata_text(out.plot_rows()), encoding="utf-8")
    return out
