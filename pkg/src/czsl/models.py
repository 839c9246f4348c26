"""CADA- and CVAE-style models trained continually with replay and distillation.

Both models expose the same small surface used by :func:`train_task`:
``params()``, ``draw_noise()``, ``objective()`` and ``teacher()``. A loss
evaluation returns a :class:`LossResult` with analytic gradients for every
trainable network; nothing here depends on an autodiff library.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .data import FeatureDataset, TaskSplit
from .errors import DataError, NumericError, UsageError, ShapeError
from .memory import EpisodicMemory, MemoryEntry, memory_snapshot
from .numeric import AdamState, GaussianLatent, MlpNet, adam_step, reparameterize, split_latent

RECON_KINDS = ("l1", "l2")


@dataclass
class LossResult:
    total: float
    parts: dict[str, float]
    grads: dict[str, list[np.ndarray]]


@dataclass(frozen=True)
class FrozenTeacher:
    """Read-only copies of the previous task's encoders."""

    nets: Mapping[str, MlpNet]

    @classmethod
    def from_nets(cls, nets: dict[str, MlpNet]) -> "FrozenTeacher":
        return cls(MappingProxyType({k: v.copy().freeze() for k, v in nets.items()}))

    def __getitem__(self, name: str) -> MlpNet:
        return self.nets[name]


def _recon(target: np.ndarray, pred: np.ndarray, kind: str):
    """Per-sample L1 (or squared L2) norm averaged over the batch, plus d/dpred."""
    diff = pred - target
    B = diff.shape[0]
    if kind == "l1":
        return float(np.abs(diff).sum(axis=1).mean()), np.sign(diff) / B
    return float((diff ** 2).sum(axis=1).mean()), 2.0 * diff / B


def _kl_grads(latent: GaussianLatent):
    """Batch-mean KL to N(0, I) and its gradients w.r.t. mu and log_var."""
    B = latent.mu.shape[0]
    ev = np.exp(latent.log_var)
    value = float((-0.5 * np.sum(1.0 + latent.log_var - latent.mu ** 2 - ev, axis=1)).mean())
    return value, latent.mu / B, 0.5 * (ev - 1.0) / B


@dataclass
class DaResult:
    value: float
    d_mu_f: np.ndarray
    d_log_var_f: np.ndarray
    d_mu_a: np.ndarray
    d_log_var_a: np.ndarray


def da_loss(latent_f: GaussianLatent, latent_a: GaussianLatent) -> DaResult:
    """Batch mean of the 2-Wasserstein distance between two diagonal Gaussians."""
    if latent_f.mu.shape != latent_a.mu.shape:
        raise ShapeError(f"latent shapes differ: {latent_f.mu.shape} vs {latent_a.mu.shape}")
    mu_f, mu_a = np.atleast_2d(latent_f.mu), np.atleast_2d(latent_a.mu)
    s_f, s_a = np.atleast_2d(latent_f.std), np.atleast_2d(latent_a.std)
    B = mu_f.shape[0]
    dmu = mu_a - mu_f
    ds = s_a - s_f
    dist = np.sqrt((dmu ** 2).sum(axis=1) + (ds ** 2).sum(axis=1))
    # sqrt is not differentiable at 0; use the zero subgradient there
    inv = np.divide(1.0, dist, out=np.zeros_like(dist), where=dist > 0)[:, None] / B
    g_mu_a = dmu * inv
    g_s_a = ds * inv
    return DaResult(float(dist.mean()), -g_mu_a, -g_s_a * 0.5 * s_f, g_mu_a, g_s_a * 0.5 * s_a)


def _kd_term(student_out: np.ndarray, teacher_out: np.ndarray):
    """Mean absolute difference over encoder outputs, batch-averaged, with d/dstudent."""
    diff = student_out - teacher_out
    B, D = diff.shape
    return float(np.abs(diff).mean(axis=1).mean()), np.sign(diff) / (B * D)


def _latent_upstream(latent_grad_mu, latent_grad_lv, mask):
    return np.concatenate([latent_grad_mu, latent_grad_lv * mask], axis=1)


def _init_net(sizes, rng):
    return MlpNet.init(sizes, rng, hidden_activation="relu", output_activation="linear")


@dataclass
class CadaModel:
    feature_encoder: MlpNet
    attribute_encoder: MlpNet
    feature_decoder: MlpNet
    attribute_decoder: MlpNet
    latent_dim: int
    gamma: float = 1.0
    delta: float = 1.0
    kd_weight: float = 1.0
    recon: str = "l1"

    NETS = ("feature_encoder", "attribute_encoder", "feature_decoder", "attribute_decoder")
    TEACHER_NETS = ("feature_encoder", "attribute_encoder")

    def __post_init__(self):
        L = self.latent_dim
        if self.feature_encoder.output_dim != 2 * L or self.attribute_encoder.output_dim != 2 * L:
            raise ShapeError("encoders must emit 2 * latent_dim values")
        if self.feature_decoder.input_dim != L or self.attribute_decoder.input_dim != L:
            raise ShapeError("decoders must take latent_dim inputs")
        if min(self.gamma, self.delta, self.kd_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.recon not in RECON_KINDS:
            raise ValueError(f"recon must be one of {RECON_KINDS}")

    @classmethod
    def build(cls, d_x: int, d_a: int, latent_dim: int, rng: np.random.Generator,
              encoder_hidden=(64,), decoder_hidden=(64,), **loss) -> "CadaModel":
        L = latent_dim
        return cls(
            _init_net([d_x, *encoder_hidden, 2 * L], rng),
            _init_net([d_a, *encoder_hidden, 2 * L], rng),
            _init_net([L, *decoder_hidden, d_x], rng),
            _init_net([L, *decoder_hidden, d_a], rng),
            L, **loss)

    @property
    def feature_dim(self) -> int:
        return self.feature_encoder.input_dim

    @property
    def attribute_dim(self) -> int:
        return self.attribute_encoder.input_dim

    def nets(self) -> dict[str, MlpNet]:
        return {name: getattr(self, name) for name in self.NETS}

    def params(self) -> list[np.ndarray]:
        return [p for name in self.NETS for p in getattr(self, name).params()]

    def flat_grads(self, grads: dict[str, list[np.ndarray]]) -> list[np.ndarray]:
        return [g for name in self.NETS for g in grads[name]]

    def draw_noise(self, batch: int, rng: np.random.Generator):
        return (rng.standard_normal((batch, self.latent_dim)),
                rng.standard_normal((batch, self.latent_dim)))

    def teacher(self) -> FrozenTeacher:
        return FrozenTeacher.from_nets({n: getattr(self, n) for n in self.TEACHER_NETS})

    def encode_features(self, x: np.ndarray) -> np.ndarray:
        """Latent means used at test time."""
        return self.feature_encoder.forward(x)[:, :self.latent_dim]

    def objective(self, x, a, noise, teacher: FrozenTeacher | None = None) -> LossResult:
        return total_loss_cada(self, x, a, noise, teacher)


def _cada_terms(model: CadaModel, x, a, noise, teacher, w_vae, w_ca, w_da, w_kd) -> LossResult:
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if x.shape[0] != a.shape[0]:
        raise ShapeError(f"{x.shape[0]} feature rows vs {a.shape[0]} attribute rows")
    eps_f, eps_a = noise
    kind = model.recon
    enc_f, enc_a = model.feature_encoder, model.attribute_encoder
    dec_f, dec_a = model.feature_decoder, model.attribute_decoder

    h_f, c_enc_f = enc_f.forward_cached(x)
    h_a, c_enc_a = enc_a.forward_cached(a)
    lat_f, mask_f = split_latent(h_f)
    lat_a, mask_a = split_latent(h_a)
    z_f = reparameterize(lat_f, eps_f)
    z_a = reparameterize(lat_a, eps_a)

    x_rec, c_xx = dec_f.forward_cached(z_f)
    a_rec, c_aa = dec_a.forward_cached(z_a)
    a_cross, c_xa = dec_a.forward_cached(z_f)
    x_cross, c_ax = dec_f.forward_cached(z_a)

    rec_x, g_xx = _recon(x, x_rec, kind)
    rec_a, g_aa = _recon(a, a_rec, kind)
    kl_f, gkl_mu_f, gkl_lv_f = _kl_grads(lat_f)
    kl_a, gkl_mu_a, gkl_lv_a = _kl_grads(lat_a)
    ca_a, g_xa = _recon(a, a_cross, kind)
    ca_x, g_ax = _recon(x, x_cross, kind)
    da = da_loss(lat_f, lat_a)

    parts = {
        "vae": rec_x + rec_a + kl_f + kl_a,
        "ca": ca_a + ca_x,
        "da": da.value,
        "kd": 0.0,
    }
    g_hf_kd = g_ha_kd = 0.0
    if teacher is not None:
        kd_f, g_hf_kd = _kd_term(h_f, teacher["feature_encoder"].forward(x))
        kd_a, g_ha_kd = _kd_term(h_a, teacher["attribute_encoder"].forward(a))
        parts["kd"] = kd_f + kd_a
    elif w_kd:
        raise UsageError("knowledge distillation needs a teacher")

    grads = {}
    dxx, dz_f_1 = dec_f.backward(c_xx, w_vae * g_xx)
    dax, dz_a_1 = dec_f.backward(c_ax, w_ca * g_ax)
    grads["feature_decoder"] = [p + q for p, q in zip(dxx, dax)]
    daa, dz_a_2 = dec_a.backward(c_aa, w_vae * g_aa)
    dxa, dz_f_2 = dec_a.backward(c_xa, w_ca * g_xa)
    grads["attribute_decoder"] = [p + q for p, q in zip(daa, dxa)]

    dz_f = dz_f_1 + dz_f_2
    dz_a = dz_a_1 + dz_a_2
    # z = mu + exp(lv / 2) * eps
    dmu_f = dz_f + w_vae * gkl_mu_f + w_da * da.d_mu_f
    dlv_f = dz_f * eps_f * 0.5 * lat_f.std + w_vae * gkl_lv_f + w_da * da.d_log_var_f
    dmu_a = dz_a + w_vae * gkl_mu_a + w_da * da.d_mu_a
    dlv_a = dz_a * eps_a * 0.5 * lat_a.std + w_vae * gkl_lv_a + w_da * da.d_log_var_a

    up_f = _latent_upstream(dmu_f, dlv_f, mask_f) + w_kd * g_hf_kd
    up_a = _latent_upstream(dmu_a, dlv_a, mask_a) + w_kd * g_ha_kd
    grads["feature_encoder"] = enc_f.backward(c_enc_f, up_f)[0]
    grads["attribute_encoder"] = enc_a.backward(c_enc_a, up_a)[0]

    total = w_vae * parts["vae"] + w_ca * parts["ca"] + w_da * parts["da"] + w_kd * parts["kd"]
    if not np.isfinite(total):
        raise NumericError(f"CADA loss is not finite: {parts}")
    return LossResult(float(total), parts, grads)


def vae_loss(model: CadaModel, x, a, noise) -> LossResult:
    """Feature VAE plus attribute VAE: reconstruction + KL for each branch."""
    return _cada_terms(model, x, a, noise, None, 1.0, 0.0, 0.0, 0.0)


def ca_loss(model: CadaModel, x, a, noise) -> LossResult:
    """Cross-reconstruction: decode each modality from the other's latent sample."""
    return _cada_terms(model, x, a, noise, None, 0.0, 1.0, 0.0, 0.0)


def da_term(model: CadaModel, x, a, noise=None) -> LossResult:
    """Distribution alignment evaluated through the encoders (noise is unused)."""
    noise = noise if noise is not None else _zero_noise(model, len(x))
    return _cada_terms(model, x, a, noise, None, 0.0, 0.0, 1.0, 0.0)


def kd_loss(model: CadaModel, teacher: FrozenTeacher | None, x, a) -> LossResult:
    """Distillation of both encoders towards the previous task's copies."""
    if teacher is None:
        raise UsageError("knowledge distillation needs a teacher (task >= 2)")
    return _cada_terms(model, x, a, _zero_noise(model, len(x)), teacher, 0.0, 0.0, 0.0, 1.0)


def total_loss_cada(model: CadaModel, x, a, noise, teacher: FrozenTeacher | None = None) -> LossResult:
    """VAE + gamma * CA + delta * DA + kd_weight * KD; the KD term is 0 without a teacher."""
    w_kd = model.kd_weight if teacher is not None else 0.0
    return _cada_terms(model, x, a, noise, teacher, 1.0, model.gamma, model.delta, w_kd)


def _zero_noise(model, batch):
    z = np.zeros((batch, model.latent_dim))
    return z, z


@dataclass
class CvaeModel:
    """Conditional VAE: encoder on ``x || a``, decoder on ``z || a``."""

    encoder: MlpNet
    decoder: MlpNet
    latent_dim: int
    kd_weight: float = 1.0
    recon: str = "l1"

    NETS = ("encoder", "decoder")
    TEACHER_NETS = ("encoder",)

    def __post_init__(self):
        if self.encoder.output_dim != 2 * self.latent_dim:
            raise ShapeError("encoder must emit 2 * latent_dim values")
        d_a = self.encoder.input_dim - self.decoder.output_dim
        if d_a < 0 or self.decoder.input_dim != self.latent_dim + d_a:
            raise ShapeError("conditional dims do not chain between encoder and decoder")
        if self.kd_weight < 0:
            raise ValueError("kd_weight must be non-negative")
        if self.recon not in RECON_KINDS:
            raise ValueError(f"recon must be one of {RECON_KINDS}")

    @classmethod
    def build(cls, d_x: int, d_a: int, latent_dim: int, rng: np.random.Generator,
              encoder_hidden=(64,), decoder_hidden=(64,), kd_weight: float = 1.0,
              recon: str = "l1", **_unused) -> "CvaeModel":
        return cls(_init_net([d_x + d_a, *encoder_hidden, 2 * latent_dim], rng),
                   _init_net([latent_dim + d_a, *decoder_hidden, d_x], rng),
                   latent_dim, kd_weight, recon)

    @property
    def feature_dim(self) -> int:
        return self.decoder.output_dim

    @property
    def attribute_dim(self) -> int:
        return self.encoder.input_dim - self.decoder.output_dim

    def nets(self) -> dict[str, MlpNet]:
        return {"encoder": self.encoder, "decoder": self.decoder}

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def flat_grads(self, grads):
        return grads["encoder"] + grads["decoder"]

    def draw_noise(self, batch: int, rng: np.random.Generator):
        return rng.standard_normal((batch, self.latent_dim))

    def teacher(self) -> FrozenTeacher:
        return FrozenTeacher.from_nets({"encoder": self.encoder})

    def objective(self, x, a, noise, teacher: FrozenTeacher | None = None) -> LossResult:
        return cvae_loss(self, x, a, noise, teacher)


def cvae_loss(model: CvaeModel, x, a, noise, teacher: FrozenTeacher | None = None) -> LossResult:
    """Reconstruction + KL + kd_weight * |enc(x||a) - enc_prev(x||a)|."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if x.shape[0] != a.shape[0]:
        raise ShapeError(f"{x.shape[0]} feature rows vs {a.shape[0]} attribute rows")
    L = model.latent_dim
    xa = np.concatenate([x, a], axis=1)
    h, c_enc = model.encoder.forward_cached(xa)
    lat, mask = split_latent(h)
    z = reparameterize(lat, noise)
    x_rec, c_dec = model.decoder.forward_cached(np.concatenate([z, a], axis=1))
    rec, g_rec = _recon(x, x_rec, model.recon)
    kl, gkl_mu, gkl_lv = _kl_grads(lat)
    parts = {"recon": rec, "kl": kl, "kd": 0.0}
    w_kd = 0.0
    g_kd = 0.0
    if teacher is not None:
        parts["kd"], g_kd = _kd_term(h, teacher["encoder"].forward(xa))
        w_kd = model.kd_weight

    g_dec, g_za = model.decoder.backward(c_dec, g_rec)
    dz = g_za[:, :L]
    dmu = dz + gkl_mu
    dlv = dz * noise * 0.5 * lat.std + gkl_lv
    g_enc = model.encoder.backward(c_enc, _latent_upstream(dmu, dlv, mask) + w_kd * g_kd)[0]
    total = rec + kl + w_kd * parts["kd"]
    if not np.isfinite(total):
        raise NumericError(f"CVAE loss is not finite: {parts}")
    return LossResult(float(total), parts, {"encoder": g_enc, "decoder": g_dec})


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    gamma: float = 1.0
    delta: float = 1.0
    kd_weight: float = 1.0
    replay_enabled: bool = True
    kd_enabled: bool = True
    recon: str = "l1"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if min(self.gamma, self.delta, self.kd_weight, self.learning_rate) < 0:
            raise ValueError("loss weights and learning rate must be non-negative")

    def loss_kwargs(self) -> dict:
        return {"gamma": self.gamma, "delta": self.delta, "kd_weight": self.kd_weight,
                "recon": self.recon}


@dataclass
class TrainResult:
    model: CadaModel | CvaeModel
    memory: EpisodicMemory | None
    teacher: FrozenTeacher
    epoch_losses: list[float] = field(default_factory=list)


def training_set(task: TaskSplit, dataset: FeatureDataset, memory: EpisodicMemory | None,
                 replay: bool) -> tuple[np.ndarray, np.ndarray]:
    """Current-task samples stacked with the memory contents when replay is on."""
    feats = dataset.features[task.train_indices]
    labels = dataset.labels[task.train_indices]
    if replay and memory is not None:
        snap = memory_snapshot(memory)
        if snap:
            feats = np.vstack([feats, np.stack([e.feature for e in snap])])
            labels = np.concatenate([labels, np.array([e.label for e in snap], dtype=np.int64)])
    return feats, labels


def train_task(model, task: TaskSplit, dataset: FeatureDataset, memory: EpisodicMemory | None,
               teacher: FrozenTeacher | None, config: TrainConfig, rng: np.random.Generator,
               memory_rng: np.random.Generator | None = None, trace: list | None = None) -> TrainResult:
    """Train ``model`` in place on one task, then offer the task's samples to memory.

    Weights are warm-started from whatever ``model`` holds. ``rng`` drives
    shuffling and latent noise; ``memory_rng`` is used only by reservoir
    sampling so that memory bookkeeping never perturbs training.
    """
    feats, labels = training_set(task, dataset, memory, config.replay_enabled)
    if feats.shape[0] == 0:
        raise DataError(f"task {task.task_id} has no training samples")
    attrs = dataset.attributes[labels]
    if not config.kd_enabled:
        teacher = None
    params = model.params()
    adam = AdamState.for_params(params, learning_rate=config.learning_rate, beta1=config.beta1,
                                beta2=config.beta2, epsilon=config.epsilon)
    n = feats.shape[0]
    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            sel = order[start:start + config.batch_size]
            noise = model.draw_noise(sel.size, rng)
            try:
                res = model.objective(feats[sel], attrs[sel], noise, teacher)
            except NumericError as exc:
                raise NumericError(f"task {task.task_id}, epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            adam_step(adam, params, model.flat_grads(res.grads))
            total += res.total
            batches += 1
        epoch_losses.append(total / batches)
        if trace is not None:
            trace.append(("epoch", task.task_id, epoch + 1, total / batches))
    if not all(np.isfinite(p).all() for p in params):
        raise NumericError(f"task {task.task_id}: parameters became non-finite")
    if memory is not None:
        for i in task.train_indices:
            label = int(dataset.labels[i])
            memory.offer(MemoryEntry(dataset.features[i], label, dataset.attributes[label],
                                     task.task_id), memory_rng)
    return TrainResult(model, memory, model.teacher(), epoch_losses)


def train_task_cada(model: CadaModel, task, dataset, memory, teacher, config, rng,
                    memory_rng=None, trace=None) -> TrainResult:
    if not isinstance(model, CadaModel):
        raise UsageError("train_task_cada needs a CadaModel")
    return train_task(model, task, dataset, memory, teacher, config, rng, memory_rng, trace)


def train_task_cvae(model: CvaeModel, task, dataset, memory, teacher, config, rng,
                    memory_rng=None, trace=None) -> TrainResult:
    if not isinstance(model, CvaeModel):
        raise UsageError("train_task_cvae needs a CvaeModel")
    return train_task(model, task, dataset, memory, teacher, config, rng, memory_rng, trace)


@dataclass(frozen=True)
class GenerationCounts:
    seen_per_class: int = 50
    unseen_per_class: int = 50


def _check_attr_rows(classes, attributes):
    for c in classes:
        if not 0 <= c < attributes.shape[0]:
            raise DataError(f"class {c} has no attribute row")


def generate_latents_cada(model: CadaModel, seen_features: np.ndarray, seen_labels: np.ndarray,
                          attribute_classes, attributes: np.ndarray, counts: GenerationCounts,
                          rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
    """Labelled latent samples for classifier training.

    Classes present in ``seen_labels`` are encoded from their features with the
    feature encoder (``seen_per_class`` draws, resampling rows with replacement);
    every class in ``attribute_classes`` gets ``unseen_per_class`` draws from the
    attribute encoder. ``rng=None`` returns the encoder means instead of samples.
    """
    attribute_classes = sorted(int(c) for c in attribute_classes)
    _check_attr_rows(attribute_classes, attributes)
    zs, ys = [], []
    seen_labels = np.asarray(seen_labels, dtype=np.int64)
    for c in np.unique(seen_labels):
        rows = seen_features[seen_labels == c]
        k = counts.seen_per_class
        if k <= 0:
            continue
        pick = rows[rng.integers(0, rows.shape[0], size=k)] if rng is not None \
            else rows[np.arange(k) % rows.shape[0]]
        zs.append(_sample(model.feature_encoder, pick, model.latent_dim, rng))
        ys.append(np.full(k, c, dtype=np.int64))
    k = counts.unseen_per_class
    if k > 0:
        for c in attribute_classes:
            rows = np.repeat(attributes[c][None, :], k, axis=0)
            zs.append(_sample(model.attribute_encoder, rows, model.latent_dim, rng))
            ys.append(np.full(k, c, dtype=np.int64))
    if not zs:
        return np.zeros((0, model.latent_dim)), np.zeros(0, dtype=np.int64)
    return np.vstack(zs), np.concatenate(ys)


def _sample(encoder: MlpNet, inputs: np.ndarray, L: int, rng):
    lat, _ = split_latent(encoder.forward(inputs))
    if rng is None:
        return lat.mu
    return reparameterize(lat, rng.standard_normal(lat.mu.shape))


def generate_features_cvae(model: CvaeModel, classes, attributes: np.ndarray, per_class: int,
                           rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic features from the decoder on ``z || a`` with ``z ~ N(0, I)`` (``z = 0`` if no rng)."""
    classes = sorted(int(c) for c in classes)
    _check_attr_rows(classes, attributes)
    if per_class <= 0 or not classes:
        return np.zeros((0, model.feature_dim)), np.zeros(0, dtype=np.int64)
    cond = np.repeat(attributes[classes], per_class, axis=0)
    z = rng.standard_normal((cond.shape[0], model.latent_dim)) if rng is not None \
        else np.zeros((cond.shape[0], model.latent_dim))
    feats = model.decoder.forward(np.concatenate([z, cond], axis=1))
    return feats, np.repeat(np.array(classes, dtype=np.int64), per_class)


def build_model(kind: str, d_x: int, d_a: int, latent_dim: int, rng: np.random.Generator,
                encoder_hidden=(64,), decoder_hidden=(64,), **loss):
    if kind == "cada":
        return CadaModel.build(d_x, d_a, latent_dim, rng, encoder_hidden, decoder_hidden, **loss)
    if kind == "cvae":
        return CvaeModel.build(d_x, d_a, latent_dim, rng, encoder_hidden, decoder_hidden, **loss)
    raise ValueError(f"unknown model kind {kind!r}")
