"""Dense MLPs with hand-written backprop, Gaussian latents, Adam and gradient checks.

Matrices are plain ``float64`` numpy arrays laid out row-major, one sample
per row. Weights are stored as ``(fan_in, fan_out)`` so a layer computes
``x @ W + b``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
ACTIVATIONS = ("relu", "linear")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} do not agree"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class MlpNet:
    """Fully connected network with relu/linear layers."""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ShapeError("an MlpNet needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(
                    f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )
        self.layers = list(layers)

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator,
             hidden_activation: str = "relu", output_activation: str = "linear") -> "MlpNet":
        """Glorot-uniform weights, zero biases; ``sizes`` lists every layer width."""
        if len(sizes) < 2:
            raise ShapeError("need at least input and output sizes")
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            s = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-s, s, size=(fan_in, fan_out))
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "MlpNet":
        return copy.deepcopy(self)

    def freeze(self) -> "MlpNet":
        """Mark every parameter array read-only (in place) and return self."""
        for p in self.params():
            p.flags.writeable = False
        return self

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input with {self.input_dim} columns, got shape {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def forward_cached(self, x: np.ndarray):
        """Forward pass that also returns the per-layer inputs and pre-activations."""
        h = self._check_input(x)
        cache = []
        for layer in self.layers:
            pre = h @ layer.weight + layer.bias
            cache.append((h, pre))
            h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
        return h, cache

    def backward(self, cache, upstream: np.ndarray):
        """Returns ``(param_grads, input_grad)``; param_grads follows ``params()`` order."""
        g = np.asarray(upstream, dtype=np.float64)
        last_pre = cache[-1][1]
        if g.shape != last_pre.shape:
            raise ShapeError(f"upstream gradient {g.shape} does not match output {last_pre.shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            h_in, pre = cache[i]
            if layer.activation == "relu":
                g = g * (pre > 0.0)
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.weight.T
        return grads, g


@dataclass
class MlpGrads:
    params: list[np.ndarray]
    input: np.ndarray


def mlp_forward(net: MlpNet, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def mlp_backward(net: MlpNet, x: np.ndarray, upstream_grad: np.ndarray) -> MlpGrads:
    """Gradients of ``sum(upstream_grad * net(x))`` with respect to parameters and input."""
    _, cache = net.forward_cached(x)
    grads, gin = net.backward(cache, upstream_grad)
    return MlpGrads(grads, gin)


@dataclass
class GaussianLatent:
    """Diagonal Gaussian, batched: ``mu`` and ``log_var`` are ``(B, L)`` (or ``(L,)``)."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_var = np.clip(np.asarray(self.log_var, dtype=np.float64), LOG_VAR_MIN, LOG_VAR_MAX)
        if self.mu.shape != self.log_var.shape:
            raise ShapeError(f"mu {self.mu.shape} and log_var {self.log_var.shape} differ")

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


def split_latent(encoded: np.ndarray) -> tuple[GaussianLatent, np.ndarray]:
    """Split an encoder output ``mu || log_var``.

    Also returns the mask of log-variance entries that were not clamped; the
    gradient through a clamped entry is zero.
    """
    L = encoded.shape[-1] // 2
    raw_lv = encoded[..., L:]
    mask = (raw_lv > LOG_VAR_MIN) & (raw_lv < LOG_VAR_MAX)
    return GaussianLatent(encoded[..., :L], raw_lv), mask


def reparameterize(latent: GaussianLatent, noise: np.ndarray) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != latent.mu.shape:
        raise ShapeError(f"noise shape {noise.shape} != latent shape {latent.mu.shape}")
    return latent.mu + latent.std * noise


def kl_standard_normal(latent: GaussianLatent) -> np.ndarray | float:
    """KL(q || N(0, I)) summed over latent dims; one value per row for batched latents."""
    lv = latent.log_var
    kl = -0.5 * np.sum(1.0 + lv - latent.mu ** 2 - np.exp(lv), axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One Adam update, applied to ``params`` in place. Returns ``(params, state)``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("params, grads and Adam accumulators differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {np.shape(g)}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: list[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_diff_check(loss_fn: Callable, params: Sequence[np.ndarray], tolerance: float = 1e-3,
                      step: float = 1e-5, analytic: Sequence[np.ndarray] | None = None,
                      floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must return ``(loss, grads)`` evaluated at the current
    contents of ``params`` (perturbed in place here). ``analytic`` overrides
    the gradients it returns, which is how negative controls are built.
    Relative error is ``|a - n| / max(|a|, |n|, floor)`` per entry.
    """
    loss0, grads0 = loss_fn()
    if not np.isfinite(loss0):
        raise NumericError(f"loss is not finite: {loss0}")
    analytic = grads0 if analytic is None else analytic
    per_param = []
    for p, g in zip(params, analytic):
        worst = 0.0
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("finite_diff_check needs contiguous parameter arrays")
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()[0]
            flat[i] = orig - step
            down = loss_fn()[0]
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss became non-finite during finite differencing")
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(numeric), floor)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
        per_param.append(worst)
    return GradCheckReport(max(per_param, default=0.0), per_param, tolerance)
