"""Small epsilon-prediction MLP with hand-written backprop and Adam.

Input features are ``[x, sinusoidal time embedding, condition one-hot]``; the
one-hot has one extra slot reserved for the unconditional id, trained by
classifier-free condition dropout.  Everything runs in float64 so finite
differences can check the gradients tightly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .diffusion import UNCONDITIONAL, NoiseSchedule, forward_noise
from .errors import DataExhausted, DivergedLoss, InvalidDim, InvalidRange, UnknownCondition

CHECKPOINT_FORMAT = "gtf-mlp-v1"


def time_embedding(t, dim: int, T: int):
    """Interleaved ``[sin(t w_k), cos(t w_k)]`` with ``w_k = 10000 ** (-k / (dim/2))``."""
    if dim % 2:
        raise InvalidDim(f"time embedding dim must be even, got {dim}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > T):
        raise InvalidRange(f"timestep outside [0, {T}]")
    half = dim // 2
    freqs = np.exp(-np.arange(half) * math.log(10000.0) / half)
    ang = t[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


@dataclass(frozen=True)
class MlpSpec:
    dim: int = 2
    hidden: tuple = (128, 128)
    activation: str = "silu"
    time_embed_dim: int = 32
    condition_count: int = 3

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise InvalidRange("need at least one hidden layer with width >= 1")
        if self.activation not in ("relu", "silu"):
            raise InvalidRange(f"unknown activation {self.activation!r}")
        if self.time_embed_dim % 2:
            raise InvalidDim("time_embed_dim must be even")

    @property
    def input_dim(self) -> int:
        # +1: reserved unconditional slot
        return self.dim + self.time_embed_dim + self.condition_count + 1


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z * expit(z)


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(float)
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass
class Batch:
    """A fixed set of noised training examples."""

    x_t: np.ndarray
    t: np.ndarray
    c: np.ndarray  # condition slot indices
    eps: np.ndarray

    def __len__(self):
        return len(self.t)

    def take(self, idx):
        return Batch(self.x_t[idx], self.t[idx], self.c[idx], self.eps[idx])


class Mlp:
    def __init__(self, spec: MlpSpec, conditions, T: int, params):
        if len(conditions) != spec.condition_count:
            raise InvalidRange("condition names do not match condition_count")
        self.spec = spec
        self.conditions = list(conditions)
        self.T = int(T)
        self.params = params
        self._index = {c: i for i, c in enumerate(self.conditions)}

    @classmethod
    def init(cls, spec: MlpSpec, conditions, T: int, seed: int = 0, zero_output: bool = True):
        rng = np.random.default_rng(seed)
        widths = [spec.input_dim, *spec.hidden, spec.dim]
        params = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            if last and zero_output:
                W = np.zeros((a, b))
            else:
                W = rng.standard_normal((a, b)) * math.sqrt(2.0 / a)
            params += [W, np.zeros(b)]
        return cls(spec, conditions, T, params)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def param_names(self):
        return [f"{p}{i}" for i in range(self.n_layers) for p in ("W", "b")]

    def condition_index(self, c) -> int:
        if c == UNCONDITIONAL:
            return self.spec.condition_count
        try:
            return self._index[c]
        except KeyError:
            raise UnknownCondition(f"unknown condition {c!r}") from None

    def features(self, x, t, c_idx):
        n = x.shape[0]
        temb = time_embedding(np.broadcast_to(t, (n,)), self.spec.time_embed_dim, self.T)
        onehot = np.zeros((n, self.spec.condition_count + 1))
        onehot[np.arange(n), np.broadcast_to(c_idx, (n,))] = 1.0
        return np.concatenate([x, temb, onehot], axis=1)

    def _forward(self, h):
        cache = [h]
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1:
                cache.append(z)
                h = _act(z, self.spec.activation)
                cache.append(h)
            else:
                h = z
        return h, cache

    def forward(self, x, t, c):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None] if single else x
        if xb.shape[1] != self.dim:
            raise InvalidDim(f"input dimension {xb.shape[1]} != {self.dim}")
        out, _ = self._forward(self.features(xb, t, self.condition_index(c)))
        return out[0] if single else out

    predict = forward

    def loss(self, batch: Batch) -> float:
        """Mean over examples of the squared error summed over dimensions."""
        out, _ = self._forward(self.features(batch.x_t, batch.t, batch.c))
        r = out - batch.eps
        return float(np.sum(r * r) / len(batch))

    def loss_and_grads(self, batch: Batch):
        out, cache = self._forward(self.features(batch.x_t, batch.t, batch.c))
        r = out - batch.eps
        n = len(batch)
        loss = float(np.sum(r * r) / n)
        grads = [None] * len(self.params)
        g = 2.0 * r / n
        for i in reversed(range(self.n_layers)):
            h_in = cache[0] if i == 0 else cache[2 * i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * _act_grad(cache[2 * i - 1], self.spec.activation)
        return loss, grads

    def copy(self):
        return Mlp(self.spec, self.conditions, self.T, [p.copy() for p in self.params])


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    n_per_condition: int = 20000
    dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidRange("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise InvalidRange("batch_size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise InvalidRange("dropout must be in [0, 1)")


@dataclass
class TrainResult:
    net: Mlp
    losses: list = field(default_factory=list)  # losses[0] is before any update


def _dataset_points(net: Mlp, data, cfg: TrainConfig, rng):
    xs, cs = [], []
    for name in net.conditions:
        if hasattr(data, "conditionals"):
            pts = data[name].sample(cfg.n_per_condition, rng)
        else:
            pts = np.asarray(data[name], dtype=float)
        if len(pts) < cfg.batch_size:
            raise DataExhausted(f"condition {name!r} has {len(pts)} samples < batch size")
        xs.append(pts)
        cs.append(np.full(len(pts), net.condition_index(name)))
    return np.concatenate(xs), np.concatenate(cs)


def make_training_set(net: Mlp, data, sched: NoiseSchedule, cfg: TrainConfig) -> Batch:
    """Draw ``(x0, c)`` pairs, timesteps, noise and condition dropout once, up front."""
    rng = np.random.default_rng(cfg.seed)
    x0, c = _dataset_points(net, data, cfg, rng)
    n = len(x0)
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    drop = rng.random(n) < cfg.dropout
    c = np.where(drop, net.spec.condition_count, c)
    return Batch(forward_noise(x0, t, eps, sched), t, c, eps)


def evaluate_loss(net: Mlp, batch: Batch, chunk: int = 4096) -> float:
    total = 0.0
    for lo in range(0, len(batch), chunk):
        part = batch.take(slice(lo, lo + chunk))
        total += net.loss(part) * len(part)
    return total / len(batch)


def train(net: Mlp, data, sched: NoiseSchedule, cfg: TrainConfig) -> TrainResult:
    """Adam on the epsilon-matching loss.

    ``data`` is an analytic world (sampled ``n_per_condition`` times per
    condition) or a mapping from condition name to an ``(n, d)`` array.
    The reported loss of each epoch is measured over the whole training set
    after that epoch's updates, so a zero learning rate gives a flat history.
    """
    net = net.copy()
    data_set = make_training_set(net, data, sched, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    m = [np.zeros_like(p) for p in net.params]
    v = [np.zeros_like(p) for p in net.params]
    step = 0
    losses = [evaluate_loss(net, data_set)]
    n = len(data_set)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            batch = data_set.take(order[lo:lo + cfg.batch_size])
            _, grads = net.loss_and_grads(batch)
            step += 1
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            for p, g, mi, vi in zip(net.params, grads, m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (mi / bc1) / (np.sqrt(vi / bc2) + cfg.adam_eps)
        loss = evaluate_loss(net, data_set)
        if not math.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} after {len(losses)} epochs")
        losses.append(loss)
    return TrainResult(net, losses)


def gradient_check(net: Mlp, batch: Batch, n_params: int = 64, h: float = 1e-5,
                   seed: int = 0, select: str = "all", grad_fn=None) -> float:
    """Max relative error between backprop and central differences.

    Parameters are drawn evenly across the selected arrays (``"all"``,
    ``"weight"`` or ``"bias"``).  ``grad_fn(net, batch)`` overrides the
    analytic gradient, which lets tests feed in a corrupted one.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    grads = (grad_fn or (lambda nt, b: nt.loss_and_grads(b)[1]))(net, batch)
    names = net.param_names()
    arrays = [i for i, nm in enumerate(names)
              if select == "all" or (select == "bias") == nm.startswith("b")]
    rng = np.random.default_rng(seed)
    per = max(1, -(-n_params // len(arrays)))
    worst = 0.0
    for i in arrays:
        p = net.params[i]
        for flat in rng.choice(p.size, size=min(per, p.size), replace=False):
            idx = np.unravel_index(flat, p.shape)
            old = p[idx]
            p[idx] = old + h
            lp = net.loss(batch)
            p[idx] = old - h
            lm = net.loss(batch)
            p[idx] = old
            numeric = (lp - lm) / (2.0 * h)
            analytic = grads[i][idx]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


class MlpDenoiser:
    """Adapter exposing a trained net as a ConditionedDenoiser."""

    def __init__(self, net: Mlp):
        self.net = net
        self.dim = net.dim

    def predict(self, x, t, c):
        return self.net.forward(x, t, c)


# -------------------------------------------------------------- checkpoints


def save_checkpoint(net: Mlp, path):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "spec": {**asdict(net.spec), "hidden": list(net.spec.hidden)},
        "conditions": net.conditions,
        "T": net.T,
        "arrays": [
            {"name": name, "shape": list(p.shape), "data": p.ravel(order="C").tolist()}
            for name, p in zip(net.param_names(), net.params)
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> Mlp:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {doc.get('format')!r}")
    spec = MlpSpec(**doc["spec"])
    params = [np.asarray(a["data"], dtype=float).reshape(a["shape"]) for a in doc["arrays"]]
    net = Mlp(spec, doc["conditions"], doc["T"], params)
    expected = Mlp.init(spec, doc["conditions"], doc["T"]).params
    if [p.shape for p in params] != [p.shape for p in expected]:
        raise ValueError("checkpoint arrays do not match the declared spec")
    return net
