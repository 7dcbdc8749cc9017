"""Diagonal Gaussian mixtures with exact noised scores.

These act as ground-truth conditional distributions: ``AnalyticDenoiser``
returns the exact noise prediction ``-sigma_t * grad log p_t(x | c)`` so the
guidance algebra can be checked without any learned model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .diffusion import UNCONDITIONAL, NoiseSchedule
from .errors import (
    DimensionMismatch,
    IndefinitePrecision,
    OutOfRange,
    UnknownCondition,
    UnsupportedComposition,
)
from .geometry import ManipulationMode

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.broadcast_to(np.asarray(self.variance, dtype=float), mean.shape).copy()
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise ValueError("variances must be finite and > 0")
        if not np.isfinite(self.weight):
            raise ValueError("weight must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def precision(self):
        return 1.0 / self.variance


class GaussianMixture:
    """Weighted sum of diagonal Gaussians; weights are normalized on construction."""

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ValueError("mixture needs at least one component")
        d = components[0].mean.shape[0]
        if any(c.mean.shape[0] != d for c in components):
            raise DimensionMismatch("components differ in dimension")
        w = np.array([c.weight for c in components], dtype=float)
        if np.any(w <= 0):
            raise ValueError("component weights must be > 0")
        self.weights = w / w.sum()
        self.means = np.stack([c.mean for c in components])
        self.variances = np.stack([c.variance for c in components])

    @classmethod
    def gaussian(cls, mean, variance):
        return cls([GaussianComponent(1.0, mean, variance)])

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self):
        return [
            GaussianComponent(w, m, v)
            for w, m, v in zip(self.weights, self.means, self.variances)
        ]

    def __len__(self):
        return len(self.weights)

    def __repr__(self):
        return f"GaussianMixture(k={len(self)}, d={self.dim})"

    def mean(self):
        return self.weights @ self.means

    def covariance(self):
        mu = self.mean()
        cov = np.zeros((self.dim, self.dim))
        for w, m, v in zip(self.weights, self.means, self.variances):
            dm = m - mu
            cov += w * (np.diag(v) + np.outer(dm, dm))
        return cov

    def sample(self, n: int, rng: np.random.Generator):
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[k] + np.sqrt(self.variances[k]) * z

    def to_dict(self):
        return {
            "components": [
                {"weight": float(w), "mean": m.tolist(), "variance": v.tolist()}
                for w, m, v in zip(self.weights, self.means, self.variances)
            ]
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            GaussianComponent(c.get("weight", 1.0), c["mean"], c["variance"])
            for c in doc["components"]
        )


def noised_mixture(m: GaussianMixture, alpha_bar_t: float) -> GaussianMixture:
    """Distribution of ``sqrt(ab) x0 + sqrt(1-ab) eps`` for ``x0 ~ m``."""
    if not 0 < alpha_bar_t <= 1:
        raise OutOfRange(f"alpha_bar must be in (0, 1], got {alpha_bar_t}")
    out = GaussianMixture.__new__(GaussianMixture)
    out.weights = m.weights.copy()
    out.means = np.sqrt(alpha_bar_t) * m.means
    out.variances = alpha_bar_t * m.variances + (1.0 - alpha_bar_t)
    return out


def _component_logpdf(m: GaussianMixture, x):
    # (n, K): log w_k + log N(x; mu_k, diag var_k)
    diff = x[:, None, :] - m.means[None]
    quad = np.sum(diff * diff / m.variances[None], axis=-1)
    logdet = np.sum(np.log(m.variances), axis=-1)
    return np.log(m.weights)[None] - 0.5 * (quad + logdet[None] + m.dim * _LOG_2PI)


def _as_batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    if xb.shape[-1] != d:
        raise DimensionMismatch(f"point dimension {xb.shape[-1]} != mixture dimension {d}")
    return xb, single


def log_density(m: GaussianMixture, x):
    xb, single = _as_batch(x, m.dim)
    out = logsumexp(_component_logpdf(m, xb), axis=1)
    # deep-tail underflow saturates instead of returning -inf
    out = np.maximum(out, np.finfo(float).min / 2)
    return float(out[0]) if single else out


def score(m: GaussianMixture, x):
    """Exact ``grad_x log m(x)``."""
    xb, single = _as_batch(x, m.dim)
    resp = softmax(_component_logpdf(m, xb), axis=1)
    per_comp = (m.means[None] - xb[:, None, :]) / m.variances[None]
    out = np.einsum("nk,nkd->nd", resp, per_comp)
    return out[0] if single else out


@dataclass
class AnalyticWorld:
    prior: GaussianMixture
    conditionals: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, m in self.conditionals.items():
            if m.dim != self.prior.dim:
                raise DimensionMismatch(f"condition {name!r} has dimension {m.dim}")
            if name == UNCONDITIONAL:
                raise ValueError("the unconditional id is reserved for the prior")

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def conditions(self):
        return list(self.conditionals)

    def __getitem__(self, c) -> GaussianMixture:
        if c == UNCONDITIONAL:
            return self.prior
        try:
            return self.conditionals[c]
        except KeyError:
            raise UnknownCondition(f"unknown condition {c!r}") from None

    def __contains__(self, c):
        return c == UNCONDITIONAL or c in self.conditionals

    def to_dict(self):
        return {
            "prior": self.prior.to_dict(),
            "conditions": {k: v.to_dict() for k, v in self.conditionals.items()},
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            GaussianMixture.from_dict(doc["prior"]),
            {k: GaussianMixture.from_dict(v) for k, v in doc["conditions"].items()},
        )


def exact_epsilon(world: AnalyticWorld, sched: NoiseSchedule, x, t: int, c):
    if not 0 <= t <= sched.T:
        raise OutOfRange(f"timestep {t} outside [0, {sched.T}]")
    m = world[c]
    ab = sched.alpha_bar[t]
    return -np.sqrt(1.0 - ab) * score(noised_mixture(m, ab), x)


class AnalyticDenoiser:
    """Exact noise predictor for an analytic world (a ConditionedDenoiser)."""

    def __init__(self, world: AnalyticWorld, sched: NoiseSchedule):
        self.world = world
        self.sched = sched
        self.dim = world.dim

    def predict(self, x, t, c):
        return exact_epsilon(self.world, self.sched, x, int(t), c)


def product_gaussian(a: GaussianComponent, b: GaussianComponent, power: float = 1.0):
    """Precision-weighted fusion of ``a`` with ``b ** power``.

    ``power=-1`` divides by ``b`` (negated precision), which is how the
    Bayes quotients are realized.  The weight is left unnormalized.
    """
    if a.mean.shape != b.mean.shape:
        raise DimensionMismatch("components differ in dimension")
    prec = a.precision + power * b.precision
    if np.any(prec <= 0):
        raise IndefinitePrecision(f"fused precision not positive: {prec}")
    mean = (a.precision * a.mean + power * b.precision * b.mean) / prec
    weight = a.weight * (b.weight ** power)
    return GaussianComponent(weight, mean, 1.0 / prec)


def _single(m: GaussianMixture, name):
    if len(m) != 1:
        raise UnsupportedComposition(
            f"{name} has {len(m)} components; use composed_log_density on a grid instead"
        )
    return m.components[0]


def composed_target(world: AnalyticWorld, mode, src, tgt) -> GaussianMixture:
    """Bayes target of a manipulation for single-Gaussian worlds.

    Addition: ``p(x) * [p(x|src)/p(x)] * [p(x|tgt)/p(x)]``.
    Removal (``src`` is the joint condition): ``p(x) * p(x|src) / p(x|tgt)``.
    """
    mode = ManipulationMode(mode)
    prior = _single(world.prior, "prior")
    a = _single(world[src], repr(src))
    b = _single(world[tgt], repr(tgt))
    if mode is ManipulationMode.ADDITION:
        fused = product_gaussian(product_gaussian(a, b), prior, power=-1.0)
    else:
        fused = product_gaussian(product_gaussian(a, b, power=-1.0), prior)
    return GaussianMixture([GaussianComponent(1.0, fused.mean, fused.variance)])


def composed_log_density(world: AnalyticWorld, mode, src, tgt, x):
    """Unnormalized log density of the Bayes target; works for any mixtures."""
    mode = ManipulationMode(mode)
    lp0 = log_density(world.prior, x)
    ls = log_density(world[src], x)
    lt = log_density(world[tgt], x)
    if mode is ManipulationMode.ADDITION:
        return ls + lt - lp0
    return ls - lt + lp0


def demo_world() -> AnalyticWorld:
    """Default 2-D world: broad prior, two separated conditions and their joint."""
    prior = GaussianMixture.gaussian([0.0, 0.0], [4.0, 4.0])
    c1 = GaussianMixture.gaussian([-2.0, 0.0], [0.5, 0.5])
    c2 = GaussianMixture.gaussian([2.0, 0.0], [0.5, 0.5])
    world = AnalyticWorld(prior, {"c1": c1, "c2": c2})
    joint = composed_target(world, ManipulationMode.ADDITION, "c1", "c2")
    world.conditionals["joint"] = joint
    return world
